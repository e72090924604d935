"""Feature scoring (mutual information, F-score), top-k selection, and fusion.

Scoring uses the train split only; fusion covers every instance so that
downstream risk metrics can be computed for validation and test rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .workload import Workload

LARGE_F_SCORE = 1e12


@dataclass
class FeatureScore:
    backbone_name: str
    feature_index: int
    criterion: str  # "MI" or "FS"
    score: float


@dataclass
class SelectionConfig:
    top_k: int = 200
    mi_bins: int = 10

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.mi_bins < 2:
            raise ValueError("mi_bins must be >= 2")


@dataclass
class FusedFeatureMatrix:
    column_names: list[tuple[str, str, int]]  # (backbone, criterion, feature_index)
    rows: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return len(self.column_names)

    def matrix(self, ids: list[str]) -> np.ndarray:
        return np.stack([self.rows[i] for i in ids]) if ids else np.zeros((0, self.dim))


def _equal_frequency_bins(values: np.ndarray, bins: int) -> np.ndarray:
    """Assign each value to an equal-frequency bin; equal values share a bin."""
    distinct = np.unique(values)
    bins = min(bins, len(distinct))
    if bins <= 1:
        return np.zeros(len(values), dtype=np.int64)
    qs = np.quantile(values, np.arange(1, bins) / bins)
    edges = np.unique(qs)
    return np.searchsorted(edges, values, side="right")


def mutual_information(values, labels, bins: int = 10) -> float:
    """MI in nats between the equal-frequency-binned feature and the label.

    Empirical joint frequencies; 0*log(0) terms contribute 0. If the label
    has a single class (or the feature is constant) the MI is 0.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(values) < 2:
        raise ValueError("mutual_information needs >= 2 instances")
    binned = _equal_frequency_bins(values, bins)
    n = len(values)
    xs, xi = np.unique(binned, return_inverse=True)
    ys, yi = np.unique(labels, return_inverse=True)
    joint = np.zeros((len(xs), len(ys)))
    np.add.at(joint, (xi, yi), 1.0)
    joint /= n
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


def f_score(values, labels) -> float:
    """Between-class squared deviation over summed within-class variance.

    Population variances (divisor n_j). A zero denominator (every class
    constant) yields the LARGE_F_SCORE sentinel.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("f_score needs >= 2 classes present")
    overall = values.mean()
    num = 0.0
    den = 0.0
    for c in classes:
        sub = values[labels == c]
        num += (overall - sub.mean()) ** 2
        den += sub.var()
    if den == 0.0:
        return LARGE_F_SCORE
    return num / den


def select_top_k(scores: list[FeatureScore], k: int) -> list[FeatureScore]:
    """k highest-scoring entries, ties broken toward the lower feature index."""
    if not scores:
        raise ValueError("select_top_k: empty score list")
    ordered = sorted(scores, key=lambda s: (-s.score, s.feature_index))
    return ordered[:k]


def score_features(w: Workload, cfg: SelectionConfig) -> list[FeatureScore]:
    """Score every embedding dimension of every backbone on the train split."""
    train = [r for r in w.by_split("train") if r.has_true_label]
    if not train:
        raise ValueError("no labeled train instances to score features on")
    labels = np.array([r.true_label for r in train], dtype=np.int64)
    out: list[FeatureScore] = []
    for emb in w.embeddings:
        mat = np.stack([emb.rows[r.id] for r in train])
        for j in range(emb.dim):
            col = mat[:, j]
            out.append(
                FeatureScore(
                    emb.backbone_name, j, "MI", mutual_information(col, labels, cfg.mi_bins)
                )
            )
            out.append(FeatureScore(emb.backbone_name, j, "FS", f_score(col, labels)))
    return out


def select_features(
    scores: list[FeatureScore], cfg: SelectionConfig
) -> dict[tuple[str, str], list[int]]:
    """Per (backbone, criterion) top-k selected feature indices, ascending."""
    grouped: dict[tuple[str, str], list[FeatureScore]] = {}
    for s in scores:
        grouped.setdefault((s.backbone_name, s.criterion), []).append(s)
    return {
        key: sorted(s.feature_index for s in select_top_k(group, cfg.top_k))
        for key, group in grouped.items()
    }


def fuse_features(
    w: Workload, selections: dict[tuple[str, str], list[int]]
) -> FusedFeatureMatrix:
    """Concatenate selected columns, manifest backbone order, MI before FS."""
    column_names: list[tuple[str, str, int]] = []
    plan: list[tuple[np.ndarray, list[int]]] = []
    for emb in w.embeddings:
        for criterion in ("MI", "FS"):
            indices = selections.get((emb.backbone_name, criterion), [])
            for idx in indices:
                if not 0 <= idx < emb.dim:
                    raise ValueError(
                        "selected index %d out of range for backbone %s (dim %d)"
                        % (idx, emb.backbone_name, emb.dim)
                    )
                column_names.append((emb.backbone_name, criterion, idx))
            if indices:
                plan.append((emb, indices))
    rows: dict[str, np.ndarray] = {}
    for rec in w.instances:
        parts = []
        for emb, indices in plan:
            src = emb.rows[rec.id]
            parts.append(np.array([src[i] for i in indices], dtype=np.float64))
        rows[rec.id] = (
            np.concatenate(parts) if parts else np.zeros(0, dtype=np.float64)
        )
    return FusedFeatureMatrix(column_names, rows)


def write_scores(scores: list[FeatureScore], path: str) -> None:
    from .workload import fmt_float

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("backbone\tcriterion\tfeature_index\tscore\n")
        for s in scores:
            fh.write(
                "%s\t%s\t%d\t%s\n"
                % (s.backbone_name, s.criterion, s.feature_index, fmt_float(s.score))
            )
