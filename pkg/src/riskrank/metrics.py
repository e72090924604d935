"""Category-similarity risk metrics over fused features: CCD and KNN counts.

CCD is 1 - cosine similarity to a class centroid. KNN counts how many of an
instance's k most cosine-similar TRAIN neighbors carry a given true label
(self excluded for train queries). Defaults k=5 and k=7.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .features import FusedFeatureMatrix
from .workload import Workload, fmt_float

METRIC_IDS = ("CCD", "KNN5", "KNN7")
KNN_KS = {"KNN5": 5, "KNN7": 7}


@dataclass
class ClassCentroids:
    centroids: np.ndarray  # (C, dim)
    counts: np.ndarray  # (C,)


class MetricTable:
    """Total map (instance, class, metric_id) -> value, arrays keyed by metric."""

    def __init__(self, ids: list[str], num_classes: int, tables: dict[str, np.ndarray]):
        self.ids = list(ids)
        self.num_classes = num_classes
        self.tables = tables
        self._row = {iid: i for i, iid in enumerate(self.ids)}

    def value(self, iid: str, cls: int, metric_id: str) -> float:
        return float(self.tables[metric_id][self._row[iid], cls])

    def row_index(self, iid: str) -> int:
        return self._row[iid]

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("id\tclass\t" + "\t".join(METRIC_IDS) + "\n")
            for iid in self.ids:
                r = self._row[iid]
                for c in range(self.num_classes):
                    vals = "\t".join(fmt_float(self.tables[m][r, c]) for m in METRIC_IDS)
                    fh.write("%s\t%d\t%s\n" % (iid, c, vals))


def compute_centroids(fused: FusedFeatureMatrix, w: Workload) -> ClassCentroids:
    """Per-class mean of train-split fused rows; every class must be populated."""
    C = w.num_classes
    dim = fused.dim
    sums = np.zeros((C, dim))
    counts = np.zeros(C, dtype=np.int64)
    for rec in w.by_split("train"):
        if not rec.has_true_label:
            continue
        sums[rec.true_label] += fused.rows[rec.id]
        counts[rec.true_label] += 1
    for c in range(C):
        if counts[c] == 0:
            raise ValueError("class %d has no train instances" % c)
    return ClassCentroids(sums / counts[:, None], counts)


def ccd(v, centroid) -> float:
    """1 - cosine similarity; both vectors must be nonzero."""
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(centroid, dtype=np.float64)
    nv = np.linalg.norm(v)
    nc = np.linalg.norm(c)
    if nv == 0.0 or nc == 0.0:
        raise ValueError("ccd undefined for zero-norm vector")
    return float(1.0 - np.dot(v, c) / (nv * nc))


def _train_candidates(fused: FusedFeatureMatrix, w: Workload):
    """Train rows usable as KNN candidates: labeled, nonzero norm, normalized."""
    recs = [r for r in w.by_split("train") if r.has_true_label]
    ids = [r.id for r in recs]
    mat = fused.matrix(ids)
    norms = np.linalg.norm(mat, axis=1)
    keep = norms > 0.0
    if not keep.all():
        recs = [r for r, k in zip(recs, keep) if k]
        ids = [i for i, k in zip(ids, keep) if k]
        mat = mat[keep]
        norms = norms[keep]
    if not recs:
        raise ValueError("no usable KNN candidates in train split")
    labels = np.array([r.true_label for r in recs], dtype=np.int64)
    # tie-break rank: lexicographic id order
    order_rank = np.empty(len(ids), dtype=np.int64)
    order_rank[np.argsort(np.array(ids))] = np.arange(len(ids))
    return ids, mat / norms[:, None], labels, order_rank


def knn_count(v, k: int, cls: int, fused: FusedFeatureMatrix, w: Workload,
              exclude_id: str | None = None) -> int:
    """Count of class `cls` among the k most cosine-similar train rows."""
    ids, norm_mat, labels, order_rank = _train_candidates(fused, w)
    v = np.asarray(v, dtype=np.float64)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("knn_count undefined for zero-norm query")
    sims = (norm_mat @ (v / nv))[None, :]
    exclude = np.array([ids.index(exclude_id) if exclude_id in ids else -1],
                       dtype=np.int64)
    counts = kernels.knn_class_counts(sims, labels, order_rank, exclude, k,
                                      w.num_classes)
    return int(counts[0, cls])


def build_metric_table(fused: FusedFeatureMatrix, w: Workload,
                       centroids: ClassCentroids) -> MetricTable:
    """Complete CCD/KNN5/KNN7 table over all instances and classes."""
    ids = [r.id for r in w.instances]
    C = w.num_classes
    mat = fused.matrix(ids)
    norms = np.linalg.norm(mat, axis=1)
    if (norms == 0.0).any():
        bad = ids[int(np.argmax(norms == 0.0))]
        raise ValueError("zero-norm fused vector for id %s" % bad)
    cent_norms = np.linalg.norm(centroids.centroids, axis=1)
    if (cent_norms == 0.0).any():
        raise ValueError("zero-norm class centroid")
    norm_rows = mat / norms[:, None]
    norm_cents = centroids.centroids / cent_norms[:, None]
    ccd_table = 1.0 - norm_rows @ norm_cents.T

    cand_ids, cand_mat, cand_labels, order_rank = _train_candidates(fused, w)
    cand_pos = {iid: i for i, iid in enumerate(cand_ids)}
    sims = norm_rows @ cand_mat.T
    exclude = np.array([cand_pos.get(iid, -1) for iid in ids], dtype=np.int64)
    tables: dict[str, np.ndarray] = {"CCD": ccd_table}
    for metric_id, k in KNN_KS.items():
        tables[metric_id] = kernels.knn_class_counts(
            sims, cand_labels, order_rank, exclude, k, C
        ).astype(np.float64)
    return MetricTable(ids, C, tables)
