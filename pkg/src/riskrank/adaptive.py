"""Risk-guided adaptive fine-tuning of a linear-softmax head.

Phase 1 pre-trains the head on the train split with standard cross-entropy
(best-validation-accuracy checkpoint). Phase 2 pseudo-labels test instances
with the minimum-risk class from the trained risk model and fine-tunes the
head with a temperature-scaled softmax, updating the temperature jointly by
gradient descent; the final epoch's head is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FusedFeatureMatrix
from .risk_model import (
    RiskModelParams,
    RiskScoreTable,
    fit_platt_for_workload,
    score_workload,
)
from .rules import ActivationMatrix
from .workload import Workload, fmt_float

LAMBDA_INIT = 2.0
LAMBDA_MIN = 0.05
LOG_FLOOR = 1e-12


@dataclass
class HeadClassifier:
    weights: np.ndarray  # (dim, C)
    bias: np.ndarray  # (C,)
    trained: bool = False

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def copy(self) -> "HeadClassifier":
        return HeadClassifier(self.weights.copy(), self.bias.copy(), self.trained)


@dataclass
class TemperatureState:
    lam: float = LAMBDA_INIT


@dataclass
class AdaptConfig:
    pretrain_epochs: int = 200
    adapt_epochs: int = 20
    learning_rate: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.adapt_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


def init_head(dim: int, num_classes: int, seed: int) -> HeadClassifier:
    rng = np.random.Generator(np.random.PCG64(seed))
    return HeadClassifier(rng.normal(0.0, 0.01, size=(dim, num_classes)),
                          np.zeros(num_classes))


def temperature_softmax(logits, lam: float) -> np.ndarray:
    """Softmax of logits / lam, stable via max subtraction."""
    if lam <= 0:
        raise ValueError("temperature must be > 0")
    z = np.asarray(logits, dtype=np.float64) / lam
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def adaptive_loss(probs: np.ndarray, labels_onehot: np.ndarray) -> float:
    """Mean NLL at the labeled class; log floored to avoid -inf."""
    picked = np.sum(probs * labels_onehot, axis=1)
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))


def _onehot(labels: np.ndarray, C: int) -> np.ndarray:
    out = np.zeros((len(labels), C))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def pretrain_head(w: Workload, fused: FusedFeatureMatrix,
                  cfg: AdaptConfig) -> HeadClassifier:
    """Full-batch gradient descent on softmax cross-entropy over the train
    split; returns the epoch checkpoint with the best validation accuracy."""
    train = [r for r in w.by_split("train") if r.has_true_label]
    if not train:
        raise ValueError("pretrain_head requires labeled train instances")
    y = np.array([r.true_label for r in train], dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("train split is single-class; head would be degenerate")
    C = w.num_classes
    X = fused.matrix([r.id for r in train])
    valid = [r for r in w.by_split("valid") if r.has_true_label]
    Xv = fused.matrix([r.id for r in valid]) if valid else None
    yv = np.array([r.true_label for r in valid], dtype=np.int64) if valid else None

    head = init_head(fused.dim, C, cfg.seed)
    onehot = _onehot(y, C)
    n = len(train)
    best = head.copy()
    best_acc = -1.0
    for _ in range(cfg.pretrain_epochs):
        probs = temperature_softmax(head.logits(X), 1.0)
        g = (probs - onehot) / n
        head.weights -= cfg.learning_rate * (X.T @ g)
        head.bias -= cfg.learning_rate * g.sum(axis=0)
        if Xv is not None:
            acc = float(np.mean(head.predict(Xv) == yv))
        else:
            acc = float(np.mean(head.predict(X) == y))
        if acc > best_acc:
            best_acc = acc
            best = head.copy()
    if cfg.pretrain_epochs == 0:
        best = head
    best.trained = True
    return best


def risk_pseudo_labels(scores: RiskScoreTable, test_ids: list[str]) -> dict[str, int]:
    """Per instance: argmin over classes of gamma, ties to the smaller class."""
    return {iid: int(np.argmin(scores.gamma[scores._row[iid]])) for iid in test_ids}


def head_logits_by_id(head: HeadClassifier, fused: FusedFeatureMatrix,
                      ids: list[str]) -> dict[str, np.ndarray]:
    X = fused.matrix(ids)
    logits = head.logits(X)
    return {iid: logits[i] for i, iid in enumerate(ids)}


def adapt(head: HeadClassifier, risk_params: RiskModelParams, w: Workload,
          fused: FusedFeatureMatrix, activations: ActivationMatrix,
          cfg: AdaptConfig, log_path: str | None = None,
          refit_platt: bool = True) -> HeadClassifier:
    """Risk-guided fine-tuning on the test split (Phase 2); returns the
    final-epoch head. Rule activations stay fixed; the classifier-probability
    risk feature is refreshed from the current head every epoch."""
    if not head.trained:
        raise ValueError("adapt requires a pretrained head")
    test = w.by_split("test")
    test_ids = [r.id for r in test]
    if not test_ids:
        import warnings

        warnings.warn("empty test split: head returned unchanged")
        return head.copy()
    C = w.num_classes
    X = fused.matrix(test_ids)
    true_known = all(r.has_true_label for r in test)
    y_true = (np.array([r.true_label for r in test], dtype=np.int64)
              if true_known else None)

    head = head.copy()
    risk_params = risk_params.copy()
    if refit_platt:
        valid_ids = [r.id for r in w.by_split("valid")]
        vl = head_logits_by_id(head, fused, valid_ids)
        _fit_platt_on_logits(risk_params, w, valid_ids, vl)
    lam = LAMBDA_INIT
    n = len(test_ids)
    log_rows = []
    for epoch in range(1, cfg.adapt_epochs + 1):
        logits_by_id = head_logits_by_id(head, fused, test_ids)
        scores = score_workload(w, activations, risk_params, ids=test_ids,
                                logits_by_id=logits_by_id)
        pseudo = risk_pseudo_labels(scores, test_ids)
        y_pseudo = np.array([pseudo[i] for i in test_ids], dtype=np.int64)
        onehot = _onehot(y_pseudo, C)
        logits = head.logits(X)
        probs = temperature_softmax(logits, lam)
        loss = adaptive_loss(probs, onehot)
        g_t = (probs - onehot) / n  # gradient wrt logits/lam
        g_logits = g_t / lam
        g_lam = float(-np.sum(g_t * logits) / lam**2)
        head.weights -= cfg.learning_rate * (X.T @ g_logits)
        head.bias -= cfg.learning_rate * g_logits.sum(axis=0)
        lam = max(lam - cfg.learning_rate * g_lam, LAMBDA_MIN)
        agree = float(np.mean(np.argmax(logits, axis=1) == y_pseudo))
        acc = float(np.mean(head.predict(X) == y_true)) if true_known else float("nan")
        log_rows.append((epoch, lam, loss, agree, acc))
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tlambda\tloss\tpseudo_label_agreement"
                     "\ttest_accuracy_if_labels_available\n")
            for row in log_rows:
                fh.write("%d\t%s\t%s\t%s\t%s\n" % (
                    row[0], fmt_float(row[1]), fmt_float(row[2]),
                    fmt_float(row[3]), fmt_float(row[4]),
                ))
    return head


def _fit_platt_on_logits(params: RiskModelParams, w: Workload,
                         ids: list[str], logits_by_id: dict[str, np.ndarray]) -> None:
    from .risk_model import platt_fit

    labels = np.array([w.instance(i).true_label for i in ids], dtype=np.int64)
    scores = np.stack([logits_by_id[i] for i in ids])
    platt = np.empty((w.num_classes, 2))
    for k in range(w.num_classes):
        platt[k] = platt_fit(scores[:, k], (labels == k).astype(np.float64))
    params.platt = platt


# re-export used by the CLI evaluate stage
__all__ = [
    "AdaptConfig", "HeadClassifier", "TemperatureState", "adapt",
    "adaptive_loss", "head_logits_by_id", "init_head", "pretrain_head",
    "risk_pseudo_labels", "temperature_softmax", "fit_platt_for_workload",
]
