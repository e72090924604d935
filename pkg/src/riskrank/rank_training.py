"""Pairwise learning-to-rank training of the risk model.

Batches pair one mislabeled with one correctly labeled validation instance
(at their predicted classes); the RankNet-style cross-entropy over the
logistic of the risk difference is minimized by plain gradient descent on
the attention parameters and the rule variances. Training differentiates
through a smooth surrogate of the truncated-normal VaR; evaluation and
checkpoint selection use the exact quantile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .evaluation import auroc
from .risk_model import (
    SIGMA_MIN,
    SOFT_CLAMP_SLOPE,
    RiskModelParams,
    RiskScoreTable,
    build_pair_features,
    forward_gamma,
    soft_clamp,
)
from .rules import ActivationMatrix
from .workload import Workload, fmt_float


@dataclass
class RankPair:
    left_id: str
    left_class: int
    right_id: str
    right_class: int
    left_risk_label: int  # 1 iff the left instance is mispredicted
    right_risk_label: int


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_iterations: int = 200
    batch_pairs: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


def _softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x + np.log1p(np.exp(-x)), np.log1p(np.exp(x)))


def pairwise_posterior(gamma_i, gamma_j):
    """Logistic of the risk difference, stable for large |difference|."""
    d = np.asarray(gamma_i, dtype=np.float64) - np.asarray(gamma_j, dtype=np.float64)
    e = np.exp(-np.abs(np.clip(d, -700, 700)))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def target_probability(g_i, g_j):
    return 0.5 * (1.0 + np.asarray(g_i, dtype=np.float64)
                  - np.asarray(g_j, dtype=np.float64))


def ranking_loss(gamma_i, gamma_j, p_bar) -> float:
    """Sum of pairwise cross-entropies, log-sigmoid form (no log(0))."""
    d = np.asarray(gamma_i, dtype=np.float64) - np.asarray(gamma_j, dtype=np.float64)
    p_bar = np.asarray(p_bar, dtype=np.float64)
    # -p_bar*log(sigmoid(d)) - (1-p_bar)*log(1-sigmoid(d))
    return float(np.sum(p_bar * _softplus(-d) + (1.0 - p_bar) * _softplus(d)))


def vote_rank(scores: RiskScoreTable) -> list[tuple[str, int]]:
    """Instances ordered by pairwise per-class win counts.

    Ties broken by descending total risk, then ascending id. Returns
    (id, win_count) pairs.
    """
    wins = kernels.vote_wins(scores.gamma)
    totals = scores.gamma.sum(axis=1)
    order = sorted(
        range(len(scores.ids)),
        key=lambda i: (-wins[i], -totals[i], scores.ids[i]),
    )
    return [(scores.ids[i], int(wins[i])) for i in order]


def backward_gamma(grad_gamma: np.ndarray, cache: dict,
                   params: RiskModelParams):
    """Reverse pass of forward_gamma (surrogate mode) back to the trainables.

    Returns gradients (dW, db, dvars) for attention weights, bias, and rule
    variances; rule means and class weights are frozen.
    """
    X = cache["X"]
    omega = cache["omega"]
    mu_feat = cache["mu_feat"]
    p = cache["p"]
    u = cache["u"]
    zq = cache["zq"]
    var_adj = cache["var_adj"]

    s = soft_clamp(u)
    du = -SOFT_CLAMP_SLOPE * s * (1.0 - s) * grad_gamma  # (n, C)
    dp = du
    dvar_adj = du * zq / (2.0 * np.sqrt(var_adj))
    dvar_raw = dvar_adj * cache["var_adj_mask"]
    dvar_raw = dvar_raw * cache["var_raw_mask"]
    # softmax over classes: dshifted = p * (dp - sum(dp * p))
    inner = np.sum(dp * p, axis=1, keepdims=True)
    dmu_raw = p * (dp - inner)  # (n, C)

    domega = (dmu_raw[:, :, None] * X * mu_feat
              + dvar_raw[:, :, None] * X * 2.0 * omega * params.rule_vars)
    dvars = np.einsum("nc,ncm->m", dvar_raw, X * omega**2)
    # masked softmax over features: de = omega * (domega - sum(domega * omega))
    inner_f = np.sum(domega * omega, axis=2, keepdims=True)
    de = omega * (domega - inner_f)  # (n, C, m)
    dW = np.einsum("nck,ncm->km", de, X)
    db = de.sum(axis=(0, 1))
    return dW, db, dvars


def risk_labels(w: Workload, split: str) -> dict[str, int]:
    out = {}
    for rec in w.by_split(split):
        if not rec.has_true_label:
            raise ValueError("instance %s has no true label" % rec.id)
        out[rec.id] = int(rec.predicted_label != rec.true_label)
    return out


def _valid_auroc(w: Workload, activations: ActivationMatrix,
                 params: RiskModelParams, ids: list[str],
                 flags: np.ndarray) -> float:
    from .risk_model import score_workload

    table = score_workload(w, activations, params, ids=ids)
    scores = np.array([table.predicted_score(i) for i in ids])
    return auroc(scores, flags)


def train_risk_model(w: Workload, activations: ActivationMatrix,
                     params: RiskModelParams, cfg: TrainConfig,
                     log_path: str | None = None) -> RiskModelParams:
    """Gradient-descent training on the valid split; returns the checkpoint
    with the best validation AUROC (checked every 10 iterations)."""
    labels = risk_labels(w, "valid")
    valid_ids = [r.id for r in w.by_split("valid")]
    mis = [i for i in valid_ids if labels[i] == 1]
    cor = [i for i in valid_ids if labels[i] == 0]
    if not mis:
        raise ValueError("risk training requires mispredictions in validation split")
    if not cor:
        raise ValueError("risk training requires correct predictions in validation split")
    flags = np.array([labels[i] for i in valid_ids], dtype=bool)

    params = params.copy()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    X_all, mu_all = build_pair_features(activations, w, params, valid_ids)
    pos = {iid: i for i, iid in enumerate(valid_ids)}
    pred = np.array([w.instance(i).predicted_label for i in valid_ids])

    best = params.copy()
    best_auroc = _valid_auroc(w, activations, params, valid_ids, flags)
    log_rows = [(0, float("nan"), best_auroc)]

    for it in range(1, cfg.max_iterations + 1):
        li = rng.integers(len(mis), size=cfg.batch_pairs)
        rj = rng.integers(len(cor), size=cfg.batch_pairs)
        left = np.array([pos[mis[i]] for i in li])
        right = np.array([pos[cor[j]] for j in rj])
        batch_rows = np.unique(np.concatenate([left, right]))
        row_of = {r: k for k, r in enumerate(batch_rows)}
        Xb = X_all[batch_rows]
        mub = mu_all[batch_rows]
        dropout = (rng.random(Xb.shape) >= params.dropout_rate).astype(np.float64)
        dropout[:, :, -1] = 1.0  # the probability feature is never dropped
        gamma, cache = forward_gamma(Xb, mub, params, surrogate=True,
                                     dropout_mask=dropout)
        gi = gamma[[row_of[r] for r in left], pred[left]]
        gj = gamma[[row_of[r] for r in right], pred[right]]
        # targets: left mislabeled (1), right correct (0) -> p_bar = 1
        p_bar = np.ones(cfg.batch_pairs)
        loss = ranking_loss(gi, gj, p_bar)
        dL_dd = pairwise_posterior(gi, gj) - p_bar
        grad_gamma = np.zeros_like(gamma)
        np.add.at(grad_gamma, ([row_of[r] for r in left], pred[left]), dL_dd)
        np.add.at(grad_gamma, ([row_of[r] for r in right], pred[right]), -dL_dd)
        dW, db, dvars = backward_gamma(grad_gamma, cache, params)
        params.attention_w -= cfg.learning_rate * dW
        params.attention_b -= cfg.learning_rate * db
        params.rule_vars = np.maximum(params.rule_vars - cfg.learning_rate * dvars,
                                      SIGMA_MIN)
        for arr in (params.attention_w, params.attention_b, params.rule_vars):
            if not np.isfinite(arr).all():
                raise FloatingPointError("non-finite parameter at iteration %d" % it)
        if it % 10 == 0 or it == cfg.max_iterations:
            cur = _valid_auroc(w, activations, params, valid_ids, flags)
            log_rows.append((it, loss, cur))
            if cur > best_auroc:
                best_auroc = cur
                best = params.copy()

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("iteration\tloss\tvalid_auroc\n")
            for it, loss, au in log_rows:
                fh.write("%d\t%s\t%s\n" % (it, fmt_float(loss), fmt_float(au)))
    return best
