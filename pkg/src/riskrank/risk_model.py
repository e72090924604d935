"""Attention-based risk model.

For each (instance, class) pair: rule activations are attention-weighted,
per-rule label distributions are aggregated into a truncated-normal
(mu, var), per-instance class bias is neutralized (softmax over shifted
means, variance shrink), and the mislabeling risk gamma is 1 minus the
(1 - theta)-quantile of the truncated distribution.

The last feature column is the classifier's Platt-calibrated probability
for the pair's class: always active, with a per-pair mean and one shared
learnable variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .rules import ActivationMatrix
from .workload import Workload, fmt_float

VAR_CLAMP = 1e-8
SIGMA_MIN = 1e-6
SOFT_CLAMP_SLOPE = 4.0  # logistic slope giving unit derivative at u = 0.5


@dataclass
class RiskModelParams:
    attention_w: np.ndarray  # (m, m)
    attention_b: np.ndarray  # (m,)
    rule_means: np.ndarray  # (m,), last entry is a per-pair placeholder
    rule_vars: np.ndarray  # (m,), learnable, clamped >= SIGMA_MIN
    class_weights: np.ndarray  # (C,)
    alpha: float = 0.1
    var_level: float = 0.95
    platt: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (C, 2)
    dropout_rate: float = 0.5

    @property
    def num_features(self) -> int:
        return len(self.rule_means)

    def copy(self) -> "RiskModelParams":
        return RiskModelParams(
            self.attention_w.copy(), self.attention_b.copy(),
            self.rule_means.copy(), self.rule_vars.copy(),
            self.class_weights.copy(), self.alpha, self.var_level,
            self.platt.copy(), self.dropout_rate,
        )


class RiskScoreTable:
    """Per (instance, class) risk scores plus predicted-class lookups."""

    def __init__(self, ids: list[str], gamma: np.ndarray, predicted: np.ndarray):
        self.ids = list(ids)
        self.gamma = gamma  # (n, C)
        self.predicted = predicted  # (n,)
        self._row = {iid: i for i, iid in enumerate(self.ids)}

    @property
    def num_classes(self) -> int:
        return self.gamma.shape[1]

    def score(self, iid: str, cls: int) -> float:
        return float(self.gamma[self._row[iid], cls])

    def predicted_score(self, iid: str) -> float:
        i = self._row[iid]
        return float(self.gamma[i, self.predicted[i]])

    def predicted_items(self):
        for i, iid in enumerate(self.ids):
            yield iid, int(self.predicted[i]), float(self.gamma[i, self.predicted[i]])


def init_params(
    mu_f: np.ndarray,
    var_f: np.ndarray,
    class_counts: np.ndarray,
    alpha: float = 0.1,
    var_level: float = 0.95,
    dropout_rate: float = 0.5,
    prob_feature_var: float = 0.01,
) -> RiskModelParams:
    """Zero-initialized attention (uniform weights over active rules).

    mu_f/var_f are the m estimated rule distributions; one extra slot is
    appended for the classifier-probability feature.
    """
    m = len(mu_f) + 1
    C = len(class_counts)
    means = np.concatenate([np.asarray(mu_f, dtype=np.float64), [0.0]])
    variances = np.concatenate([np.asarray(var_f, dtype=np.float64),
                                [prob_feature_var]])
    weights = np.asarray(class_counts, dtype=np.float64)
    weights = weights / weights.sum()
    return RiskModelParams(
        attention_w=np.zeros((m, m)),
        attention_b=np.zeros(m),
        rule_means=means,
        rule_vars=np.maximum(variances, SIGMA_MIN),
        class_weights=weights,
        alpha=alpha,
        var_level=var_level,
        platt=np.stack([np.full(C, -1.0), np.zeros(C)], axis=1),
        dropout_rate=dropout_rate,
    )


def attention_weights(x: np.ndarray, params: RiskModelParams,
                      dropout_mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax over active rule positions; inactive positions are exactly 0.

    `dropout_mask` (same shape as x, 1 = keep) is applied to the active set
    during training; if it would empty the set, it is ignored for this pair.
    """
    x = np.asarray(x, dtype=np.float64)
    active = x > 0
    if dropout_mask is not None:
        kept = active & (np.asarray(dropout_mask) > 0)
        if kept.any():
            active = kept
    if not active.any():
        raise ValueError("attention_weights requires at least one active rule")
    e = params.attention_w @ x + params.attention_b
    e_act = e[active]
    z = np.exp(e_act - e_act.max())
    omega = np.zeros_like(x)
    omega[active] = z / z.sum()
    return omega


def aggregate_distribution(x: np.ndarray, omega: np.ndarray,
                           mu_f: np.ndarray, var_f: np.ndarray) -> tuple[float, float]:
    """Activation-masked weighted sum of rule means/variances."""
    x = np.asarray(x, dtype=np.float64)
    mu = float(np.sum(x * omega * mu_f))
    var = float(np.sum(x * omega**2 * var_f))
    return mu, max(var, VAR_CLAMP)


def neutralize_class_bias(raw_mu: np.ndarray, raw_var: np.ndarray,
                          params: RiskModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Shift means by class weights then softmax; shrink variances by alpha*w."""
    shifted = np.asarray(raw_mu, dtype=np.float64) - params.class_weights
    z = np.exp(shifted - shifted.max())
    mu = z / z.sum()
    var = np.maximum(np.asarray(raw_var) - params.alpha * params.class_weights,
                     VAR_CLAMP)
    return mu, var


def platt_apply(score, A: float, B: float):
    """P = 1 / (1 + exp(A*score + B)), numerically stable."""
    u = np.clip(A * np.asarray(score, dtype=np.float64) + B, -700.0, 700.0)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = np.exp(-u[pos]) / (1.0 + np.exp(-u[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(u[~pos]))
    return out if out.ndim else float(out)


def _platt_nll(scores, y, A, B):
    u = np.clip(A * scores + B, -700.0, 700.0)
    # P = sigmoid(-u); NLL = sum y*log(1+e^u) + (1-y)*(u + log(1+e^-u)) stable form
    log1p_eu = np.where(u > 0, u + np.log1p(np.exp(-u)), np.log1p(np.exp(u)))
    return float(np.sum(y * log1p_eu + (1.0 - y) * (log1p_eu - u)))


def platt_fit(scores, labels_pos, max_iter: int = 200,
              grad_tol: float = 1e-8) -> tuple[float, float]:
    """Fit (A, B) minimizing one-vs-rest NLL by damped Newton from (-1, 0)."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels_pos, dtype=np.float64)
    if y.sum() == 0 or y.sum() == len(y):
        return -1.0, 0.0
    A, B = -1.0, 0.0
    nll = _platt_nll(scores, y, A, B)
    for _ in range(max_iter):
        p = platt_apply(scores, A, B)  # P(positive)
        # with P = sigmoid(-u), dP/du = -P(1-P), so dNLL/du = y - P
        g_u = y - p
        gA = float(np.sum(g_u * scores))
        gB = float(np.sum(g_u))
        gnorm = np.hypot(gA, gB)
        if gnorm <= grad_tol:
            break
        wts = p * (1.0 - p)
        hAA = float(np.sum(wts * scores * scores)) + 1e-12
        hAB = float(np.sum(wts * scores))
        hBB = float(np.sum(wts)) + 1e-12
        det = hAA * hBB - hAB * hAB
        if det > 1e-300:
            dA = (hBB * gA - hAB * gB) / det
            dB = (hAA * gB - hAB * gA) / det
        else:
            dA, dB = gA, gB
        step = 1.0
        improved = False
        for _ in range(30):
            nA, nB = A - step * dA, B - step * dB
            n_nll = _platt_nll(scores, y, nA, nB)
            if n_nll < nll:
                A, B, nll = nA, nB, n_nll
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return A, B


def fit_platt_for_workload(w: Workload, params: RiskModelParams,
                           split: str = "valid") -> None:
    """Fit per-class (A_k, B_k) on the split's logits, one-vs-rest."""
    recs = [r for r in w.by_split(split) if r.has_true_label]
    if not recs:
        raise ValueError("no labeled instances in split %s for Platt fit" % split)
    scores = np.array([r.logits for r in recs], dtype=np.float64)
    labels = np.array([r.true_label for r in recs], dtype=np.int64)
    platt = np.empty((w.num_classes, 2))
    for k in range(w.num_classes):
        platt[k] = platt_fit(scores[:, k], (labels == k).astype(np.float64))
    params.platt = platt


def _sign_check(theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise ValueError("VaR level must be in (0, 1)")


def truncated_quantile(mu, var, theta):
    """(1 - theta)-quantile of Normal(mu, var) truncated to [0, 1], vectorized."""
    _sign_check(float(theta))
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    s = np.sqrt(np.maximum(var, 0.0))
    s = np.maximum(s, 1e-300)
    fa = ndtr((0.0 - mu) / s)
    fb = ndtr((1.0 - mu) / s)
    mass = fb - fa
    p = fa + (1.0 - theta) * mass
    p = np.clip(p, 1e-300, 1.0 - 1e-16)
    q = mu + s * ndtri(p)
    q = np.clip(q, 0.0, 1.0)
    # degenerate truncation: essentially no mass inside [0, 1]
    degenerate = mass <= 1e-300
    q = np.where(degenerate, np.where(mu < 0.5, 0.0, 1.0), q)
    return q


def value_at_risk(mu: float, var: float, theta: float) -> float:
    """Mislabeling risk gamma = 1 - truncated-normal quantile."""
    if var <= 0:
        raise ValueError("value_at_risk requires var > 0")
    return float(1.0 - truncated_quantile(mu, var, theta))


def soft_clamp(u):
    """Scaled logistic squashing of u into (0, 1); slope 1 at u = 0.5."""
    z = SOFT_CLAMP_SLOPE * (np.asarray(u, dtype=np.float64) - 0.5)
    z = np.clip(z, -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(-z))


def forward_gamma(X: np.ndarray, mu_feat: np.ndarray, params: RiskModelParams,
                  surrogate: bool = False,
                  dropout_mask: np.ndarray | None = None):
    """Vectorized scoring of n instances x C classes x m features.

    X: (n, C, m) activations (last column always 1); mu_feat: (n, C, m)
    feature means (rule means broadcast, per-pair calibrated probability in
    the last column). Returns (gamma (n, C), cache) where cache holds the
    intermediates needed for backprop.
    """
    n, C, m = X.shape
    active = X > 0
    if dropout_mask is not None:
        kept = active & (dropout_mask > 0)
        # never empty the active set for a pair
        fallback = ~kept.any(axis=2, keepdims=True)
        active = np.where(fallback, active, kept)
    e = np.einsum("ncm,km->nck", X, params.attention_w) + params.attention_b
    e_masked = np.where(active, e, -np.inf)
    e_max = e_masked.max(axis=2, keepdims=True)
    expo = np.where(active, np.exp(e_masked - e_max), 0.0)
    denom = expo.sum(axis=2, keepdims=True)
    omega = expo / denom
    mu_raw = np.sum(X * omega * mu_feat, axis=2)  # (n, C)
    var_raw_sum = np.sum(X * omega**2 * params.rule_vars, axis=2)
    var_raw = np.maximum(var_raw_sum, VAR_CLAMP)
    shifted = mu_raw - params.class_weights
    sh_max = shifted.max(axis=1, keepdims=True)
    sz = np.exp(shifted - sh_max)
    p = sz / sz.sum(axis=1, keepdims=True)  # (n, C)
    var_adj_raw = var_raw - params.alpha * params.class_weights
    var_adj = np.maximum(var_adj_raw, VAR_CLAMP)
    theta = params.var_level
    if surrogate:
        zq = ndtri(1.0 - theta)
        u = p + zq * np.sqrt(var_adj)
        gamma = 1.0 - soft_clamp(u)
    else:
        gamma = 1.0 - truncated_quantile(p, var_adj, theta)
    cache = {
        "X": X, "active": active, "omega": omega, "mu_feat": mu_feat,
        "mu_raw": mu_raw, "var_raw": var_raw, "p": p,
        "var_raw_mask": var_raw_sum > VAR_CLAMP,
        "var_adj_mask": var_adj_raw > VAR_CLAMP,
        "var_adj": var_adj,
    }
    if surrogate:
        cache["u"] = u
        cache["zq"] = zq
    return gamma, cache


def build_pair_features(activations: ActivationMatrix, w: Workload,
                        params: RiskModelParams, ids: list[str],
                        logits_by_id: dict[str, np.ndarray] | None = None):
    """Assemble (X, mu_feat) tensors for `ids` from rule activations plus the
    always-active calibrated-probability feature."""
    C = w.num_classes
    m_rules = len(activations.rules)
    m = m_rules + 1
    pair_pos = {pair: i for i, pair in enumerate(activations.pairs)}
    n = len(ids)
    X = np.zeros((n, C, m))
    mu_feat = np.broadcast_to(params.rule_means, (n, C, m)).copy()
    for i, iid in enumerate(ids):
        rec = w.instance(iid)
        logits = (logits_by_id[iid] if logits_by_id is not None
                  else np.asarray(rec.logits, dtype=np.float64))
        cal = np.array([
            platt_apply(float(logits[c]), params.platt[c, 0], params.platt[c, 1])
            for c in range(C)
        ])
        for c in range(C):
            X[i, c, :m_rules] = activations.data[pair_pos[(iid, c)]]
            X[i, c, m_rules] = 1.0
            mu_feat[i, c, m_rules] = cal[c]
    return X, mu_feat


def score_workload(w: Workload, activations: ActivationMatrix,
                   params: RiskModelParams, ids: list[str] | None = None,
                   logits_by_id: dict[str, np.ndarray] | None = None
                   ) -> RiskScoreTable:
    """Eval-mode risk scores for the given instances (default: all)."""
    if ids is None:
        ids = [r.id for r in w.instances]
    X, mu_feat = build_pair_features(activations, w, params, ids, logits_by_id)
    gamma, _ = forward_gamma(X, mu_feat, params, surrogate=False)
    predicted = np.array([w.instance(i).predicted_label for i in ids], dtype=np.int64)
    return RiskScoreTable(ids, gamma, predicted)


# --- parameter serialization (TSV sections) ---

def write_params(params: RiskModelParams, path: str) -> None:
    def row(vals):
        return "\t".join(fmt_float(v) for v in vals)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[scalars]\n")
        fh.write("alpha\t%s\n" % fmt_float(params.alpha))
        fh.write("var_level\t%s\n" % fmt_float(params.var_level))
        fh.write("dropout_rate\t%s\n" % fmt_float(params.dropout_rate))
        fh.write("[attention_w]\n")
        for r in params.attention_w:
            fh.write(row(r) + "\n")
        fh.write("[attention_b]\n")
        fh.write(row(params.attention_b) + "\n")
        fh.write("[rule_means]\n")
        fh.write(row(params.rule_means) + "\n")
        fh.write("[rule_vars]\n")
        fh.write(row(params.rule_vars) + "\n")
        fh.write("[class_weights]\n")
        fh.write(row(params.class_weights) + "\n")
        fh.write("[platt]\n")
        for r in params.platt:
            fh.write(row(r) + "\n")


def read_params(path: str) -> RiskModelParams:
    sections: dict[str, list[list[str]]] = {}
    current = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
            else:
                if current is None:
                    raise ValueError("%s: content before first section" % path)
                sections[current].append(line.split("\t"))
    scalars = {r[0]: float(r[1]) for r in sections["scalars"]}
    return RiskModelParams(
        attention_w=np.array(sections["attention_w"], dtype=np.float64),
        attention_b=np.array(sections["attention_b"][0], dtype=np.float64),
        rule_means=np.array(sections["rule_means"][0], dtype=np.float64),
        rule_vars=np.array(sections["rule_vars"][0], dtype=np.float64),
        class_weights=np.array(sections["class_weights"][0], dtype=np.float64),
        alpha=scalars["alpha"],
        var_level=scalars["var_level"],
        platt=np.array(sections["platt"], dtype=np.float64),
        dropout_rate=scalars["dropout_rate"],
    )
