"""Seeded synthetic workloads and the brute-force oracles for acceptance tests.

All randomness flows through a self-contained 64-bit linear congruential
generator (Knuth MMIX constants: a = 6364136223846793005,
c = 1442695040888963407, modulus 2^64) so that a given seed reproduces the
workload bit-for-bit regardless of platform or numpy version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .workload import (
    EmbeddingSet,
    InstanceRecord,
    Workload,
    write_workload,
)

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
LCG_MASK = (1 << 64) - 1


_LCG_BLOCK = 4096
_A_POWS = np.empty(_LCG_BLOCK, dtype=np.uint64)
_C_SUMS = np.empty(_LCG_BLOCK, dtype=np.uint64)
_ap, _cs = 1, 0
for _i in range(_LCG_BLOCK):
    _ap = (_ap * LCG_A) & LCG_MASK
    _cs = (_cs * LCG_A + LCG_C) & LCG_MASK
    _A_POWS[_i] = _ap
    _C_SUMS[_i] = _cs
del _ap, _cs, _i


class Lcg:
    """Deterministic LCG stream; uniforms use the top 53 bits.

    Raw 64-bit words are produced in vectorized blocks via the identity
    s_{t+i} = a^i * s_t + c * (a^{i-1} + ... + 1) (mod 2^64), which yields
    exactly the scalar recurrence's stream.
    """

    def __init__(self, seed: int):
        self.state = np.uint64((seed ^ 0x9E3779B97F4A7C15) & LCG_MASK)
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0
        self._raw(4)  # warm up past low-entropy seeds

    def _refill(self) -> None:
        with np.errstate(over="ignore"):
            self._buf = _A_POWS * self.state + _C_SUMS
        self.state = self._buf[-1]
        self._pos = 0

    def _raw(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        filled = 0
        while filled < n:
            if self._pos >= len(self._buf):
                self._refill()
            take = min(n - filled, len(self._buf) - self._pos)
            out[filled : filled + take] = self._buf[self._pos : self._pos + take]
            self._pos += take
            filled += take
        return out

    def uniforms(self, n: int) -> np.ndarray:
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) / float(1 << 53)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def randint(self, n: int) -> int:
        return int(self._raw(1)[0] % np.uint64(n))

    def normals(self, n: int) -> np.ndarray:
        """Box-Muller on consecutive uniform pairs; no spare carried across calls."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = np.maximum(u[0::2], 2.0**-53)
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n]

    def normal(self) -> float:
        return float(self.normals(1)[0])


@dataclass
class SynthConfig:
    num_classes: int = 7
    dim: int = 64
    backbones: int = 4
    n_train: int = 2000
    n_valid: int = 300
    n_test: int = 500
    class_separation: float = 2.0
    shift_magnitude: float = 1.0
    label_noise: float = 0.05
    logit_scale: float = 8.0
    seed: int = 42

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < self.num_classes:
            raise ValueError("dim must be >= num_classes (simplex placement)")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")
        if min(self.n_train, self.n_valid) < 1 or self.n_test < 0:
            raise ValueError("split sizes must be positive (test may be empty)")


def generate_workload(cfg: SynthConfig) -> Workload:
    """Gaussian-mixture embeddings with controllable separation and test shift.

    Class means sit at separation-scaled axis vertices (rotated per pseudo
    backbone by a coordinate offset); test rows are displaced along a fixed
    seeded direction. Predictions come from an overconfident nearest-centroid
    labeler so that mispredictions exist in every split.
    """
    rng = Lcg(cfg.seed)
    C, d, B = cfg.num_classes, cfg.dim, cfg.backbones
    splits = [("train", cfg.n_train), ("valid", cfg.n_valid), ("test", cfg.n_test)]

    records: list[InstanceRecord] = []
    planned: list[tuple[str, str, int, bool]] = []  # id, split, class, shifted
    counter = 0
    for split, n in splits:
        for i in range(n):
            cls = counter % C  # round-robin guarantees class coverage
            iid = "s%06d" % counter
            counter += 1
            true = cls
            if cfg.label_noise > 0.0 and split in ("train", "valid"):
                if rng.uniform() < cfg.label_noise:
                    true = (cls + 1 + rng.randint(C - 1)) % C
            planned.append((iid, split, cls, split == "test"))
            records.append(InstanceRecord(iid, split, true))

    shift_dirs = []
    for b in range(B):
        v = rng.normals(d)
        norm = float(np.linalg.norm(v))
        shift_dirs.append(v / norm if norm > 0 else v)

    embeddings = []
    for b in range(B):
        rows: dict[str, np.ndarray] = {}
        for (iid, split, cls, shifted) in planned:
            mean = np.zeros(d)
            mean[(cls + b) % d] = cfg.class_separation
            vec = mean + rng.normals(d)
            if shifted:
                vec = vec + cfg.shift_magnitude * shift_dirs[b]
            rows[iid] = vec
        embeddings.append(
            EmbeddingSet("backbone_%d" % b, d, {k: list(v) for k, v in rows.items()})
        )

    # overconfident nearest-centroid labeler over concatenated embeddings
    full = {
        iid: np.concatenate([np.asarray(emb.rows[iid]) for emb in embeddings])
        for (iid, _, _, _) in planned
    }
    cent = np.zeros((C, d * B))
    cnt = np.zeros(C)
    for rec in records:
        if rec.split == "train":
            cent[rec.true_label] += full[rec.id]
            cnt[rec.true_label] += 1
    cent /= np.maximum(cnt, 1.0)[:, None]
    cent_norm = cent / np.maximum(np.linalg.norm(cent, axis=1, keepdims=True), 1e-12)
    for rec in records:
        v = full[rec.id]
        nv = max(float(np.linalg.norm(v)), 1e-12)
        sims = cent_norm @ (v / nv)
        rec.logits = [float(cfg.logit_scale * s) for s in sims]
        rec.predicted_label = int(np.argmax(sims))
    return Workload(records, embeddings, C)


def generate_workload_files(cfg: SynthConfig, out_dir: str) -> str:
    """Generate and serialize a workload; returns the manifest path."""
    return write_workload(generate_workload(cfg), out_dir)


# --- brute-force oracles (kept free of the library's numeric kernels) ---

def mc_var_oracle(mu: float, var: float, theta: float, samples: int = 10**6,
                  seed: int = 0) -> float:
    """Monte-Carlo estimate of gamma = 1 - (1-theta)-quantile of the
    truncated normal, by rejection sampling (inverse-CDF fallback when the
    acceptance rate collapses)."""
    if samples < 10**5:
        raise ValueError("mc_var_oracle needs >= 1e5 samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    s = math.sqrt(var)
    kept: list[np.ndarray] = []
    total_kept = 0
    total_drawn = 0
    while total_kept < samples:
        chunk = rng.standard_normal(samples) * s + mu
        chunk = chunk[(chunk >= 0.0) & (chunk <= 1.0)]
        total_drawn += samples
        if chunk.size:
            kept.append(chunk)
            total_kept += chunk.size
        if total_drawn >= samples and total_kept / total_drawn < 1e-4:
            from scipy.special import ndtr, ndtri

            fa = ndtr((0.0 - mu) / s)
            fb = ndtr((1.0 - mu) / s)
            u = fa + rng.random(samples) * (fb - fa)
            u = np.clip(u, 1e-300, 1.0 - 1e-16)
            kept = [mu + s * ndtri(u)]
            total_kept = samples
            break
    draws = np.concatenate(kept)[:samples]
    q = float(np.quantile(draws, 1.0 - theta))
    return 1.0 - min(max(q, 0.0), 1.0)


def pairwise_rank_oracle(ids: list[str], gamma: np.ndarray) -> list[tuple[str, int]]:
    """Exhaustive double loop over instances and classes; same tie rules as
    vote_rank (descending wins, then descending total risk, then id)."""
    n, C = gamma.shape
    wins = [0] * n
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for c in range(C):
                if gamma[i, c] > gamma[j, c]:
                    wins[i] += 1
    totals = [float(sum(gamma[i])) for i in range(n)]
    order = sorted(range(n), key=lambda i: (-wins[i], -totals[i], ids[i]))
    return [(ids[i], wins[i]) for i in order]


def mi_oracle(x_discrete, y_discrete) -> float:
    """Direct summation of the empirical joint MI in nats."""
    n = len(x_discrete)
    joint: dict[tuple, int] = {}
    px: dict = {}
    py: dict = {}
    for a, b in zip(x_discrete, y_discrete):
        joint[(a, b)] = joint.get((a, b), 0) + 1
        px[a] = px.get(a, 0) + 1
        py[b] = py.get(b, 0) + 1
    mi = 0.0
    for (a, b), c in joint.items():
        pxy = c / n
        mi += pxy * math.log(pxy / ((px[a] / n) * (py[b] / n)))
    return mi


def f_score_oracle(values, labels) -> float:
    """Term-by-term evaluation of the between/within variance ratio."""
    values = list(map(float, values))
    n = len(values)
    overall = sum(values) / n
    classes = sorted(set(labels))
    num = 0.0
    den = 0.0
    for c in classes:
        sub = [v for v, l in zip(values, labels) if l == c]
        m = sum(sub) / len(sub)
        num += (overall - m) ** 2
        den += sum((v - m) ** 2 for v in sub) / len(sub)
    if den == 0.0:
        return float("inf")
    return num / den


def auroc_oracle(scores, positives) -> float:
    """O(n^2) pairwise comparison count, ties at 0.5."""
    pos = [s for s, f in zip(scores, positives) if f]
    neg = [s for s, f in zip(scores, positives) if not f]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def rule_measure_oracle(rule, values, is_match) -> tuple[float, float]:
    """(coverage, purity) of a rule by direct counting."""
    n = len(values)
    sat = 0
    hit = 0
    for v, m in zip(values, is_match):
        ok = v <= rule.threshold if rule.comparator == "<=" else v > rule.threshold
        if ok:
            sat += 1
            if (rule.consequent == "M") == bool(m):
                hit += 1
    if sat == 0:
        return 0.0, 0.0
    return sat / n, hit / sat
