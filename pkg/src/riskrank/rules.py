"""Match/Unmatch mapping table and one-sided threshold rule induction.

A rule is a single (metric, comparator, threshold) condition with an M or U
consequent. Rules are grown greedily per (metric, consequent) stream:
candidate thresholds are midpoints between consecutive distinct values, the
purest sufficiently-covering candidate is emitted, its satisfied rows are
removed, and the stream recurses on the remainder. Stored coverage/purity
are always re-measured on the full induction table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import METRIC_IDS, MetricTable
from .workload import Workload, fmt_float

SIGMA_FLOOR = 1e-4
COMPARATORS = ("<=", ">")


@dataclass
class MUPairTable:
    ids: list[str]  # one entry per row (instance repeated C times)
    classes: np.ndarray  # (n_rows,)
    is_match: np.ndarray  # (n_rows,) bool
    values: dict[str, np.ndarray]  # metric id -> (n_rows,)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class RiskRule:
    metric_id: str
    comparator: str  # "<=" or ">"
    threshold: float
    consequent: str  # "M" or "U"
    coverage: float
    purity: float

    def satisfies(self, values: np.ndarray) -> np.ndarray:
        if self.comparator == "<=":
            return values <= self.threshold
        return values > self.threshold

    def __str__(self) -> str:
        return "%s %s %s -> %s" % (
            self.metric_id, self.comparator, fmt_float(self.threshold), self.consequent
        )


@dataclass
class ActivationMatrix:
    pairs: list[tuple[str, int]]  # (instance id, class)
    rules: list[RiskRule]
    data: np.ndarray  # (n_pairs, n_rules) uint8

    def drop_inactive(self) -> "ActivationMatrix":
        """Drop rule columns that never activate on this pair domain."""
        if self.data.shape[1] == 0:
            return self
        keep = self.data.any(axis=0)
        return ActivationMatrix(
            self.pairs,
            [r for r, k in zip(self.rules, keep) if k],
            self.data[:, keep],
        )


def build_mu_table(w: Workload, metrics: MetricTable, split: str) -> MUPairTable:
    """One row per (instance, class); M iff the class is the true label."""
    recs = w.by_split(split)
    C = w.num_classes
    ids: list[str] = []
    classes = np.empty(len(recs) * C, dtype=np.int64)
    is_match = np.zeros(len(recs) * C, dtype=bool)
    rows = np.empty(len(recs), dtype=np.int64)
    for i, rec in enumerate(recs):
        if not rec.has_true_label:
            raise ValueError("instance %s in split %s has no true label" % (rec.id, split))
        rows[i] = metrics.row_index(rec.id)
        for c in range(C):
            ids.append(rec.id)
            classes[i * C + c] = c
            is_match[i * C + c] = c == rec.true_label
    values = {
        m: metrics.tables[m][rows].reshape(-1) for m in METRIC_IDS
    }
    return MUPairTable(ids, classes, is_match, values)


def _measure(rule_vals: np.ndarray, is_match: np.ndarray, comparator: str,
             threshold: float, consequent: str) -> tuple[float, float, int]:
    sat = rule_vals <= threshold if comparator == "<=" else rule_vals > threshold
    n_sat = int(sat.sum())
    if n_sat == 0:
        return 0.0, 0.0, 0
    hits = is_match[sat] if consequent == "M" else ~is_match[sat]
    return n_sat / len(rule_vals), float(hits.sum()) / n_sat, n_sat


def _best_candidate(vals: np.ndarray, match: np.ndarray, consequent: str,
                    min_cov_rows: int):
    """Purest (comparator, threshold) over midpoint candidates, or None.

    Tie-break: larger satisfied count, then '<=' before '>', then smaller
    threshold.
    """
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    sm = match[order].astype(np.float64)
    distinct_end = np.nonzero(np.diff(sv))[0]  # last index of each distinct run
    if len(distinct_end) == 0:
        return None  # constant column: no candidate threshold
    cum_n = np.arange(1, len(sv) + 1, dtype=np.float64)
    cum_m = np.cumsum(sm)
    n_le = cum_n[distinct_end]
    m_le = cum_m[distinct_end]
    thresholds = (sv[distinct_end] + sv[distinct_end + 1]) / 2.0
    n_tot = float(len(sv))
    m_tot = float(sm.sum())

    best = None
    for comparator in COMPARATORS:
        if comparator == "<=":
            count, mcount = n_le, m_le
        else:
            count, mcount = n_tot - n_le, m_tot - m_le
        hits = mcount if consequent == "M" else count - mcount
        with np.errstate(invalid="ignore", divide="ignore"):
            purity = np.where(count > 0, hits / np.maximum(count, 1.0), 0.0)
        ok = count >= min_cov_rows
        if not ok.any():
            continue
        idx = np.nonzero(ok)[0]
        # lexicographic best: max purity, max count, min threshold
        key = np.lexsort((thresholds[idx], -count[idx], -purity[idx]))
        j = idx[key[0]]
        cand = (purity[j], count[j], comparator, float(thresholds[j]))
        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
            best = cand
    return best


def induce_rules(table: MUPairTable, min_purity: float = 0.95,
                 min_coverage: float = 0.01,
                 max_rules_per_metric: int = 8) -> list[RiskRule]:
    if len(table) == 0:
        raise ValueError("cannot induce rules from an empty table")
    n_total = len(table)
    min_cov_rows = max(1, int(np.ceil(min_coverage * n_total)))
    rules: list[RiskRule] = []
    for metric_id in METRIC_IDS:
        if metric_id not in table.values:
            continue
        full_vals = table.values[metric_id]
        for consequent in ("M", "U"):
            remaining = np.ones(n_total, dtype=bool)
            for _ in range(max_rules_per_metric):
                if not remaining.any():
                    break
                best = _best_candidate(
                    full_vals[remaining], table.is_match[remaining],
                    consequent, min_cov_rows,
                )
                if best is None or best[0] < min_purity:
                    break
                _, _, comparator, threshold = best
                coverage, purity, n_sat = _measure(
                    full_vals, table.is_match, comparator, threshold, consequent
                )
                if purity < min_purity or n_sat < min_cov_rows:
                    break
                rules.append(
                    RiskRule(metric_id, comparator, threshold, consequent,
                             coverage, purity)
                )
                sat = (full_vals <= threshold if comparator == "<="
                       else full_vals > threshold)
                remaining &= ~sat
    return rules


def evaluate_rules(rules: list[RiskRule], metrics: MetricTable,
                   pairs: list[tuple[str, int]]) -> ActivationMatrix:
    """Binary activation of every rule on every (instance, class) pair."""
    data = np.zeros((len(pairs), len(rules)), dtype=np.uint8)
    if rules and pairs:
        row_idx = np.array([metrics.row_index(iid) for iid, _ in pairs])
        cls_idx = np.array([c for _, c in pairs])
        for j, rule in enumerate(rules):
            vals = metrics.tables[rule.metric_id][row_idx, cls_idx]
            data[:, j] = rule.satisfies(vals).astype(np.uint8)
    return ActivationMatrix(list(pairs), list(rules), data)


def estimate_rule_distribution(rule: RiskRule, table: MUPairTable) -> tuple[float, float]:
    """(mu_f, sigma2_f) of the rule: Match fraction among satisfying rows."""
    sat = rule.satisfies(table.values[rule.metric_id])
    n_sat = int(sat.sum())
    if n_sat == 0:
        raise ValueError("rule %s satisfies no rows in the table" % rule)
    mu = float(table.is_match[sat].sum()) / n_sat
    var = max(mu * (1.0 - mu) / n_sat, SIGMA_FLOOR)
    return mu, var


def write_rules(rules: list[RiskRule], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric_id\tcomparator\tthreshold\tconsequent\tcoverage\tpurity\n")
        for r in rules:
            fh.write("%s\t%s\t%s\t%s\t%s\t%s\n" % (
                r.metric_id, r.comparator, fmt_float(r.threshold), r.consequent,
                fmt_float(r.coverage), fmt_float(r.purity),
            ))


def read_rules(path: str) -> list[RiskRule]:
    rules = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["metric_id", "comparator", "threshold", "consequent",
                      "coverage", "purity"]:
            raise ValueError("%s: bad rules header" % path)
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            m, comp, t, cons, cov, pur = line.split("\t")
            rules.append(RiskRule(m, comp, float(t), cons, float(cov), float(pur)))
    return rules
