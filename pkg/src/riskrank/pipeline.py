"""Run-directory stage functions shared by the CLI subcommands.

Each stage reads the previous stage's artifacts from the run directory,
writes its own, appends a MANIFEST.tsv line, and returns a one-line summary.
Everything is deterministic given the effective configuration.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from . import adaptive, evaluation, features, metrics, rank_training
from . import risk_model as rm
from . import rules as rules_mod
from . import synthetic, workload as wl
from .workload import fmt_float

DEFAULTS: dict[str, object] = {
    "seed": 42,
    "workload_manifest": "",
    # feature selection
    "top_k": 200,
    "mi_bins": 10,
    # rule induction
    "min_purity": 0.95,
    "min_coverage": 0.01,
    "max_rules_per_metric": 8,
    # risk model
    "theta": 0.95,
    "alpha": 0.1,
    "dropout_rate": 0.5,
    # risk training
    "risk_learning_rate": 1e-4,
    "risk_iterations": 200,
    "batch_pairs": 256,
    # adaptive training
    "pretrain_epochs": 200,
    "adapt_epochs": 20,
    "head_learning_rate": 5e-4,
    # synthetic workload
    "synth_classes": 7,
    "synth_dim": 64,
    "synth_backbones": 4,
    "synth_train": 2000,
    "synth_valid": 300,
    "synth_test": 500,
    "synth_separation": 2.0,
    "synth_shift": 1.0,
    "synth_noise": 0.05,
    # oracle stage
    "oracle_samples": 100000,
}


class StageError(RuntimeError):
    """Domain error during a stage (missing upstream artifact, bad data)."""


def parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise StageError("%s:%d: expected key=value" % (path, lineno))
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def effective_config(file_values: dict[str, str],
                     overrides: dict[str, str]) -> dict[str, object]:
    cfg = dict(DEFAULTS)
    for source in (file_values, overrides):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise KeyError("unknown config key: %s" % key)
            default = DEFAULTS[key]
            if isinstance(default, int) and not isinstance(default, bool):
                cfg[key] = int(value)
            elif isinstance(default, float):
                cfg[key] = float(value)
            else:
                cfg[key] = str(value)
    return cfg


def config_hash(cfg: dict[str, object]) -> str:
    blob = "\n".join("%s=%r" % (k, cfg[k]) for k in sorted(cfg))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _manifest_append(out_dir: str, stage: str, inputs: list[str],
                     cfg: dict[str, object]) -> None:
    path = os.path.join(out_dir, "MANIFEST.tsv")
    new = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write("stage\tinputs\tconfig_hash\n")
        fh.write("%s\t%s\t%s\n" % (stage, ",".join(inputs), config_hash(cfg)))


def _need(out_dir: str, relpath: str, producer: str) -> str:
    path = os.path.join(out_dir, relpath)
    if not os.path.exists(path):
        raise StageError(
            "missing artifact %s: run the %s stage first" % (relpath, producer)
        )
    return path


def _load_workload(cfg, out_dir: str) -> wl.Workload:
    manifest_path = str(cfg["workload_manifest"]) or os.path.join(
        out_dir, "workload", "workload.manifest"
    )
    if not os.path.exists(manifest_path):
        raise StageError(
            "no workload manifest at %s: run the synth stage first (or set "
            "workload_manifest)" % manifest_path
        )
    return wl.load_workload(wl.load_manifest(manifest_path))


# --- fused matrix serialization ---

def write_fused(fused: features.FusedFeatureMatrix, ids: list[str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\t" + "\t".join(
            "%s|%s|%d" % c for c in fused.column_names
        ) + "\n")
        for iid in ids:
            fh.write("%s\t%s\n" % (
                iid, "\t".join(fmt_float(v) for v in fused.rows[iid])
            ))


def read_fused(path: str) -> features.FusedFeatureMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        names = []
        for col in header[1:]:
            backbone, criterion, idx = col.split("|")
            names.append((backbone, criterion, int(idx)))
        rows = {}
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                continue
            rows[parts[0]] = np.array([float(v) for v in parts[1:]])
    return features.FusedFeatureMatrix(names, rows)


def read_metric_table(path: str, num_classes: int) -> metrics.MetricTable:
    ids: list[str] = []
    seen: dict[str, int] = {}
    values: dict[str, list[list[float]]] = {m: [] for m in metrics.METRIC_IDS}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["id", "class"]:
            raise StageError("%s: bad metric table header" % path)
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                continue
            iid, cls = parts[0], int(parts[1])
            if iid not in seen:
                seen[iid] = len(ids)
                ids.append(iid)
                for m in metrics.METRIC_IDS:
                    values[m].append([0.0] * num_classes)
            for k, m in enumerate(metrics.METRIC_IDS):
                values[m][seen[iid]][cls] = float(parts[2 + k])
    tables = {m: np.array(values[m]) for m in metrics.METRIC_IDS}
    return metrics.MetricTable(ids, num_classes, tables)


def _all_pairs(w: wl.Workload) -> list[tuple[str, int]]:
    return [(r.id, c) for r in w.instances for c in range(w.num_classes)]


def _load_rules_and_activations(cfg, out_dir, w, table):
    rule_list = rules_mod.read_rules(_need(out_dir, "rules.tsv", "rules"))
    dist_path = _need(out_dir, "rule_distributions.tsv", "rules")
    mu_f, var_f = [], []
    with open(dist_path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                continue
            mu_f.append(float(parts[1]))
            var_f.append(float(parts[2]))
    acts = rules_mod.evaluate_rules(rule_list, table, _all_pairs(w))
    keep = acts.data.any(axis=0) if acts.data.shape[1] else np.zeros(0, dtype=bool)
    acts = rules_mod.ActivationMatrix(
        acts.pairs,
        [r for r, k in zip(acts.rules, keep) if k],
        acts.data[:, keep],
    )
    mu_f = np.array([v for v, k in zip(mu_f, keep) if k])
    var_f = np.array([v for v, k in zip(var_f, keep) if k])
    return acts, mu_f, var_f


# --- head serialization ---

def write_head(head: adaptive.HeadClassifier, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[weights]\n")
        for row in head.weights:
            fh.write("\t".join(fmt_float(v) for v in row) + "\n")
        fh.write("[bias]\n")
        fh.write("\t".join(fmt_float(v) for v in head.bias) + "\n")


def read_head(path: str) -> adaptive.HeadClassifier:
    sections: dict[str, list[list[float]]] = {}
    current = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("["):
                current = line[1:-1]
                sections[current] = []
            else:
                sections[current].append([float(v) for v in line.split("\t")])
    return adaptive.HeadClassifier(
        np.array(sections["weights"]), np.array(sections["bias"][0]), trained=True
    )


# --- stages ---

def stage_synth(cfg, out_dir: str) -> str:
    scfg = synthetic.SynthConfig(
        num_classes=int(cfg["synth_classes"]), dim=int(cfg["synth_dim"]),
        backbones=int(cfg["synth_backbones"]), n_train=int(cfg["synth_train"]),
        n_valid=int(cfg["synth_valid"]), n_test=int(cfg["synth_test"]),
        class_separation=float(cfg["synth_separation"]),
        shift_magnitude=float(cfg["synth_shift"]),
        label_noise=float(cfg["synth_noise"]), seed=int(cfg["seed"]),
    )
    manifest = synthetic.generate_workload_files(
        scfg, os.path.join(out_dir, "workload")
    )
    _manifest_append(out_dir, "synth", [], cfg)
    return "synth: workload written to %s" % manifest


def stage_validate(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    report = wl.validate_workload(w)
    path = os.path.join(out_dir, "validation_report.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.to_lines()) + "\n")
    if not report.ok:
        raise StageError(
            "workload has %d invariant violations (see %s)"
            % (len(report.violations), path)
        )
    _manifest_append(out_dir, "validate", ["workload"], cfg)
    return "validate: %d instances, no violations" % len(w.instances)


def stage_features(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    sel_cfg = features.SelectionConfig(int(cfg["top_k"]), int(cfg["mi_bins"]))
    scores = features.score_features(w, sel_cfg)
    features.write_scores(scores, os.path.join(out_dir, "feature_scores.tsv"))
    selections = features.select_features(scores, sel_cfg)
    fused = features.fuse_features(w, selections)
    write_fused(fused, [r.id for r in w.instances],
                os.path.join(out_dir, "fused.tsv"))
    _manifest_append(out_dir, "features", ["workload"], cfg)
    return "features: fused matrix with %d columns" % fused.dim


def stage_metrics(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    fused = read_fused(_need(out_dir, "fused.tsv", "features"))
    centroids = metrics.compute_centroids(fused, w)
    table = metrics.build_metric_table(fused, w, centroids)
    table.write(os.path.join(out_dir, "metric_table.tsv"))
    _manifest_append(out_dir, "metrics", ["workload", "fused.tsv"], cfg)
    return "metrics: %d instances x %d classes x %d metrics" % (
        len(table.ids), w.num_classes, len(metrics.METRIC_IDS)
    )


def stage_rules(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    table = read_metric_table(_need(out_dir, "metric_table.tsv", "metrics"),
                              w.num_classes)
    mu_table = rules_mod.build_mu_table(w, table, "train")
    rule_list = rules_mod.induce_rules(
        mu_table, float(cfg["min_purity"]), float(cfg["min_coverage"]),
        int(cfg["max_rules_per_metric"]),
    )
    rules_mod.write_rules(rule_list, os.path.join(out_dir, "rules.tsv"))
    with open(os.path.join(out_dir, "rule_distributions.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("rule_index\tmu_f\tvar_f\n")
        for i, rule in enumerate(rule_list):
            mu_f, var_f = rules_mod.estimate_rule_distribution(rule, mu_table)
            fh.write("%d\t%s\t%s\n" % (i, fmt_float(mu_f), fmt_float(var_f)))
    _manifest_append(out_dir, "rules", ["workload", "metric_table.tsv"], cfg)
    return "rules: %d induced" % len(rule_list)


def stage_train_risk(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    table = read_metric_table(_need(out_dir, "metric_table.tsv", "metrics"),
                              w.num_classes)
    acts, mu_f, var_f = _load_rules_and_activations(cfg, out_dir, w, table)
    class_counts = np.zeros(w.num_classes)
    for rec in w.by_split("train"):
        class_counts[rec.true_label] += 1
    params = rm.init_params(
        mu_f, var_f, class_counts, alpha=float(cfg["alpha"]),
        var_level=float(cfg["theta"]), dropout_rate=float(cfg["dropout_rate"]),
    )
    rm.fit_platt_for_workload(w, params, "valid")
    tcfg = rank_training.TrainConfig(
        learning_rate=float(cfg["risk_learning_rate"]),
        max_iterations=int(cfg["risk_iterations"]),
        batch_pairs=int(cfg["batch_pairs"]), seed=int(cfg["seed"]),
    )
    trained = rank_training.train_risk_model(
        w, acts, params, tcfg, log_path=os.path.join(out_dir, "train_log.tsv")
    )
    rm.write_params(trained, os.path.join(out_dir, "risk_params.tsv"))
    _manifest_append(out_dir, "train-risk",
                     ["workload", "metric_table.tsv", "rules.tsv"], cfg)
    return "train-risk: %d features trained" % trained.num_features


def stage_rank(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    table = read_metric_table(_need(out_dir, "metric_table.tsv", "metrics"),
                              w.num_classes)
    acts, _, _ = _load_rules_and_activations(cfg, out_dir, w, table)
    params = rm.read_params(_need(out_dir, "risk_params.tsv", "train-risk"))
    test_ids = [r.id for r in w.by_split("test")]
    scores = rm.score_workload(w, acts, params, ids=test_ids)
    wl.write_ranking(scores, os.path.join(out_dir, "ranking.tsv"))
    ordered = rank_training.vote_rank(scores) if test_ids else []
    with open(os.path.join(out_dir, "vote_ranking.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("id\twins\trank\n")
        for rank, (iid, wins) in enumerate(ordered, start=1):
            fh.write("%s\t%d\t%d\n" % (iid, wins, rank))
    _manifest_append(out_dir, "rank",
                     ["workload", "rules.tsv", "risk_params.tsv"], cfg)
    return "rank: %d test instances ranked" % len(test_ids)


def stage_adapt(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    fused = read_fused(_need(out_dir, "fused.tsv", "features"))
    table = read_metric_table(_need(out_dir, "metric_table.tsv", "metrics"),
                              w.num_classes)
    acts, _, _ = _load_rules_and_activations(cfg, out_dir, w, table)
    params = rm.read_params(_need(out_dir, "risk_params.tsv", "train-risk"))
    acfg = adaptive.AdaptConfig(
        pretrain_epochs=int(cfg["pretrain_epochs"]),
        adapt_epochs=int(cfg["adapt_epochs"]),
        learning_rate=float(cfg["head_learning_rate"]), seed=int(cfg["seed"]),
    )
    head = adaptive.pretrain_head(w, fused, acfg)
    write_head(head, os.path.join(out_dir, "head_pretrained.tsv"))
    adapted = adaptive.adapt(
        head, params, w, fused, acts, acfg,
        log_path=os.path.join(out_dir, "adapt_log.tsv"),
    )
    write_head(adapted, os.path.join(out_dir, "head_adapted.tsv"))
    _manifest_append(out_dir, "adapt",
                     ["workload", "fused.tsv", "risk_params.tsv"], cfg)
    return "adapt: head fine-tuned for %d epochs" % acfg.adapt_epochs


def stage_evaluate(cfg, out_dir: str) -> str:
    w = _load_workload(cfg, out_dir)
    test = [r for r in w.by_split("test") if r.has_true_label]
    lines = ["metric\tvalue"]
    risk_auroc = None
    ranking_path = os.path.join(out_dir, "ranking.tsv")
    if test and os.path.exists(ranking_path):
        scores = {}
        with open(ranking_path, encoding="utf-8") as fh:
            fh.readline()
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                if len(parts) >= 3:
                    scores[parts[0]] = float(parts[2])
        flags = [r.predicted_label != r.true_label for r in test]
        vals = [scores[r.id] for r in test if r.id in scores]
        if len(vals) == len(test) and any(flags) and not all(flags):
            risk_auroc = evaluation.auroc(vals, flags)
    if test:
        report = evaluation.classification_report(
            [r.true_label for r in test], [r.predicted_label for r in test],
            w.num_classes, risk_auroc=risk_auroc,
        )
        lines = report.to_lines()
    head_path = os.path.join(out_dir, "head_adapted.tsv")
    pre_path = os.path.join(out_dir, "head_pretrained.tsv")
    if test and os.path.exists(head_path) and os.path.exists(pre_path):
        fused = read_fused(_need(out_dir, "fused.tsv", "features"))
        X = fused.matrix([r.id for r in test])
        y = np.array([r.true_label for r in test])
        for name, path in (("pretrained", pre_path), ("adapted", head_path)):
            head = read_head(path)
            acc = float(np.mean(head.predict(X) == y))
            lines.append("head_%s_test_accuracy\t%s" % (name, fmt_float(acc)))
    out_path = os.path.join(out_dir, "eval_report.tsv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _manifest_append(out_dir, "evaluate", ["workload", "ranking.tsv"], cfg)
    return "evaluate: report written to %s" % out_path


def stage_oracle(cfg, out_dir: str) -> str:
    params_grid = []
    for mu in (0.1, 0.5, 0.9):
        for sd in (0.05, 0.2):
            for theta in (0.9, 0.95):
                params_grid.append((mu, sd * sd, theta))
    samples = int(cfg["oracle_samples"])
    worst = 0.0
    rows = ["mu\tvar\ttheta\texact\tmc\tabs_diff"]
    for i, (mu, var, theta) in enumerate(params_grid):
        exact = rm.value_at_risk(mu, var, theta)
        mc = synthetic.mc_var_oracle(mu, var, theta, samples,
                                     seed=int(cfg["seed"]) + i)
        diff = abs(exact - mc)
        worst = max(worst, diff)
        rows.append("\t".join(fmt_float(v) for v in (mu, var, theta, exact, mc, diff)))
    with open(os.path.join(out_dir, "oracle_report.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    _manifest_append(out_dir, "oracle", [], cfg)
    return "oracle: max |value_at_risk - MC| = %s over %d points" % (
        fmt_float(worst), len(params_grid)
    )


PIPELINE_STAGES = [
    ("synth", stage_synth),
    ("validate", stage_validate),
    ("features", stage_features),
    ("metrics", stage_metrics),
    ("rules", stage_rules),
    ("train-risk", stage_train_risk),
    ("rank", stage_rank),
    ("adapt", stage_adapt),
    ("evaluate", stage_evaluate),
]


def stage_pipeline(cfg, out_dir: str) -> str:
    summaries = []
    manifest_path = str(cfg["workload_manifest"]) or os.path.join(
        out_dir, "workload", "workload.manifest"
    )
    for name, fn in PIPELINE_STAGES:
        if name == "synth" and os.path.exists(manifest_path):
            continue
        summaries.append(fn(cfg, out_dir))
    return "\n".join(summaries)


STAGES = dict(PIPELINE_STAGES + [("oracle", stage_oracle),
                                 ("pipeline", stage_pipeline)])
