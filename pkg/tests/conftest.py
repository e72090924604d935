"""Shared fixtures: a small synthetic workload and the full model stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from riskrank import adaptive, features, metrics, rules, synthetic
from riskrank import risk_model as rm
from riskrank.workload import Workload


SMALL_CFG = synthetic.SynthConfig(
    num_classes=4, dim=12, backbones=2,
    n_train=160, n_valid=80, n_test=80,
    class_separation=2.0, shift_magnitude=1.0, label_noise=0.05, seed=11,
)


@dataclass
class ModelStack:
    """Workload plus every derived artifact up to an initialized risk model."""

    workload: Workload
    fused: features.FusedFeatureMatrix
    table: metrics.MetricTable
    mu_table: rules.MUPairTable
    activations: rules.ActivationMatrix
    params: rm.RiskModelParams


def build_stack(scfg: synthetic.SynthConfig, top_k: int = 6) -> ModelStack:
    w = synthetic.generate_workload(scfg)
    sel_cfg = features.SelectionConfig(top_k=top_k, mi_bins=10)
    scores = features.score_features(w, sel_cfg)
    fused = features.fuse_features(w, features.select_features(scores, sel_cfg))
    centroids = metrics.compute_centroids(fused, w)
    table = metrics.build_metric_table(fused, w, centroids)
    mu_table = rules.build_mu_table(w, table, "train")
    rule_list = rules.induce_rules(mu_table)
    pairs = [(r.id, c) for r in w.instances for c in range(w.num_classes)]
    acts = rules.evaluate_rules(rule_list, table, pairs).drop_inactive()
    dists = [rules.estimate_rule_distribution(r, mu_table) for r in acts.rules]
    mu_f = np.array([d[0] for d in dists])
    var_f = np.array([d[1] for d in dists])
    counts = np.zeros(w.num_classes)
    for rec in w.by_split("train"):
        counts[rec.true_label] += 1
    params = rm.init_params(mu_f, var_f, counts)
    rm.fit_platt_for_workload(w, params, "valid")
    return ModelStack(w, fused, table, mu_table, acts, params)


@pytest.fixture(scope="session")
def stack() -> ModelStack:
    return build_stack(SMALL_CFG)


def head_centric_run(seed: int, acfg: adaptive.AdaptConfig | None = None):
    """One end-to-end experiment where the workload's classifier is the
    pretrained head itself: pretrain, swap in the head's predictions, induce
    rules, train the risk model, score, and adapt. Returns a result dict."""
    from riskrank import evaluation, rank_training

    scfg = synthetic.SynthConfig(seed=seed)
    w = synthetic.generate_workload(scfg)
    sel_cfg = features.SelectionConfig(top_k=200, mi_bins=10)
    scores = features.score_features(w, sel_cfg)
    fused = features.fuse_features(w, features.select_features(scores, sel_cfg))

    acfg = acfg or adaptive.AdaptConfig(seed=seed)
    head = adaptive.pretrain_head(w, fused, acfg)
    all_ids = [r.id for r in w.instances]
    logits = head.logits(fused.matrix(all_ids))
    for i, rec in enumerate(w.instances):
        rec.logits = list(logits[i])
        rec.predicted_label = int(np.argmax(logits[i]))

    centroids = metrics.compute_centroids(fused, w)
    table = metrics.build_metric_table(fused, w, centroids)
    mu_table = rules.build_mu_table(w, table, "train")
    rule_list = rules.induce_rules(mu_table)
    pairs = [(r.id, c) for r in w.instances for c in range(w.num_classes)]
    acts = rules.evaluate_rules(rule_list, table, pairs).drop_inactive()
    dists = [rules.estimate_rule_distribution(r, mu_table) for r in acts.rules]
    counts = np.zeros(w.num_classes)
    for rec in w.by_split("train"):
        counts[rec.true_label] += 1
    params = rm.init_params(np.array([d[0] for d in dists]),
                            np.array([d[1] for d in dists]), counts)
    rm.fit_platt_for_workload(w, params, "valid")
    tcfg = rank_training.TrainConfig(seed=seed)
    trained = rank_training.train_risk_model(w, acts, params, tcfg)

    test = w.by_split("test")
    test_ids = [r.id for r in test]
    flags = np.array([r.predicted_label != r.true_label for r in test])
    st = rm.score_workload(w, acts, trained, ids=test_ids)
    risk_auroc = evaluation.auroc(
        np.array([st.predicted_score(i) for i in test_ids]), flags)

    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    conf = 1.0 - probs.max(axis=1)
    pos = {iid: i for i, iid in enumerate(all_ids)}
    base_auroc = evaluation.auroc(
        np.array([conf[pos[i]] for i in test_ids]), flags)

    Xt = fused.matrix(test_ids)
    yt = np.array([r.true_label for r in test])
    pre_acc = float(np.mean(head.predict(Xt) == yt))
    adapted = adaptive.adapt(head, trained, w, fused, acts, acfg)
    post_acc = float(np.mean(adapted.predict(Xt) == yt))
    return {
        "baseline_auroc": base_auroc,
        "risk_auroc": risk_auroc,
        "pretrained_accuracy": pre_acc,
        "adapted_accuracy": post_acc,
    }
