"""Temperature softmax, adaptive-loss gradients, pretraining, and the
risk-guided fine-tuning loop."""

import numpy as np
import pytest

from riskrank import adaptive
from riskrank import risk_model as rm


def test_temperature_softmax_invariants():
    rng = np.random.Generator(np.random.PCG64(61))
    logits = rng.normal(size=(20, 5)) * 3.0
    for lam in (0.05, 0.7, 1.0, 2.0, 50.0):
        probs = adaptive.temperature_softmax(logits, lam)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert (probs > 0).all()
        # shift invariance
        shifted = adaptive.temperature_softmax(logits + 123.0, lam)
        assert np.allclose(shifted, probs, atol=1e-12)
        # argmax invariance for any positive temperature
        assert np.array_equal(np.argmax(probs, axis=1), np.argmax(logits, axis=1))


def test_temperature_softmax_rejects_nonpositive():
    with pytest.raises(ValueError):
        adaptive.temperature_softmax(np.zeros((1, 2)), 0.0)
    with pytest.raises(ValueError):
        adaptive.temperature_softmax(np.zeros((1, 2)), -1.0)


def _loss_at(logits, onehot, lam):
    return adaptive.adaptive_loss(
        adaptive.temperature_softmax(logits, lam), onehot)


@pytest.mark.parametrize("seed", range(5))
def test_lambda_and_logit_gradients_match_finite_differences(seed):
    rng = np.random.Generator(np.random.PCG64(70 + seed))
    n, C = 12, 4
    logits = rng.normal(size=(n, C)) * 2.0
    y = rng.integers(C, size=n)
    onehot = np.zeros((n, C))
    onehot[np.arange(n), y] = 1.0
    lam = float(0.5 + rng.random() * 2.0)

    probs = adaptive.temperature_softmax(logits, lam)
    g_t = (probs - onehot) / n
    g_logits = g_t / lam
    g_lam = float(-np.sum(g_t * logits) / lam**2)

    h = 1e-5
    fd_lam = (_loss_at(logits, onehot, lam + h)
              - _loss_at(logits, onehot, lam - h)) / (2 * h)
    assert abs(g_lam - fd_lam) / max(abs(fd_lam), 1e-8) <= 1e-4

    fd = np.zeros_like(logits)
    for i in range(n):
        for c in range(C):
            up = logits.copy()
            up[i, c] += h
            dn = logits.copy()
            dn[i, c] -= h
            fd[i, c] = (_loss_at(up, onehot, lam)
                        - _loss_at(dn, onehot, lam)) / (2 * h)
    assert np.linalg.norm(g_logits - fd) / np.linalg.norm(fd) <= 1e-4


def test_adaptive_loss_value():
    probs = np.array([[0.7, 0.3], [0.2, 0.8]])
    onehot = np.array([[1.0, 0.0], [0.0, 1.0]])
    want = -(np.log(0.7) + np.log(0.8)) / 2.0
    assert adaptive.adaptive_loss(probs, onehot) == pytest.approx(want)


def test_pretrain_head_beats_chance(stack):
    cfg = adaptive.AdaptConfig(pretrain_epochs=150, seed=1)
    head = adaptive.pretrain_head(stack.workload, stack.fused, cfg)
    assert head.trained
    valid = stack.workload.by_split("valid")
    X = stack.fused.matrix([r.id for r in valid])
    y = np.array([r.true_label for r in valid])
    acc = float(np.mean(head.predict(X) == y))
    assert acc > 1.5 / stack.workload.num_classes


def test_pretrain_head_is_deterministic(stack):
    cfg = adaptive.AdaptConfig(pretrain_epochs=20, seed=3)
    a = adaptive.pretrain_head(stack.workload, stack.fused, cfg)
    b = adaptive.pretrain_head(stack.workload, stack.fused, cfg)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.bias, b.bias)


def test_adapt_requires_trained_head(stack):
    head = adaptive.init_head(stack.fused.dim, stack.workload.num_classes, 0)
    with pytest.raises(ValueError, match="pretrained"):
        adaptive.adapt(head, stack.params, stack.workload, stack.fused,
                       stack.activations, adaptive.AdaptConfig(adapt_epochs=1))


def test_risk_pseudo_labels(stack):
    scores = rm.score_workload(stack.workload, stack.activations, stack.params)
    test_ids = [r.id for r in stack.workload.by_split("test")][:10]
    pseudo = adaptive.risk_pseudo_labels(scores, test_ids)
    for iid in test_ids:
        gam = [scores.score(iid, c) for c in range(stack.workload.num_classes)]
        assert pseudo[iid] == int(np.argmin(gam))


def test_adapt_descent_with_true_pseudo_labels(stack, tmp_path, monkeypatch):
    """With pseudo-labels pinned to the true labels and a tiny step size the
    per-epoch loss must never increase (plain gradient descent on a smooth
    objective)."""
    truth = {r.id: r.true_label for r in stack.workload.by_split("test")}
    monkeypatch.setattr(adaptive, "risk_pseudo_labels",
                        lambda scores, ids: {i: truth[i] for i in ids})
    cfg = adaptive.AdaptConfig(pretrain_epochs=50, adapt_epochs=15,
                               learning_rate=1e-5, seed=2)
    head = adaptive.pretrain_head(stack.workload, stack.fused, cfg)
    log_path = str(tmp_path / "adapt.tsv")
    adaptive.adapt(head, stack.params, stack.workload, stack.fused,
                   stack.activations, cfg, log_path=log_path)
    with open(log_path) as fh:
        lines = fh.read().splitlines()[1:]
    losses = [float(ln.split("\t")[2]) for ln in lines]
    assert len(losses) == 15
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_adapt_log_and_lambda_floor(stack, tmp_path):
    cfg = adaptive.AdaptConfig(pretrain_epochs=30, adapt_epochs=5,
                               learning_rate=5e-4, seed=4)
    head = adaptive.pretrain_head(stack.workload, stack.fused, cfg)
    log_path = str(tmp_path / "adapt.tsv")
    adapted = adaptive.adapt(head, stack.params, stack.workload, stack.fused,
                             stack.activations, cfg, log_path=log_path)
    assert adapted.trained
    assert not np.array_equal(adapted.weights, head.weights)
    with open(log_path) as fh:
        header, *rows = fh.read().splitlines()
    assert header.split("\t")[:3] == ["epoch", "lambda", "loss"]
    lams = [float(r.split("\t")[1]) for r in rows]
    assert all(lam >= adaptive.LAMBDA_MIN for lam in lams)


def test_adapt_empty_test_split_warns(stack):
    import copy

    w = stack.workload
    from riskrank.workload import Workload

    w2 = Workload([copy.copy(r) for r in w.instances if r.split != "test"],
                  w.embeddings, w.num_classes)
    cfg = adaptive.AdaptConfig(pretrain_epochs=5, adapt_epochs=2, seed=0)
    head = adaptive.pretrain_head(w2, stack.fused, cfg)
    with pytest.warns(UserWarning, match="empty test split"):
        out = adaptive.adapt(head, stack.params, w2, stack.fused,
                             stack.activations, cfg)
    assert np.array_equal(out.weights, head.weights)


def test_head_config_validation():
    with pytest.raises(ValueError):
        adaptive.AdaptConfig(pretrain_epochs=-1)
    with pytest.raises(ValueError):
        adaptive.AdaptConfig(adapt_epochs=-1)
