"""Risk model: VaR vs Monte-Carlo oracle, attention/aggregation invariants,
Platt calibration, vectorized-vs-scalar agreement, serialization."""

import numpy as np
import pytest

from riskrank import risk_model as rm
from riskrank.synthetic import mc_var_oracle


def test_var_matches_mc_oracle_spot_checks():
    cases = [
        (0.9, 0.0025, 0.95),   # frozen reference case
        (0.5, 0.04, 0.95),
        (0.1, 0.01, 0.9),
        (0.3, 0.09, 0.5),
    ]
    for mu, var, theta in cases:
        exact = rm.value_at_risk(mu, var, theta)
        mc = mc_var_oracle(mu, var, theta, samples=10**6, seed=1)
        assert abs(exact - mc) <= 2e-3, (mu, var, theta)


def test_var_frozen_reference_value():
    # gamma = 1 - q where q is the 0.05-quantile of N(0.9, 0.05^2) on [0, 1]
    got = rm.value_at_risk(0.9, 0.0025, 0.95)
    assert got == pytest.approx(0.1827992178356914, abs=1e-9)


def test_truncated_quantile_bounds_and_monotonicity():
    mus = np.linspace(-0.5, 1.5, 41)
    for var in (1e-6, 0.01, 0.25):
        q = rm.truncated_quantile(mus, np.full_like(mus, var), 0.95)
        assert ((q >= 0.0) & (q <= 1.0)).all()
        gammas = 1.0 - q
        # gamma monotone nonincreasing in mu at fixed var and theta
        assert (np.diff(gammas) <= 1e-12).all()


def test_truncated_quantile_degenerate_mass():
    # essentially no mass inside [0, 1]: collapse toward the nearer endpoint
    assert rm.truncated_quantile(-50.0, 1e-6, 0.95) == 0.0
    assert rm.truncated_quantile(50.0, 1e-6, 0.95) == 1.0


def test_var_theta_validation():
    with pytest.raises(ValueError):
        rm.value_at_risk(0.5, 0.01, 0.0)
    with pytest.raises(ValueError):
        rm.value_at_risk(0.5, 0.01, 1.0)
    with pytest.raises(ValueError):
        rm.value_at_risk(0.5, 0.0, 0.95)


def _small_params(m, C, seed=0, alpha=0.1):
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = rng.integers(1, 10, size=C)
    p = rm.init_params(rng.random(m - 1), rng.random(m - 1) * 0.1 + 0.01, counts,
                       alpha=alpha)
    p.attention_w = rng.normal(scale=0.3, size=(m, m))
    p.attention_b = rng.normal(scale=0.3, size=m)
    return p


def test_attention_weights_invariants():
    rng = np.random.Generator(np.random.PCG64(41))
    params = _small_params(6, 3, seed=41)
    for _ in range(10):
        x = (rng.random(6) < 0.5).astype(float)
        x[-1] = 1.0
        omega = rm.attention_weights(x, params)
        active = x > 0
        assert omega[~active].sum() == 0.0
        assert (omega >= 0.0).all()
        assert omega.sum() == pytest.approx(1.0, abs=1e-9)
        # shift invariance: adding a constant to all logits changes nothing
        shifted = params.copy()
        shifted.attention_b = params.attention_b + 17.0
        assert np.allclose(rm.attention_weights(x, shifted), omega, atol=1e-12)


def test_attention_weights_dropout_never_empties():
    params = _small_params(4, 2, seed=42)
    x = np.array([1.0, 0.0, 1.0, 1.0])
    omega = rm.attention_weights(x, params, dropout_mask=np.zeros(4))
    assert omega.sum() == pytest.approx(1.0, abs=1e-9)  # mask ignored
    omega2 = rm.attention_weights(x, params, dropout_mask=np.array([1, 1, 0, 0.0]))
    assert omega2[2] == 0.0 and omega2[3] == 0.0
    assert omega2.sum() == pytest.approx(1.0, abs=1e-9)


def test_attention_weights_no_active_raises():
    params = _small_params(3, 2, seed=43)
    with pytest.raises(ValueError, match="active"):
        rm.attention_weights(np.zeros(3), params)


def test_aggregate_distribution():
    x = np.array([1.0, 0.0, 1.0])
    omega = np.array([0.6, 0.0, 0.4])
    mu_f = np.array([0.9, 0.5, 0.2])
    var_f = np.array([0.01, 0.02, 0.04])
    mu, var = rm.aggregate_distribution(x, omega, mu_f, var_f)
    assert mu == pytest.approx(0.6 * 0.9 + 0.4 * 0.2)
    assert var == pytest.approx(0.36 * 0.01 + 0.16 * 0.04)


def test_neutralize_class_bias_softmax():
    params = _small_params(4, 3, seed=44)
    raw_mu = np.array([0.2, 0.9, 0.4])
    raw_var = np.array([0.05, 0.02, 0.03])
    mu, var = rm.neutralize_class_bias(raw_mu, raw_var, params)
    assert mu.sum() == pytest.approx(1.0, abs=1e-9)
    assert (mu > 0).all()
    assert (var >= rm.VAR_CLAMP).all()
    expected = raw_var - params.alpha * params.class_weights
    assert np.allclose(var, np.maximum(expected, rm.VAR_CLAMP))


def test_platt_fit_recovers_sigmoid():
    rng = np.random.Generator(np.random.PCG64(45))
    scores = rng.normal(size=4000) * 2.0
    true_A, true_B = -1.7, 0.4
    p = rm.platt_apply(scores, true_A, true_B)
    y = (rng.random(4000) < p).astype(float)
    A, B = rm.platt_fit(scores, y)
    assert A == pytest.approx(true_A, abs=0.15)
    assert B == pytest.approx(true_B, abs=0.15)


def test_platt_fit_degenerate_labels():
    scores = np.linspace(-1, 1, 10)
    assert rm.platt_fit(scores, np.zeros(10)) == (-1.0, 0.0)
    assert rm.platt_fit(scores, np.ones(10)) == (-1.0, 0.0)


def test_platt_apply_extreme_scores_stable():
    assert rm.platt_apply(1e6, -1.0, 0.0) == pytest.approx(1.0)
    assert rm.platt_apply(-1e6, -1.0, 0.0) == pytest.approx(0.0)


def test_forward_gamma_matches_scalar_path(stack):
    """Vectorized forward pass equals the composed per-pair scalar functions."""
    w = stack.workload
    params = stack.params
    ids = [r.id for r in w.instances[:6]]
    X, mu_feat = rm.build_pair_features(stack.activations, w, params, ids)
    gamma, _ = rm.forward_gamma(X, mu_feat, params, surrogate=False)
    C = w.num_classes
    for i in range(len(ids)):
        raw_mu = np.empty(C)
        raw_var = np.empty(C)
        for c in range(C):
            omega = rm.attention_weights(X[i, c], params)
            raw_mu[c], raw_var[c] = rm.aggregate_distribution(
                X[i, c], omega, mu_feat[i, c], params.rule_vars)
        mu, var = rm.neutralize_class_bias(raw_mu, raw_var, params)
        for c in range(C):
            want = rm.value_at_risk(float(mu[c]), float(var[c]), params.var_level)
            assert gamma[i, c] == pytest.approx(want, abs=1e-12)


def test_pair_features_prob_column(stack):
    w = stack.workload
    params = stack.params
    ids = [r.id for r in w.instances[:4]]
    X, mu_feat = rm.build_pair_features(stack.activations, w, params, ids)
    assert (X[:, :, -1] == 1.0).all()  # always active
    for i, iid in enumerate(ids):
        rec = w.instance(iid)
        for c in range(w.num_classes):
            want = rm.platt_apply(rec.logits[c], params.platt[c, 0],
                                  params.platt[c, 1])
            assert mu_feat[i, c, -1] == pytest.approx(want, abs=1e-12)
    # rule means broadcast into the other columns
    assert np.allclose(mu_feat[:, :, :-1], params.rule_means[:-1])


def test_score_workload_reproducible(stack):
    a = rm.score_workload(stack.workload, stack.activations, stack.params)
    b = rm.score_workload(stack.workload, stack.activations, stack.params)
    assert np.array_equal(a.gamma, b.gamma)
    assert a.ids == b.ids
    rec = stack.workload.instances[0]
    assert a.predicted_score(rec.id) == a.score(rec.id, rec.predicted_label)


def test_params_round_trip(tmp_path, stack):
    p1 = str(tmp_path / "p1.tsv")
    p2 = str(tmp_path / "p2.tsv")
    rm.write_params(stack.params, p1)
    loaded = rm.read_params(p1)
    rm.write_params(loaded, p2)
    assert (tmp_path / "p1.tsv").read_bytes() == (tmp_path / "p2.tsv").read_bytes()
    assert loaded.num_features == stack.params.num_features
    assert loaded.alpha == stack.params.alpha
    assert loaded.var_level == stack.params.var_level
    assert np.allclose(loaded.class_weights, stack.params.class_weights)


def test_init_params_uniform_attention():
    params = rm.init_params(np.array([0.8, 0.3]), np.array([0.01, 0.02]),
                            np.array([5, 5]))
    x = np.array([1.0, 1.0, 1.0])
    omega = rm.attention_weights(x, params)
    assert np.allclose(omega, 1.0 / 3.0)
    assert params.rule_means[-1] == 0.0  # per-pair placeholder slot
