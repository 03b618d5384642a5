import numpy as np
import pytest

from idehmm.core import RngStream, simulate_joint
from idehmm.flows import ConditionalFlow, TrainConfig
from idehmm.ide import (
    IdeModel,
    TooManyDivergedError,
    build_training_set,
    ide_posterior_predictive,
    predict_states,
    train_ide,
    training_set_from_simulations,
)
from idehmm.simulators import LinearGaussianOracleConfig, linear_gaussian

FAST = TrainConfig(n_blocks=2, hidden=16, lr=5e-3, patience=5, max_epochs=30)


@pytest.fixture(scope="module")
def oracle():
    """IDE trained on a K=1 linear-Gaussian model (A=0.9, sigma=0.5, M=10)."""
    cfg = LinearGaussianOracleConfig(K=1, L=1, M=10, A=[[0.9]], sigma_x=0.5, sigma_y=0.5)
    model = linear_gaussian(cfg)
    ts = build_training_set(model, None, 2000, RngStream(1).generator())
    ide = train_ide(ts, FAST, RngStream(2), P=500)
    return cfg, model, ide


def test_training_set_counts_small():
    x = np.arange(3.0).reshape(1, 3, 1) + 10
    y = np.arange(3.0).reshape(1, 3, 1) + 20
    ts = training_set_from_simulations(x, y, None)
    np.testing.assert_array_equal(ts.approx_targets[:, 0], [11, 12])
    np.testing.assert_array_equal(ts.approx_contexts, [[10, 21], [11, 22]])
    np.testing.assert_array_equal(ts.true_targets[:, 0], [11])
    np.testing.assert_array_equal(ts.true_contexts, [[12, 10, 21]])
    assert ts.counts == {"simulations": 1, "skipped": 0, "approx": 2, "true": 1}


def test_training_set_lv_scale_count():
    n, M = 5000, 50
    x = np.zeros((n, M, 2))
    ts = training_set_from_simulations(x, np.zeros((n, M, 2)), np.zeros((n, 3)))
    assert len(ts.approx_targets) == 245_000
    assert len(ts.true_targets) == n * (M - 2)
    assert ts.approx_contexts.shape[1] == 2 + 2 + 3 and ts.true_contexts.shape[1] == 4 + 2 + 3


def test_true_context_tail_reproduces_approx_context():
    g = np.random.default_rng(0)
    x, y, th = g.normal(size=(4, 6, 2)), g.normal(size=(4, 6, 3)), g.normal(size=(4, 2))
    ts = training_set_from_simulations(x, y, th)
    a = ts.approx_contexts.reshape(4, 5, -1)[:, :-1]
    t = ts.true_contexts.reshape(4, 4, -1)[:, :, 2:]
    np.testing.assert_array_equal(a, t)
    np.testing.assert_array_equal(ts.approx_targets.reshape(4, 5, 2)[:, :-1], ts.true_targets.reshape(4, 4, 2))


def test_diverged_simulations_skipped_then_fatal(caplog):
    x = np.zeros((20, 4, 1))
    ok = np.ones(20, dtype=bool)
    ok[:2] = False
    ts = training_set_from_simulations(x, np.zeros((20, 4, 1)), None, ok)
    assert ts.n_skipped == 2 and ts.n_simulations == 18
    assert "skipping 2" in caplog.text
    ok[:3] = False
    with pytest.raises(TooManyDivergedError):
        training_set_from_simulations(x, np.zeros((20, 4, 1)), None, ok)


def test_approx_factor_matches_analytic_incremental_posterior(oracle):
    cfg, _, ide = oracle
    # p(X_t | X_{t-1}, y_t) for the linear model: precision 1/sx^2 + 1/sy^2
    var = 1.0 / (1 / 0.25 + 1 / 0.25)
    for xp, yt in [(0.0, 0.0), (0.5, -0.3), (-0.8, 0.6)]:
        mean = var * (0.9 * xp / 0.25 + yt / 0.25)
        s, _ = ide.approx_flow.sample(np.array([xp, yt]), RngStream(3), n=20_000)
        assert abs(s.mean() - mean) < 0.1
        # information ordering: narrower than the transition prior
        assert s.std() < 0.5


def test_ide_model_validation_and_roundtrip(tmp_path, oracle):
    _, _, ide = oracle
    with pytest.raises(ValueError):
        IdeModel(ide.true_flow, ide.true_flow, 1, 1, 0)
    ide.save(tmp_path / "m")
    back = IdeModel.load(tmp_path / "m")
    assert (back.K, back.L, back.D, back.P) == (1, 1, 0, 500)
    x, c = np.zeros((3, 1)), np.ones((3, 2))
    assert np.array_equal(back.approx_flow.log_density(x, c), ide.approx_flow.log_density(x, c))
    with pytest.raises(FileNotFoundError):
        IdeModel.load(tmp_path / "missing")


def test_minimal_training_is_loadable(tmp_path):
    g = np.random.default_rng(0)
    ts = training_set_from_simulations(g.normal(size=(30, 5, 1)), g.normal(size=(30, 5, 1)), None)
    ide = train_ide(ts, TrainConfig(patience=0, max_epochs=1, hidden=4, n_blocks=1), RngStream(0), P=10)
    assert ide.reports["approx"].epochs == 1
    ide.save(tmp_path)
    IdeModel.load(tmp_path)


def _equal_factor_model(ide):
    """A true factor that ignores X_{t+1} and equals the approximate factor."""
    q1 = ide.approx_flow
    q2 = ConditionalFlow(1, q1.context_dim + 1, q1.n_blocks, q1.hidden)
    for b1, b2 in zip(q1.blocks, q2.blocks):
        for k, v in b1.params.items():
            b2.params[k] = v.copy()
        b2.params["C1"] = np.hstack([np.zeros((q1.hidden, 1)), b1.params["C1"]])
    q2.set_standardization(q1.x_mean, q1.x_std, np.r_[0.0, q1.c_mean], np.r_[1.0, q1.c_std])
    return IdeModel(q1, q2, 1, 1, 0, P=200)


def test_equal_factors_give_uniform_weights(oracle):
    cfg, model, ide = oracle
    _, y = simulate_joint(model, np.zeros(0), RngStream(5))
    eq = _equal_factor_model(ide)
    _, w = predict_states(eq, np.zeros((3, 0)), y, RngStream(6), return_weights=True)
    np.testing.assert_allclose(w.weights, 1.0 / 200, rtol=1e-12)
    np.testing.assert_allclose(w.ess, 200.0, rtol=1e-9)


def test_weights_normalized_and_paths_on_particles(oracle):
    cfg, model, ide = oracle
    _, y = simulate_joint(model, np.zeros(0), RngStream(7))
    P, n = 100, 3
    paths, w = predict_states(ide, np.zeros((n, 0)), y, RngStream(8), P=P, return_weights=True)
    np.testing.assert_allclose(w.weights.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(w.weights >= 0) and w.fallbacks == 0
    # rebuild each θ's particle system from its noise stream and check support
    yv = y.observations
    for l in range(n):
        z = RngStream(8).child("theta", l).generator().standard_normal((cfg.M - 1, P, 1))
        xh = np.zeros((cfg.M, P, 1))
        for t in range(1, cfg.M):
            ctx = np.column_stack([xh[t - 1, :, 0], np.full(P, yv[t, 0])])
            xh[t] = ide.approx_flow.forward(z[t - 1], ctx)[0]
        for t in range(1, cfg.M):
            assert paths[l, t, 0] in xh[t, :, 0]
        assert paths[l, 0, 0] == 0.0


def test_prediction_independent_of_chunking(oracle):
    _, model, ide = oracle
    _, y = simulate_joint(model, np.zeros(0), RngStream(9))
    a, wa = predict_states(ide, np.zeros((5, 0)), y, RngStream(10), P=50, chunk=1)
    b, wb = predict_states(ide, np.zeros((5, 0)), y, RngStream(10), P=50, chunk=4)
    assert np.array_equal(a, b) and np.array_equal(wa.ess, wb.ess)


def test_paths_per_theta_layout(oracle):
    _, model, ide = oracle
    _, y = simulate_joint(model, np.zeros(0), RngStream(9))
    paths, w = predict_states(ide, np.zeros((2, 0)), y, RngStream(1), P=50, paths_per_theta=3)
    assert paths.shape == (6, model.M, 1) and w.ess.shape == (2, model.M)


def test_vanishing_weights_fall_back_to_uniform(oracle, caplog):
    _, model, ide = oracle
    broken = ConditionalFlow(1, 3, 1, 4)
    broken.blocks[0].params["bo"] = np.array([np.nan, 0.0])
    bad = IdeModel(ide.approx_flow, broken, 1, 1, 0, P=20)
    _, y = simulate_joint(model, np.zeros(0), RngStream(9))
    paths, w = predict_states(bad, np.zeros((1, 0)), y, RngStream(2))
    assert w.fallbacks == model.M - 2
    assert np.all(np.isfinite(paths))
    assert "using uniform weights" in caplog.text


def test_posterior_predictive_shapes_and_empty(oracle):
    _, model, ide = oracle
    _, y = simulate_joint(model, np.zeros(0), RngStream(9))
    paths, yrep = ide_posterior_predictive(ide, model, np.zeros((4, 0)), y, RngStream(3), P=50)
    assert paths.shape == (4, model.M, 1) and yrep.shape == (4, model.M, 1)
    p0, y0 = ide_posterior_predictive(ide, model, np.zeros((0, 0)), y, RngStream(3))
    assert p0.shape[0] == 0 and y0.shape[0] == 0


def _grid_tv(samples, mu, sd, bins=12):
    """Total variation between a histogram of ``samples`` and N(mu, sd^2) on +-3 sd bins."""
    from scipy import stats

    edges = mu + sd * np.linspace(-3, 3, bins + 1)
    edges = np.r_[-np.inf, edges, np.inf]
    emp = np.histogram(samples, edges)[0] / len(samples)
    ref = np.diff(stats.norm(mu, sd).cdf(edges))
    return 0.5 * np.abs(emp - ref).sum()


def test_importance_correction_helps_on_oracle(oracle):
    """IDE marginals are closer to the Kalman smoother than plain q1 ancestral sampling."""
    from idehmm.simulators import kalman_smoother

    cfg, model, ide = oracle
    eq = _equal_factor_model(ide)
    eq.P = ide.P
    better = 0
    for s in range(20):
        _, y = simulate_joint(model, np.zeros(0), RngStream(100).child(s))
        mean, cov = kalman_smoother(cfg, y)
        err = []
        for m in (ide, eq):
            p, _ = predict_states(m, np.zeros((200, 0)), y, RngStream(200).child(s), P=200)
            err.append(np.mean([_grid_tv(p[:, t, 0], mean[t, 0], np.sqrt(cov[t, 0, 0])) for t in range(1, cfg.M)]))
        better += err[0] <= err[1]
    print("IDE closer than q1 on", better, "of 20 datasets")
    assert better >= 16


def test_asinh_transform_equals_manual_reparameterization(oracle, tmp_path):
    cfg, model, ide = oracle
    warped = IdeModel(ide.approx_flow, ide.true_flow, 1, 1, 0, P=100, transform="asinh")
    _, obs = simulate_joint(model, np.zeros(0), RngStream(40))
    y = obs.observations
    x0 = np.array([0.7])
    got, w1 = predict_states(warped, np.zeros((6, 0)), y, RngStream(41), x0=x0)
    raw, w2 = predict_states(ide, np.zeros((6, 0)), np.arcsinh(y), RngStream(41), P=100, x0=np.arcsinh(x0))
    np.testing.assert_allclose(got[:, 1:], np.sinh(raw[:, 1:]), rtol=1e-12)
    np.testing.assert_array_equal(got[:, 0, 0], 0.7)
    np.testing.assert_array_equal(w1.ess, w2.ess)
    warped.save(tmp_path)
    assert IdeModel.load(tmp_path).transform == "asinh"


def test_unknown_transform_rejected(oracle):
    _, _, ide = oracle
    with pytest.raises(ValueError, match="transform"):
        IdeModel(ide.approx_flow, ide.true_flow, 1, 1, 0, transform="log")
