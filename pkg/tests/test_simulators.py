import math

import numba
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from idehmm.core import ObsSeries, RngStream, StatePath, as_generator
from idehmm.simulators import (
    LV_TRUE_THETA,
    PKY_TRUE_THETA,
    LinearGaussianOracleConfig,
    NonlinearSSMConfig,
    ReactionNetwork,
    SSAExplosionError,
    gamma_fn,
    kalman_filter,
    kalman_smoother,
    lotka_volterra_network,
    lv_model,
    nonlinear_ssm,
    pky_model,
    prokaryotic_full_network,
    prokaryotic_network,
    read_trajectory_csv,
    ssa_simulate,
    summarize,
    trajectory_csv,
    write_trajectory_csv,
)
from idehmm.simulators.ssa import PKY_FULL_STOICHIOMETRY, PKY_REDUCED_STOICHIOMETRY


@numba.njit
def _death_hazard(x, c, out):
    out[0] = c[0] * x[0]


DEATH = ReactionNetwork(np.array([[-1]]), _death_hazard, ("A",))


def _reference_ssa(hazard, S, x0, c, record, rng):
    """Plain-Python direct method, written independently of the numba kernel."""
    x = np.array(x0, dtype=np.int64)
    t, out = record[0], []
    for r_time in record:
        while True:
            h = hazard(x, c)
            tot = h.sum()
            if tot == 0:
                break
            tau = rng.exponential(1 / tot)
            if t + tau > r_time:
                # memoryless: discard the overshoot and restart from r_time
                t = r_time
                break
            t += tau
            x = x + S[:, rng.choice(len(h), p=h / tot)]
        out.append(x.copy())
    return np.array(out)


def test_pure_death_mean_matches_analytic():
    n = 10_000
    out, status, _ = DEATH.run(np.full((n, 1), 100), np.array([1.0]), np.array([0.0, 1.0]), as_generator(11))
    x1 = out[:, 1, 0].astype(float)
    p = math.exp(-1.0)
    se = math.sqrt(100 * p * (1 - p) / n)
    assert abs(x1.mean() - 100 * p) < 3 * se
    # binomial variance as well
    assert x1.var() == pytest.approx(100 * p * (1 - p), rel=0.06)


def test_ssa_states_are_nonnegative_integers():
    path = ssa_simulate(lotka_volterra_network(), LV_TRUE_THETA, [100, 100], np.arange(20.0), RngStream(2))
    assert isinstance(path, StatePath)
    assert np.all(path.states >= 0) and np.all(path.states == np.round(path.states))


def test_lv_hazard_vector():
    np.testing.assert_allclose(lotka_volterra_network().hazard_vector([100, 100], LV_TRUE_THETA), [30, 25, 50])


def test_pky_hazard_vector():
    h = prokaryotic_network(10.0).hazard_vector([8, 8, 8, 5], np.ones(8))
    np.testing.assert_allclose(h, [40, 5, 5, 8, 28, 8, 8, 8])


def test_zero_state_is_absorbing():
    path = ssa_simulate(lotka_volterra_network(), LV_TRUE_THETA, [0, 0], np.arange(5.0), RngStream(0))
    assert np.all(path.states == 0)


def test_ssa_explosion_guard_carries_partial_path():
    with pytest.raises(SSAExplosionError) as err:
        ssa_simulate(DEATH, [1.0], [1000], np.array([0.0, 0.5, 100.0]), RngStream(0), max_events=200)
    assert err.value.partial.shape[1] == 1
    assert err.value.time_index == 1


def test_ssa_input_validation():
    with pytest.raises(ValueError):
        ssa_simulate(DEATH, [1.0], [-1], [0.0, 1.0], RngStream(0))
    with pytest.raises(ValueError):
        ssa_simulate(DEATH, [0.0], [3], [0.0, 1.0], RngStream(0))


def test_lv_mean_matches_reference_ssa():
    def lv_h(x, c):
        return np.array([c[0] * x[0], c[1] * x[0] * x[1], c[2] * x[1]])

    S = np.array([[1, -1, 0], [0, 1, -1]])
    record = np.array([0.0, 1.0, 2.0])
    g = np.random.default_rng(5)
    ref = np.array([_reference_ssa(lv_h, S, [100, 100], LV_TRUE_THETA, record, g)[-1] for _ in range(2000)])
    out, _, _ = lotka_volterra_network().run(np.full((10_000, 2), 100), LV_TRUE_THETA, record, as_generator(6))
    fast = out[:, -1].astype(float)
    se = np.sqrt(ref.var(axis=0) / len(ref) + fast.var(axis=0) / len(fast))
    assert np.all(np.abs(ref.mean(axis=0) - fast.mean(axis=0)) < 3 * se)


def test_pky_conservation_law():
    model = pky_model()
    x = model.simulate_states(PKY_TRUE_THETA, as_generator(1), n=1000)
    assert x[..., 3].max() <= 10 and x[..., 3].min() >= 0


def test_pky_stoichiometry_derivation():
    # full network: DNA.P2 row is minus the DNA row (conservation)
    assert np.array_equal(PKY_FULL_STOICHIOMETRY[4], -PKY_FULL_STOICHIOMETRY[3])
    # R1: DNA + P2 -> DNA.P2
    assert list(PKY_REDUCED_STOICHIOMETRY[:, 0]) == [0, 0, -1, -1]
    # R5: 2P -> P2
    assert list(PKY_REDUCED_STOICHIOMETRY[:, 4]) == [0, -2, 1, 0]


def test_pky_reduced_matches_full():
    n, record = 4000, np.array([0.0, 2.0, 5.0])
    red, _, _ = prokaryotic_network(10.0).run(np.tile([8, 8, 8, 5], (n, 1)), PKY_TRUE_THETA, record, as_generator(3))
    full, _, _ = prokaryotic_full_network().run(np.tile([8, 8, 8, 5, 5], (n, 1)), PKY_TRUE_THETA, record,
                                                as_generator(4))
    assert np.all(full[..., 3] + full[..., 4] == 10)
    a, b = red[:, -1].astype(float), full[:, -1, :4].astype(float)
    se = np.sqrt(a.var(axis=0) / n + b.var(axis=0) / n)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se + 1e-12)


def test_lv_model_configuration():
    m = lv_model()
    assert (m.K, m.L, m.M) == (2, 2, 50)
    np.testing.assert_array_equal(m.x0(), [100, 100])
    assert m.param_names == ("c1", "c2", "c3")
    c2 = m.prior.sample(as_generator(0), 5000)[:, 1]
    assert c2.min() >= 0.015 and c2.max() <= 0.05


def test_lv_obs_density_at_twice_state():
    m = lv_model()
    x = np.array([40.0, 70.0])
    y = 2 * x
    ref = stats.norm(x, 10.0).logpdf(y).sum()
    assert m.log_obs_density(y, x) == pytest.approx(ref, rel=1e-12)


def test_obs_density_normalized_on_slice():
    m = lv_model()
    x = np.array([50.0, 60.0])
    grid = np.linspace(0, 120, 4001)
    ys = np.column_stack([grid, np.full_like(grid, 60.0)])
    vals = np.exp(m.log_obs_density(ys, x) - stats.norm(0, 10).logpdf(0))
    assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-6)


def test_pky_model_configuration():
    m = pky_model()
    assert (m.K, m.L, m.M) == (4, 1, 100)
    np.testing.assert_allclose(m.times[[0, 1, -1]], [0.0, 0.5, 49.5])
    np.testing.assert_allclose(m.obs_mean(np.array([[8.0, 3.0, 4.0, 5.0]])), [[11.0]])


def test_nonlinear_transition_mean_at_zero():
    m = nonlinear_ssm(NonlinearSSMConfig(K=3, L=3, M=4))
    np.testing.assert_allclose(m.transition_mean(np.zeros((1, 3))), np.full((1, 3), math.sin(1.0)))


def test_nonlinear_ssm_deterministic_limit():
    cfg = NonlinearSSMConfig(K=2, L=2, M=6, sigma_x=1e-300)
    m = nonlinear_ssm(cfg)
    a = m.simulate_states(np.zeros(0), as_generator(1))
    b = m.simulate_states(np.zeros(0), as_generator(2))
    np.testing.assert_array_equal(a, b)


def test_ssm_config_validation():
    with pytest.raises(ValueError):
        NonlinearSSMConfig(K=2, L=2, A=np.eye(3))
    with pytest.raises(ValueError):
        NonlinearSSMConfig(K=2, L=2, sigma_y=0.0)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 3)), elements=st.floats(-3, 3)))
@settings(max_examples=40, deadline=None)
def test_gamma_elementwise(x):
    out = gamma_fn(x)
    assert out.shape == x.shape
    for idx in np.ndindex(x.shape):
        assert out[idx] == pytest.approx(math.sin(math.exp(x[idx])), rel=1e-13, abs=1e-15)


def _grid_smoother(cfg, y, lo=-6, hi=8, n=1201):
    """Brute-force marginal moments of X_1, X_2 for a K=1, M=3 model by 2-D quadrature."""
    g = np.linspace(lo, hi, n)
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    a, sx, sy = cfg.A[0, 0], cfg.sigma_x, cfg.sigma_y
    x0 = cfg.x0[0]
    logp = (stats.norm(a * x0, sx).logpdf(x1) + stats.norm(a * x1, sx).logpdf(x2)
            + stats.norm(x1, sy).logpdf(y[1, 0]) + stats.norm(x2, sy).logpdf(y[2, 0]))
    w = np.exp(logp - logp.max())
    z = np.trapezoid(np.trapezoid(w, g, axis=1), g)
    m1 = np.trapezoid(np.trapezoid(w * x1, g, axis=1), g) / z
    m2 = np.trapezoid(np.trapezoid(w * x2, g, axis=1), g) / z
    v1 = np.trapezoid(np.trapezoid(w * (x1 - m1) ** 2, g, axis=1), g) / z
    v2 = np.trapezoid(np.trapezoid(w * (x2 - m2) ** 2, g, axis=1), g) / z
    return np.array([m1, m2]), np.array([v1, v2])


@pytest.mark.parametrize("A,s", [(1.0, 1.0), (0.9, 0.5)])
def test_kalman_smoother_matches_grid_quadrature(A, s):
    cfg = LinearGaussianOracleConfig(K=1, L=1, M=3, A=[[A]], sigma_x=s, sigma_y=s, x0=[0.3])
    y = np.array([[0.1], [1.2], [0.4]])
    mean, cov = kalman_smoother(cfg, y)
    gm, gv = _grid_smoother(cfg, y)
    np.testing.assert_allclose(mean[1:, 0], gm, atol=1e-4)
    np.testing.assert_allclose(cov[1:, 0, 0], gv, atol=1e-4)
    assert mean[0, 0] == 0.3 and cov[0, 0, 0] == 0.0


def test_kalman_noiseless_limit():
    cfg = LinearGaussianOracleConfig(K=2, L=2, M=4, A=0.8 * np.eye(2), B=[[1.0, 0.5], [0.0, 2.0]],
                                     sigma_x=1.0, sigma_y=1e-7)
    y = as_generator(1).standard_normal((4, 2))
    mean, cov = kalman_smoother(cfg, y)
    np.testing.assert_allclose(mean[1:], np.linalg.solve(cfg.B, y[1:].T).T, atol=1e-6)
    assert np.abs(cov[1:]).max() < 1e-10


def test_kalman_prior_only_limit():
    cfg = LinearGaussianOracleConfig(K=1, L=1, M=5, A=[[0.7]], sigma_x=0.5, sigma_y=1e8, x0=[2.0])
    mean, _ = kalman_smoother(cfg, np.ones((5, 1)))
    np.testing.assert_allclose(mean[:, 0], 2.0 * 0.7 ** np.arange(5), atol=1e-6)


def test_kalman_loglik_matches_dense_gaussian():
    cfg = LinearGaussianOracleConfig(K=1, L=1, M=6, A=[[0.9]], sigma_x=0.5, sigma_y=0.5, x0=[0.2])
    y = as_generator(2).standard_normal((6, 1))
    # dense joint covariance of y_0..y_5 with X_t = sum_s a^(t-s) e_s
    a, M = 0.9, 6
    mean = 0.2 * a ** np.arange(M)
    C = np.zeros((M, M))
    for i in range(M):
        for j in range(M):
            C[i, j] = sum(a ** (i - s) * a ** (j - s) for s in range(1, min(i, j) + 1)) * 0.25
    C += 0.25 * np.eye(M)
    ref = stats.multivariate_normal(mean, C).logpdf(y[:, 0])
    assert kalman_filter(cfg, y).log_likelihood == pytest.approx(ref, rel=1e-10)


def test_kalman_rejects_nonlinear():
    with pytest.raises(ValueError):
        kalman_filter(NonlinearSSMConfig(K=1, L=1, M=3), np.zeros((3, 1)))


def test_summarize_dimensions():
    y = np.arange(20.0).reshape(10, 2)
    np.testing.assert_array_equal(summarize(y, 1), y.ravel())
    assert summarize(np.zeros((50, 2)), 5).shape == (20,)
    assert summarize(np.zeros((100, 1)), 5).shape == (20,)
    np.testing.assert_array_equal(summarize(y, 5), [8, 9, 18, 19])
    assert summarize(np.zeros((3, 50, 2)), 5).shape == (3, 20)
    with pytest.raises(ValueError):
        summarize(y, 0)


def test_trajectory_csv_roundtrip(tmp_path, lg_model):
    from idehmm.core import simulate_joint

    x, y = simulate_joint(lg_model, np.zeros(0), RngStream(3))
    text = trajectory_csv(x, y)
    assert text.splitlines()[0] == "time,x1,y1"
    write_trajectory_csv(tmp_path / "t.csv", x, y)
    x2, y2 = read_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(x2.states, x.states)
    np.testing.assert_array_equal(y2.observations, y.observations)
    with pytest.raises(ValueError):
        trajectory_csv(x, ObsSeries(y.observations[:-1], y.times[:-1]))
