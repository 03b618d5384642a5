import numpy as np
import pytest
from scipy import stats

from idehmm.core import Beta, CountingModel, ImplicitHMM, Prior, RngStream, Uniform
from idehmm.flows import TrainConfig
from idehmm.snle import (
    McmcStuckError,
    PosteriorSampleSet,
    SliceConfig,
    SliceSamplerError,
    SnleConfig,
    slice_sample,
    snle_run,
)


def test_slice_standard_normal_moments():
    s = slice_sample(lambda x: -0.5 * float(x @ x), [3.0], 10_000, RngStream(0).generator())
    assert abs(s.mean()) < 0.05
    assert abs(s.var() - 1.0) < 0.1


def test_slice_independent_coordinates():
    s = slice_sample(lambda x: -0.5 * x[0] ** 2 - 0.5 * (x[1] / 3) ** 2, [0.0, 0.0], 10_000,
                     RngStream(1).generator(), widths=[1.0, 3.0])
    assert abs(np.corrcoef(s.T)[0, 1]) <= 0.05


def test_slice_uniform_target():
    lt = lambda x: 0.0 if 0.0 <= x[0] <= 1.0 else -np.inf
    s = slice_sample(lt, [0.5], 4000, RngStream(2).generator(), widths=[0.3])
    assert stats.kstest(s[:, 0], "uniform").pvalue > 0.01


def test_slice_thinning_shape():
    s = slice_sample(lambda x: -0.5 * float(x @ x), np.zeros(2), 50, RngStream(3).generator(), thin=5)
    assert s.shape == (10, 2)


def test_slice_step_out_cap_names_coordinate():
    flat_second = lambda x: -0.5 * x[0] ** 2
    with pytest.raises(SliceSamplerError) as err:
        slice_sample(flat_second, [0.0, 0.0], 5, RngStream(4).generator(), widths=[1.0, 0.01],
                     cfg=SliceConfig(max_step_out=50))
    assert err.value.coordinate == 1


def test_slice_requires_finite_start():
    with pytest.raises(ValueError):
        slice_sample(lambda x: -np.inf, [0.0], 5, RngStream(0).generator())


def test_snle_config_validation():
    with pytest.raises(ValueError):
        SnleConfig(rounds=0)
    with pytest.raises(ValueError):
        SnleConfig(thin=0)


class _Drift(ImplicitHMM):
    """X_t = X_{t-1} + theta + N(0, 0.1^2), y = X + N(0, 0.5^2); diverges for theta > 0.8."""

    K, L = 1, 1

    def __init__(self, M=10):
        self.times = np.arange(float(M))
        self.initial_state = np.zeros(1)
        self.prior = Prior((Uniform(-1.0, 1.0),), ("drift",))
        self.param_names = ("drift",)

    def sample_transition(self, x_prev, theta, dt, rng):
        if np.asarray(theta).reshape(-1)[0] > 0.8:
            return np.full_like(np.asarray(x_prev, dtype=float), np.nan)
        return np.asarray(x_prev) + theta + 0.1 * rng.standard_normal(np.shape(x_prev))

    def sample_observation(self, x, theta, rng):
        return np.asarray(x) + 0.5 * rng.standard_normal(np.shape(x))


def test_exact_likelihood_gives_conjugate_posterior():
    data = np.random.default_rng(0).normal(1.3, 1.0, 10)
    prior = Prior((Uniform(-10.0, 10.0),), ("mu",))
    ll = lambda th: float(stats.norm(th[0], 1.0).logpdf(data).sum())
    cfg = SnleConfig(rounds=1, burn_in=500, thin=5, n_posterior=500)
    res = snle_run(None, prior, None, cfg, RngStream(1), log_likelihood=ll)
    post = stats.norm(data.mean(), 1 / np.sqrt(10))
    assert stats.kstest(res.samples[:, 0], post.cdf).pvalue > 0.01
    assert res.samples.shape == (500, 1) and res.names == ("mu",)


def test_uninformative_likelihood_recovers_prior():
    prior = Prior((Beta(1, 2), Uniform(0.015, 0.05), Beta(2, 1)), ("c1", "c2", "c3"))
    cfg = SnleConfig(rounds=1, burn_in=200, thin=5, n_posterior=500)
    res = snle_run(None, prior, None, cfg, RngStream(2), log_likelihood=lambda th: 0.0)
    for i, comp in enumerate(prior.components):
        cdf = (stats.beta(comp.a, comp.b).cdf if isinstance(comp, Beta)
               else stats.uniform(comp.lo, comp.hi - comp.lo).cdf)
        assert stats.kstest(res.samples[:, i], cdf).pvalue > 0.01
    assert np.all(prior.in_support(res.samples))


def test_stuck_chain_reports_round():
    prior = Prior((Uniform(0.0, 1.0),), ("a",))
    with pytest.raises(McmcStuckError) as err:
        snle_run(None, prior, None, SnleConfig(rounds=1), RngStream(0), log_likelihood=lambda th: -np.inf)
    assert err.value.round_index == 1


def test_sequential_rounds_accumulate_data(tmp_path):
    model = CountingModel(_Drift())
    truth = 0.3
    x = np.cumsum(np.r_[0.0, np.full(9, truth)])
    y_o = (x + np.random.default_rng(0).normal(0, 0.5, 10))[:, None]
    cfg = SnleConfig(rounds=3, n_first=200, n_round=60, burn_in=100, thin=2, n_posterior=40, summary_factor=1,
                     train=TrainConfig(n_blocks=2, hidden=16, lr=5e-3, max_epochs=30, patience=5))
    res = snle_run(model, None, y_o, cfg, RngStream(3))
    sizes = res.diagnostics["dataset_sizes"]
    # the prior puts 10% of its mass on the diverging region theta > 0.8
    assert 160 < sizes[0] < 200
    assert sizes[1] - sizes[0] <= 60 and sizes[2] - sizes[1] <= 60
    assert res.diagnostics["simulations"] == 200 + 2 * 60 == model.calls
    assert np.all(model.prior.in_support(res.samples))
    assert abs(res.samples.mean() - truth) < 0.15
    res.to_csv(tmp_path / "post.csv")
    lines = (tmp_path / "post.csv").read_text().splitlines()
    assert lines[0] == "drift" and len(lines) == 41


def test_snle_reproducible():
    model = _Drift()
    y_o = np.linspace(0, 3, 10)[:, None]
    cfg = SnleConfig(rounds=2, n_first=100, n_round=20, burn_in=20, thin=1, n_posterior=10, summary_factor=2,
                     train=TrainConfig(n_blocks=1, hidden=8, max_epochs=3))
    a = snle_run(model, None, y_o, cfg, RngStream(5))
    b = snle_run(model, None, y_o, cfg, RngStream(5))
    assert np.array_equal(a.samples, b.samples)


def test_posterior_sample_set_default_size():
    prior = Prior((Uniform(0.0, 1.0), Uniform(0.0, 1.0)), ("a", "b"))
    res = snle_run(None, prior, None, SnleConfig(rounds=1, burn_in=10), RngStream(0),
                   log_likelihood=lambda th: 0.0)
    assert isinstance(res, PosteriorSampleSet)
    assert res.samples.shape == (500, 2)
