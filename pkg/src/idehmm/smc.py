"""Particle filters: bootstrap and guided SMC, resampling, and the PrDyn baseline.

Weights are kept in log space. Resampling (systematic) happens before a
propagation step whenever the ESS of the current weights drops below
``threshold * P``. Smoothed paths are drawn by tracing the ancestral lineage
of final-step particles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ImplicitHMM, NumericalError, ObsSeries, RngStream, SimulationDivergedError, StatePath, as_generator
from .simulators.gaussian import NonlinearSSMConfig, _obs_array

log = logging.getLogger(__name__)

MAX_DIVERGED_FRACTION = 0.10


class DegeneracyError(NumericalError):
    def __init__(self, time_index: int):
        self.time_index = time_index
        super().__init__(f"all particle weights are zero at time index {time_index}")


@dataclass(frozen=True)
class WeightedParticleCloud:
    particles: np.ndarray
    log_weights: np.ndarray
    normalized_weights: np.ndarray

    @classmethod
    def from_log_weights(cls, particles, log_weights):
        w, _ = normalize_log_weights(log_weights)
        return cls(np.asarray(particles, dtype=float), np.asarray(log_weights, dtype=float), w)

    @property
    def ess(self) -> float:
        return ess(self.normalized_weights)


@dataclass(frozen=True)
class FilterResult:
    paths: np.ndarray          # (n_paths, M, K)
    log_z: float
    ess: np.ndarray            # (M,) ESS of the weights at each step
    filter_means: np.ndarray   # (M, K)
    resampled: np.ndarray      # (M,) bool, resampling before step t

    @property
    def min_ess(self) -> float:
        return float(self.ess.min())


def normalize_log_weights(logw) -> tuple[np.ndarray, float]:
    """Return normalized weights and ``logsumexp(logw)``."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise NumericalError("cannot normalize: no finite log-weight")
    w = np.exp(logw - top)
    s = w.sum()
    return w / s, float(top + math.log(s))


def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, P: int, rng) -> np.ndarray:
    """``P`` ancestor indices; particle ``i`` gets ``floor(P w_i)`` or ``ceil(P w_i)`` copies."""
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = (as_generator(rng).random() + np.arange(P)) / P
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(w) - 1)


def _trace(particles, ancestors, final_idx):
    M = particles.shape[0]
    out = np.empty((len(final_idx), M, particles.shape[2]))
    idx = np.asarray(final_idx)
    for t in range(M - 1, -1, -1):
        out[:, t] = particles[t, idx]
        idx = ancestors[t, idx]
    return out


def _run_filter(x0, M, P, propose, log_g0, rng, n_paths, threshold, store):
    """Generic SMC loop.

    ``propose(x_prev, t, rng)`` returns new particles and their incremental
    log-weights. ``ancestors[t, p]`` is the index at ``t-1`` of particle ``p``.
    """
    K = len(x0)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (P, K)).copy()
    logw = np.full(P, float(log_g0))
    log_z = float(log_g0)
    ess_t = np.empty(M)
    means = np.empty((M, K))
    resampled = np.zeros(M, dtype=bool)
    w, _ = normalize_log_weights(logw)
    ess_t[0] = ess(w)
    means[0] = x0
    if store:
        hist = np.empty((M, P, K))
        anc = np.zeros((M, P), dtype=np.int64)
        hist[0] = x
    for t in range(1, M):
        if ess_t[t - 1] < threshold * P:
            a = systematic_resample(w, P, rng)
            carry = np.zeros(P)
            resampled[t] = True
        else:
            a = np.arange(P)
            with np.errstate(divide="ignore"):
                carry = np.log(w)
        x, incr = propose(x[a], t, rng)
        logw = carry + incr
        if not np.any(np.isfinite(logw)) or np.all(logw == -np.inf):
            raise DegeneracyError(t)
        w, lse = normalize_log_weights(logw)
        log_z += lse - float(logsumexp(carry))
        ess_t[t] = ess(w)
        means[t] = w @ x
        if store:
            hist[t] = x
            anc[t] = a
    if store and n_paths:
        final = as_generator(rng).choice(P, size=n_paths, p=w)
        paths = _trace(hist, anc, final)
    else:
        paths = np.empty((0, M, K))
    return FilterResult(paths, log_z, ess_t, means, resampled)


def bootstrap_filter(model: ImplicitHMM, theta, y, P: int, rng, n_paths: int = 1,
                     threshold: float = 0.5, store_paths: bool = True) -> FilterResult:
    """Bootstrap particle filter with known initial state ``X_0``.

    ``log_z`` estimates ``log p(y_0, ..., y_{M-1} | theta)`` and includes the
    ``y_0`` term.
    """
    if not model.has_obs_density:
        raise ValueError("the bootstrap filter needs log_obs_density")
    if P < 1:
        raise ValueError("P must be positive")
    rng = as_generator(rng)
    y = _obs_array(y)
    theta = None if theta is None else np.asarray(theta, dtype=float)
    times = model.times
    x0 = model.x0(theta)
    log_g0 = float(model.log_obs_density(y[0], x0, theta))

    def propose(x_prev, t, rng):
        x_new = model.sample_transition(x_prev, theta, times[t] - times[t - 1], rng)
        return x_new, model.log_obs_density(y[t], x_new, theta)

    return _run_filter(x0, len(y), P, propose, log_g0, rng, n_paths, threshold, store_paths)


@dataclass(frozen=True)
class GuidedProposal:
    """Conditionally optimal proposal ``p(X_t | X_{t-1}, y_t)`` of a Gaussian SSM."""

    cfg: NonlinearSSMConfig

    @property
    def covariance(self) -> np.ndarray:
        c = self.cfg
        prec = np.eye(c.K) / c.sigma_x**2 + c.B.T @ c.B / c.sigma_y**2
        cov = np.linalg.inv(prec)
        return 0.5 * (cov + cov.T)

    def mean(self, x_prev, y_t) -> np.ndarray:
        c = self.cfg
        rhs = c.transition_mean(np.atleast_2d(x_prev)) / c.sigma_x**2 + np.asarray(y_t) @ c.B / c.sigma_y**2
        return rhs @ self.covariance.T

    def log_predictive(self, x_prev, y_t) -> np.ndarray:
        """``log p(y_t | X_{t-1})``, the incremental weight under this proposal."""
        c = self.cfg
        S = c.sigma_x**2 * c.B @ c.B.T + c.sigma_y**2 * np.eye(c.L)
        chol = np.linalg.cholesky(S)
        resid = np.asarray(y_t) - c.transition_mean(np.atleast_2d(x_prev)) @ c.B.T
        z = np.linalg.solve(chol, resid.T).T
        return -0.5 * np.sum(z * z, axis=1) - np.log(np.diag(chol)).sum() - 0.5 * c.L * math.log(2 * math.pi)


def guided_filter(cfg: NonlinearSSMConfig, y, P: int, rng, n_paths: int = 1,
                  threshold: float = 0.5, store_paths: bool = True) -> FilterResult:
    """Particle filter proposing from the exact ``p(X_t | X_{t-1}, y_t)``.

    With this proposal ``f g / q`` reduces to ``p(y_t | X_{t-1})``, which is
    used directly as the incremental weight.
    """
    rng = as_generator(rng)
    y = _obs_array(y)
    prop = GuidedProposal(cfg)
    chol = np.linalg.cholesky(prop.covariance)
    resid0 = y[0] - cfg.B @ cfg.x0
    log_g0 = float(-0.5 * resid0 @ resid0 / cfg.sigma_y**2 - 0.5 * cfg.L * math.log(2 * math.pi * cfg.sigma_y**2))

    def propose(x_prev, t, rng):
        incr = prop.log_predictive(x_prev, y[t])
        mean = prop.mean(x_prev, y[t])
        return mean + rng.standard_normal(mean.shape) @ chol.T, incr

    return _run_filter(cfg.x0, len(y), P, propose, log_g0, rng, n_paths, threshold, store_paths)


# -- PrDyn and predictive -----------------------------------------------------------


def prdyn_sample(model: ImplicitHMM, theta, rng) -> StatePath:
    """Latent path from the prior dynamics, ignoring the observations."""
    return StatePath(model.simulate_states(np.asarray(theta, dtype=float), as_generator(rng)), model.times)


def _theta_rng(rng, i):
    return rng.child("theta", i) if isinstance(rng, RngStream) else rng


class TooManyDivergedPathsError(SimulationDivergedError):
    def __init__(self, diverged: int, total: int):
        self.diverged, self.total = diverged, total
        super().__init__(-1, f"{diverged} of {total} θ samples diverged (limit {MAX_DIVERGED_FRACTION:.0%})")


def _finish_skips(kind, out, ok, extra=None):
    bad = int((~ok).sum())
    if bad:
        log.warning("%s: dropped %d of %d θ samples whose simulation diverged", kind, bad, len(ok))
    if bad > MAX_DIVERGED_FRACTION * len(ok):
        raise TooManyDivergedPathsError(bad, len(ok))
    kept = (out[ok],) if extra is None else (out[ok], extra[ok])
    return (*kept, ok)


def prdyn_paths(model: ImplicitHMM, thetas, rng, skip_diverged: bool = False):
    """One PrDyn path per row of ``thetas``; ``(n, M, K)``.

    With ``skip_diverged`` a θ whose simulation diverges (e.g. an SSA
    explosion) is dropped with a warning and ``(paths, kept_mask)`` is
    returned; more than 10% dropped is an error.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float)) if len(thetas) else np.empty((0, model.D))
    gen = None if isinstance(rng, RngStream) else as_generator(rng)
    out = np.empty((len(thetas), model.M, model.K))
    ok = np.ones(len(thetas), dtype=bool)
    for i, th in enumerate(thetas):
        try:
            out[i] = model.simulate_states(th, as_generator(rng.child("theta", i)) if gen is None else gen)
        except SimulationDivergedError:
            if not skip_diverged:
                raise
            ok[i] = False
    return _finish_skips("PrDyn", out, ok) if skip_diverged else out


def push_through_observation(model: ImplicitHMM, paths, thetas, rng) -> np.ndarray:
    """Replicated observations ``y^r ~ g(. | x)`` for each path; ``(n, M, L)``."""
    paths = np.asarray(paths, dtype=float)
    n = len(paths)
    if n == 0:
        return np.empty((0, model.M, model.L))
    rng = as_generator(rng)
    out = np.empty((n, paths.shape[1], model.L))
    for i in range(n):
        th = None if thetas is None else np.asarray(thetas[i], dtype=float)
        out[i] = model.sample_observation(paths[i], th, rng)
    return out


def smc_paths(model: ImplicitHMM, thetas, y, P: int, rng, return_ess: bool = False,
              skip_diverged: bool = False):
    """One genealogy-traced smoothed path per θ sample; ``(n, M, K)``.

    With ``return_ess`` also the ``(n, M)`` per-step ESS of every filter run.
    With ``skip_diverged`` filter runs whose transition simulation diverges
    are dropped as in :func:`prdyn_paths` and the kept mask is appended to
    the returned tuple.
    """
    thetas = np.asarray(thetas, dtype=float).reshape(len(thetas), -1)
    gen = None if isinstance(rng, RngStream) else as_generator(rng)
    M = len(_obs_array(y))
    out = np.empty((len(thetas), M, model.K))
    ess_out = np.empty((len(thetas), M))
    ok = np.ones(len(thetas), dtype=bool)
    for i, th in enumerate(thetas):
        r = as_generator(rng.child("theta", i)) if gen is None else gen
        try:
            res = bootstrap_filter(model, th if th.size else None, y, P, r, n_paths=1)
        except SimulationDivergedError:
            if not skip_diverged:
                raise
            ok[i] = False
            continue
        out[i] = res.paths[0]
        ess_out[i] = res.ess
    if skip_diverged:
        paths, ess_kept, ok = _finish_skips("SMC", out, ok, ess_out)
        return (paths, ess_kept, ok) if return_ess else (paths, ok)
    return (out, ess_out) if return_ess else out


def smc_posterior_predictive(model: ImplicitHMM, thetas, y, P: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per θ: filter, draw one smoothed path, replicate the observations.

    Returns ``(paths, y_rep)`` of shapes ``(n, M, K)`` and ``(n, M, L)``.
    """
    paths = smc_paths(model, thetas, y, P, rng)
    obs_rng = rng.child("obs") if isinstance(rng, RngStream) else rng
    return paths, push_through_observation(model, paths, thetas, obs_rng)


__all__ = [
    "DegeneracyError", "FilterResult", "GuidedProposal", "TooManyDivergedPathsError", "WeightedParticleCloud",
    "bootstrap_filter",
    "ess", "guided_filter", "normalize_log_weights", "prdyn_paths", "prdyn_sample",
    "push_through_observation", "smc_paths", "smc_posterior_predictive", "systematic_resample",
]
