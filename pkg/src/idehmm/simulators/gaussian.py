"""Gaussian state-space models and the exact Kalman oracle.

Both models share the form::

    X_t ~ N(A mu(X_{t-1}), sigma_x^2 I),    y_t ~ N(B X_t, sigma_y^2 I)

with ``mu = sin(exp(.))`` for the nonlinear model and the identity for the
linear-Gaussian oracle. Noise scales are known, so the parameter vector is
empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ..core import ImplicitHMM, NumericalError, ObsSeries, Prior, as_generator


def gamma_fn(x):
    """Elementwise ``sin(exp(x))``."""
    return np.sin(np.exp(x))


@dataclass(frozen=True)
class NonlinearSSMConfig:
    K: int = 10
    L: int = 10
    M: int = 500
    sigma_x: float = 0.5
    sigma_y: float = 0.5
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    x0: np.ndarray | None = None
    linear: bool = field(default=False, init=False)

    def __post_init__(self):
        A = np.eye(self.K) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        B = 2.0 * np.eye(self.L, self.K) if self.B is None else np.atleast_2d(np.asarray(self.B, dtype=float))
        x0 = np.zeros(self.K) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(self.K)
        if A.shape != (self.K, self.K):
            raise ValueError(f"A must be {self.K}x{self.K}")
        if B.shape != (self.L, self.K):
            raise ValueError(f"B must be {self.L}x{self.K}")
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("noise scales must be positive")
        for name, arr in (("A", A), ("B", B), ("x0", x0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def transition_mean(self, x):
        return gamma_fn(x) @ self.A.T


@dataclass(frozen=True)
class LinearGaussianOracleConfig(NonlinearSSMConfig):
    K: int = 1
    L: int = 1
    M: int = 50
    linear: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.A is None:
            object.__setattr__(self, "A", np.eye(self.K))
        if self.B is None:
            object.__setattr__(self, "B", np.eye(self.L, self.K))
        super().__post_init__()

    def transition_mean(self, x):
        return np.asarray(x, dtype=float) @ self.A.T


class GaussianSSM(ImplicitHMM):
    """Gaussian state-space model with tractable observation density."""

    def __init__(self, cfg: NonlinearSSMConfig):
        self.cfg = cfg
        self.K, self.L = cfg.K, cfg.L
        self.times = np.arange(cfg.M, dtype=float)
        self.initial_state = cfg.x0
        self.prior = Prior((), ())
        self.param_names = ()

    def transition_mean(self, x):
        return self.cfg.transition_mean(x)

    def sample_transition(self, x_prev, theta, dt, rng):
        mean = self.transition_mean(np.atleast_2d(x_prev))
        return mean + self.cfg.sigma_x * as_generator(rng).standard_normal(mean.shape)

    def obs_mean(self, x, theta=None):
        return np.asarray(x, dtype=float) @ self.cfg.B.T

    def sample_observation(self, x, theta, rng):
        mean = self.obs_mean(x)
        return mean + self.cfg.sigma_y * as_generator(rng).standard_normal(mean.shape)

    def log_obs_density(self, y, x, theta=None):
        resid = np.asarray(y, dtype=float) - self.obs_mean(x)
        s2 = self.cfg.sigma_y**2
        return -0.5 * (np.sum(resid * resid, axis=-1) / s2 + self.L * math.log(2 * math.pi * s2))

    def simulate_states(self, theta, rng, n=None):
        rng = as_generator(rng)
        batch = 1 if n is None else n
        x = np.empty((batch, self.cfg.M, self.K))
        x[:, 0] = self.cfg.x0
        noise = rng.standard_normal((self.cfg.M - 1, batch, self.K)) * self.cfg.sigma_x
        for t in range(1, self.cfg.M):
            x[:, t] = self.transition_mean(x[:, t - 1]) + noise[t - 1]
        return x[0] if n is None else x

    def simulate_batch(self, thetas, rng):
        rng = as_generator(rng)
        n = len(thetas)
        x = self.simulate_states(None, rng, n)
        y = self.sample_observation(x.reshape(-1, self.K), None, rng).reshape(n, self.M, self.L)
        ok = np.all(np.isfinite(x), axis=(1, 2))
        return x, y, ok


def nonlinear_ssm(cfg: NonlinearSSMConfig | None = None) -> GaussianSSM:
    return GaussianSSM(cfg or NonlinearSSMConfig())


def linear_gaussian(cfg: LinearGaussianOracleConfig | None = None) -> GaussianSSM:
    return GaussianSSM(cfg or LinearGaussianOracleConfig())


# -- Kalman filtering and smoothing -------------------------------------------------


@dataclass(frozen=True)
class KalmanResult:
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    log_likelihood: float


def _obs_array(y) -> np.ndarray:
    if isinstance(y, ObsSeries):
        return np.asarray(y.observations)
    return np.atleast_2d(np.asarray(y, dtype=float).T).T


def kalman_filter(cfg: LinearGaussianOracleConfig, y) -> KalmanResult:
    """Forward pass with ``X_0`` known exactly.

    The log-likelihood covers all observations ``y_0..y_{M-1}``; ``y_0``
    contributes ``log g(y_0 | X_0)``.
    """
    if not cfg.linear:
        raise ValueError("the Kalman filter needs a linear-Gaussian configuration")
    y = _obs_array(y)
    M, K = y.shape[0], cfg.K
    A, B = cfg.A, cfg.B
    Q = cfg.sigma_x**2 * np.eye(K)
    R = cfg.sigma_y**2 * np.eye(cfg.L)
    m = np.zeros((M, K))
    P = np.zeros((M, K, K))
    mp = np.zeros((M, K))
    Pp = np.zeros((M, K, K))
    m[0] = mp[0] = cfg.x0
    resid0 = y[0] - B @ cfg.x0
    loglik = _gauss_logpdf(resid0, R)
    for t in range(1, M):
        mp[t] = A @ m[t - 1]
        Pp[t] = A @ P[t - 1] @ A.T + Q
        S = B @ Pp[t] @ B.T + R
        resid = y[t] - B @ mp[t]
        try:
            cho = linalg.cho_factor(S)
        except linalg.LinAlgError as err:
            raise NumericalError(f"innovation covariance singular at t={t}") from err
        gain = linalg.cho_solve(cho, B @ Pp[t]).T
        m[t] = mp[t] + gain @ resid
        P[t] = Pp[t] - gain @ S @ gain.T
        P[t] = 0.5 * (P[t] + P[t].T)
        loglik += _gauss_logpdf(resid, S, cho)
    return KalmanResult(m, P, mp, Pp, float(loglik))


def _gauss_logpdf(resid, cov, cho=None) -> float:
    if cho is None:
        cho = linalg.cho_factor(cov)
    z = linalg.cho_solve(cho, resid)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    return float(-0.5 * (resid @ z + logdet + len(resid) * math.log(2 * math.pi)))


def kalman_smoother(cfg: LinearGaussianOracleConfig, y) -> tuple[np.ndarray, np.ndarray]:
    """Exact marginals ``p(X_t | y_{0:M-1})`` by Rauch-Tung-Striebel smoothing.

    Returns ``(means, covs)`` of shapes ``(M, K)`` and ``(M, K, K)``; row 0 is
    the known initial state with zero covariance.
    """
    kf = kalman_filter(cfg, y)
    m, P = kf.filtered_means.copy(), kf.filtered_covs.copy()
    A = cfg.A
    for t in range(len(m) - 2, 0, -1):
        Pp = kf.predicted_covs[t + 1]
        try:
            C = linalg.solve(Pp, A @ P[t], assume_a="pos").T
        except linalg.LinAlgError as err:
            raise NumericalError(f"predicted covariance singular at t={t + 1}") from err
        m[t] = m[t] + C @ (m[t + 1] - kf.predicted_means[t + 1])
        P[t] = P[t] + C @ (P[t + 1] - Pp) @ C.T
        P[t] = 0.5 * (P[t] + P[t].T)
    return m, P


def guided_moments(cfg: NonlinearSSMConfig, x_prev, y_t) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``p(X_t | X_{t-1}, y_t)`` for a Gaussian SSM.

    ``x_prev`` is ``(n, K)``; returns means ``(n, K)`` and the shared ``(K, K)``
    covariance.
    """
    sx2, sy2 = cfg.sigma_x**2, cfg.sigma_y**2
    precision = np.eye(cfg.K) / sx2 + cfg.B.T @ cfg.B / sy2
    cov = linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    rhs = cfg.transition_mean(np.atleast_2d(x_prev)) / sx2 + (np.asarray(y_t) @ cfg.B) / sy2
    return rhs @ cov.T, cov
