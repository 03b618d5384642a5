"""Domain types, priors and the implicit hidden Markov model interface.

Every stochastic routine in the package draws from a ``numpy.random.Generator``.
:class:`RngStream` is the reproducible way to obtain one: a ``(seed, stream)``
pair always yields the same generator, and distinct streams are independent
children of the same ``SeedSequence``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special


class SimulationDivergedError(RuntimeError):
    """A simulator produced a non-finite state."""

    def __init__(self, time_index: int, message: str | None = None):
        self.time_index = time_index
        super().__init__(message or f"simulation diverged at time index {time_index}")


class NumericalError(ArithmeticError):
    """A numerical routine hit a singular or non-finite intermediate."""


@dataclass(frozen=True)
class RngStream:
    """Reproducible source of random generators.

    ``RngStream(seed, stream)`` is hashable and cheap; call :meth:`generator`
    to obtain a fresh ``numpy.random.Generator`` positioned at the start of
    the stream. Named sub-streams are derived with :meth:`child`.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int | str) -> RngStream:
        return RngStream(self.seed, self.stream + tuple(_stream_key(k) for k in keys))


def _stream_key(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def as_generator(rng: np.random.Generator | RngStream | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def _frozen(a, ndim: int, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim == ndim - 1:
        arr = arr.reshape(-1, 1) if ndim == 2 else arr
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    names: tuple[str, ...]
    fixed_initial_state: np.ndarray | None = None

    def __post_init__(self):
        values = _frozen(self.values, 1)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if len(values) != len(self.names):
            raise ValueError("values and names differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        if self.fixed_initial_state is not None:
            object.__setattr__(self, "fixed_initial_state", _frozen(self.fixed_initial_state, 1))

    def __len__(self) -> int:
        return len(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class StatePath:
    """Latent trajectory, one row per record time (row 0 is the initial state)."""

    states: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states, 2)
        times = _frozen(self.times, 1)
        if states.shape[0] != times.shape[0]:
            raise ValueError("row count of states must equal the number of times")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def K(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class ObsSeries:
    observations: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        obs = _frozen(self.observations, 2)
        times = _frozen(self.times, 1)
        if obs.shape[0] != times.shape[0]:
            raise ValueError("row count of observations must equal the number of times")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "times", times)

    @property
    def M(self) -> int:
        return self.observations.shape[0]

    @property
    def L(self) -> int:
        return self.observations.shape[1]


# -- priors -------------------------------------------------------------------


class Distribution1D:
    """Univariate prior component with a bijection to the real line."""

    lower: float = -math.inf
    upper: float = math.inf

    def log_pdf(self, x):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def std(self) -> float:
        raise NotImplementedError

    def in_support(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper)

    # unconstrained reparametrisation, used by MCMC
    def to_unconstrained(self, x):
        raise NotImplementedError

    def from_unconstrained(self, u):
        """Return ``(x, log|dx/du|)``."""
        raise NotImplementedError


class _IntervalMixin:
    # logit of the position inside (lower, upper)
    def to_unconstrained(self, x):
        p = (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)
        return special.logit(p)

    def from_unconstrained(self, u):
        u = np.asarray(u, dtype=float)
        p = special.expit(u)
        width = self.upper - self.lower
        log_jac = math.log(width) - np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)
        return self.lower + width * p, log_jac


@dataclass(frozen=True)
class Beta(_IntervalMixin, Distribution1D):
    a: float
    b: float
    lower = 0.0
    upper = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Beta parameters must be positive")

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.in_support(x)
        xs = np.where(inside, x, 0.5)
        out = (
            (self.a - 1) * np.log(xs)
            + (self.b - 1) * np.log1p(-xs)
            - special.betaln(self.a, self.b)
        )
        return np.where(inside, out, -np.inf)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size=size)

    @property
    def mean(self):
        return self.a / (self.a + self.b)

    @property
    def std(self):
        s = self.a + self.b
        return math.sqrt(self.a * self.b / (s * s * (s + 1)))


@dataclass(frozen=True)
class Uniform(_IntervalMixin, Distribution1D):
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("Uniform requires hi > lo")

    @property
    def lower(self):
        return self.lo

    @property
    def upper(self):
        return self.hi

    def log_pdf(self, x):
        inside = self.in_support(x)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def std(self):
        return (self.hi - self.lo) / math.sqrt(12.0)


@dataclass(frozen=True)
class Gamma(Distribution1D):
    """Gamma distribution with shape ``shape`` and *rate* ``rate``."""

    shape: float
    rate: float
    lower = 0.0

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma parameters must be positive")

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.in_support(x)
        xs = np.where(inside, x, 1.0)
        out = (
            self.shape * math.log(self.rate)
            - special.gammaln(self.shape)
            + (self.shape - 1) * np.log(xs)
            - self.rate * xs
        )
        return np.where(inside, out, -np.inf)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def std(self):
        return math.sqrt(self.shape) / self.rate

    def to_unconstrained(self, x):
        return np.log(np.asarray(x, dtype=float))

    def from_unconstrained(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(u), u


@dataclass(frozen=True)
class Prior:
    """Independent product of univariate components, one per parameter."""

    components: tuple[Distribution1D, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.components) != len(self.names):
            raise ValueError("one name per prior component is required")

    @property
    def dim(self) -> int:
        return len(self.components)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw ``n`` parameter vectors as an ``(n, D)`` array (``(D,)`` if n is None)."""
        size = 1 if n is None else n
        cols = [np.asarray(c.sample(rng, size), dtype=float) for c in self.components]
        out = np.stack(cols, axis=-1) if cols else np.zeros((size, 0))
        return out[0] if n is None else out

    def log_pdf(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape[-1]}")
        total = np.zeros(theta.shape[:-1])
        for i, c in enumerate(self.components):
            total = total + c.log_pdf(theta[..., i])
        return total

    def in_support(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        ok = np.ones(theta.shape[:-1], dtype=bool)
        for i, c in enumerate(self.components):
            ok &= c.in_support(theta[..., i])
        return ok

    @property
    def std(self) -> np.ndarray:
        return np.array([c.std for c in self.components])

    def to_unconstrained(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.stack(
            [c.to_unconstrained(theta[..., i]) for i, c in enumerate(self.components)], axis=-1
        )

    def from_unconstrained(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        xs, jac = [], np.zeros(u.shape[:-1])
        for i, c in enumerate(self.components):
            x, lj = c.from_unconstrained(u[..., i])
            xs.append(x)
            jac = jac + lj
        return np.stack(xs, axis=-1), jac

    def param_vector(self, values, fixed_initial_state=None) -> ParamVector:
        return ParamVector(values, self.names, fixed_initial_state)


def prior_sample_and_logpdf(prior: Prior, rng) -> tuple[ParamVector, float]:
    rng = as_generator(rng)
    theta = prior.sample(rng)
    return prior.param_vector(theta), float(prior.log_pdf(theta))


# -- model interface ------------------------------------------------------------


class ImplicitHMM:
    """Hidden Markov model that can be simulated but not necessarily evaluated.

    Subclasses provide vectorised ``sample_transition`` and
    ``sample_observation`` that act on a batch of ``n`` states; ``theta`` is
    either one ``(D,)`` vector shared by the batch or an ``(n, D)`` array.
    Models whose observation density is available also override
    ``log_obs_density``.
    """

    K: int
    L: int
    times: np.ndarray
    prior: Prior
    initial_state: np.ndarray
    param_names: tuple[str, ...] = ()
    counting_process: bool = False

    @property
    def M(self) -> int:
        return len(self.times)

    @property
    def D(self) -> int:
        return self.prior.dim

    @property
    def has_obs_density(self) -> bool:
        return type(self).log_obs_density is not ImplicitHMM.log_obs_density

    def sample_transition(self, x_prev: np.ndarray, theta, dt: float, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_observation(self, x: np.ndarray, theta, rng) -> np.ndarray:
        raise NotImplementedError

    def log_obs_density(self, y: np.ndarray, x: np.ndarray, theta) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no tractable observation density")

    def obs_mean(self, x: np.ndarray, theta) -> np.ndarray:
        """Noise-free observation of ``x``; used as ground truth for predictive metrics."""
        raise NotImplementedError

    def x0(self, theta=None) -> np.ndarray:
        return np.asarray(self.initial_state, dtype=float)

    def simulate_states(self, theta, rng, n: int | None = None) -> np.ndarray:
        """Ancestral sampling of the latent path; returns ``(M, K)`` or ``(n, M, K)``."""
        rng = as_generator(rng)
        theta = np.asarray(theta, dtype=float)
        batch = 1 if n is None else n
        x = np.empty((batch, self.M, self.K))
        x[:, 0] = self.x0(theta)
        for t in range(1, self.M):
            x[:, t] = self.sample_transition(x[:, t - 1], theta, self.times[t] - self.times[t - 1], rng)
            if not np.all(np.isfinite(x[:, t])):
                raise SimulationDivergedError(t)
        return x[0] if n is None else x

    def simulate(self, theta, rng, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Joint draw of ``(states, observations)`` as raw arrays."""
        rng = as_generator(rng)
        x = self.simulate_states(theta, rng, n)
        flat = x.reshape(-1, self.K)
        th = np.asarray(theta, dtype=float)
        if n is not None and th.ndim == 2:
            th = np.repeat(th, self.M, axis=0)
        y = self.sample_observation(flat, th, rng).reshape(x.shape[:-1] + (self.L,))
        return x, y

    def simulate_batch(self, thetas: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Simulate one joint path per row of ``thetas``.

        Returns ``(x, y, ok)``; rows whose simulation diverged have ``ok`` False
        and unspecified contents.
        """
        rng = as_generator(rng)
        thetas = np.asarray(thetas, dtype=float).reshape(len(thetas), -1)
        n = len(thetas)
        x = np.full((n, self.M, self.K), np.nan)
        y = np.full((n, self.M, self.L), np.nan)
        ok = np.zeros(n, dtype=bool)
        for i in range(n):
            try:
                x[i], y[i] = self.simulate(thetas[i], rng)
            except SimulationDivergedError:
                continue
            ok[i] = True
        return x, y, ok


def simulate_joint(model: ImplicitHMM, theta, rng) -> tuple[StatePath, ObsSeries]:
    """One draw of ``(x, y)`` from ``p(x, y | theta)`` by ancestral sampling."""
    values = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    x, y = model.simulate(values, as_generator(rng))
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        raise SimulationDivergedError(int(np.argmax(bad)))
    return StatePath(x, model.times), ObsSeries(y, model.times)


@dataclass
class CountingModel(ImplicitHMM):
    """Delegating wrapper that counts simulator usage at the model boundary.

    ``paths`` counts full joint simulations, ``transitions`` counts single
    particle transition draws made outside of full-path simulation.
    """

    inner: ImplicitHMM
    paths: int = 0
    transitions: int = 0
    _in_path: bool = field(default=False, repr=False)

    def __getattr__(self, name):
        if name == "inner":
            raise AttributeError(name)
        return getattr(self.inner, name)

    K = property(lambda self: self.inner.K)
    L = property(lambda self: self.inner.L)
    times = property(lambda self: self.inner.times)
    prior = property(lambda self: self.inner.prior)
    initial_state = property(lambda self: self.inner.initial_state)
    param_names = property(lambda self: self.inner.param_names)
    counting_process = property(lambda self: self.inner.counting_process)

    @property
    def has_obs_density(self):
        return self.inner.has_obs_density

    def x0(self, theta=None):
        return self.inner.x0(theta)

    def sample_transition(self, x_prev, theta, dt, rng):
        if not self._in_path:
            self.transitions += len(x_prev)
        return self.inner.sample_transition(x_prev, theta, dt, rng)

    def sample_observation(self, x, theta, rng):
        return self.inner.sample_observation(x, theta, rng)

    def log_obs_density(self, y, x, theta):
        return self.inner.log_obs_density(y, x, theta)

    def obs_mean(self, x, theta):
        return self.inner.obs_mean(x, theta)

    def simulate_states(self, theta, rng, n=None):
        self.paths += 1 if n is None else n
        self._in_path = True
        try:
            return self.inner.simulate_states(theta, rng, n)
        finally:
            self._in_path = False

    def simulate(self, theta, rng, n=None):
        self.paths += 1 if n is None else n
        self._in_path = True
        try:
            return self.inner.simulate(theta, rng, n)
        finally:
            self._in_path = False

    def simulate_batch(self, thetas, rng):
        self.paths += len(thetas)
        self._in_path = True
        try:
            return self.inner.simulate_batch(thetas, rng)
        finally:
            self._in_path = False

    @property
    def calls(self) -> int:
        return self.paths + self.transitions


def stack_params(thetas: Sequence[ParamVector] | np.ndarray) -> np.ndarray:
    if isinstance(thetas, np.ndarray):
        return np.atleast_2d(thetas) if thetas.size else thetas.reshape(len(thetas), -1)
    return np.array([t.values for t in thetas], dtype=float)
