"""Sequential neural likelihood estimation with slice-sampling MCMC.

A flow ``q(s(y) | theta)`` is trained on simulated summaries; the posterior
``q(s(y_o) | theta) p(theta)`` is explored in the prior's unconstrained
space, and each round's draws seed the next round's simulations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ImplicitHMM, Prior, RngStream, as_generator
from .flows import ConditionalFlow, TrainConfig, train_flow
from .simulators.gaussian import _obs_array
from .simulators.summaries import summarize

log = logging.getLogger(__name__)


class SliceSamplerError(RuntimeError):
    def __init__(self, coordinate: int, message: str):
        self.coordinate = coordinate
        super().__init__(f"coordinate {coordinate}: {message}")


class McmcStuckError(RuntimeError):
    def __init__(self, round_index: int, message: str):
        self.round_index = round_index
        super().__init__(f"MCMC stuck in round {round_index}: {message}")


@dataclass(frozen=True)
class SliceConfig:
    max_step_out: int = 50
    max_shrink: int = 200


def slice_sample(log_target: Callable[[np.ndarray], float], x0, steps: int, rng, widths=None,
                 cfg: SliceConfig = SliceConfig(), thin: int = 1) -> np.ndarray:
    """Axis-cycling slice sampler with stepping-out and shrinkage.

    One step updates every coordinate once. Returns ``steps // thin`` rows
    (every ``thin``-th state, starting after the first ``thin`` steps).
    """
    rng = as_generator(rng)
    x = np.array(x0, dtype=float).reshape(-1)
    D = len(x)
    w = np.ones(D) if widths is None else np.broadcast_to(np.asarray(widths, dtype=float), (D,))
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise ValueError("log_target must be finite at the initial point")
    out = np.empty((steps // thin, D))
    for s in range(steps):
        for i in range(D):
            level = lp + np.log(rng.random())
            lo = x[i] - w[i] * rng.random()
            hi = lo + w[i]
            xt = x.copy()
            for k in range(cfg.max_step_out + 1):
                xt[i] = lo
                if log_target(xt) <= level:
                    break
                if k == cfg.max_step_out:
                    raise SliceSamplerError(i, f"step-out exceeded {cfg.max_step_out} widths below")
                lo -= w[i]
            for k in range(cfg.max_step_out + 1):
                xt[i] = hi
                if log_target(xt) <= level:
                    break
                if k == cfg.max_step_out:
                    raise SliceSamplerError(i, f"step-out exceeded {cfg.max_step_out} widths above")
                hi += w[i]
            for _ in range(cfg.max_shrink):
                xt[i] = lo + (hi - lo) * rng.random()
                lpt = float(log_target(xt))
                if lpt > level:
                    x, lp = xt, lpt
                    break
                if hi - lo <= 1e-12 * max(1.0, abs(x[i])):
                    # interval collapsed onto x (level rounded up to lp): stay put
                    break
                if xt[i] < x[i]:
                    lo = xt[i]
                else:
                    hi = xt[i]
            else:
                raise SliceSamplerError(i, f"no acceptance after {cfg.max_shrink} shrinkage steps")
        if (s + 1) % thin == 0:
            out[(s + 1) // thin - 1] = x
    return out


@dataclass(frozen=True)
class SnleConfig:
    rounds: int = 30
    n_first: int = 5000
    n_round: int = 1000
    burn_in: int = 1000
    thin: int = 5
    n_posterior: int = 500
    summary_factor: int = 5
    init_candidates: int = 200
    train: TrainConfig = TrainConfig()
    slice: SliceConfig = SliceConfig()

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("at least one round is required")
        if min(self.n_first, self.n_round, self.n_posterior) < 2:
            raise ValueError("simulation and sample counts must be >= 2")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")


@dataclass
class PosteriorSampleSet:
    samples: np.ndarray
    names: tuple[str, ...]
    round_index: int
    diagnostics: dict = field(default_factory=dict)
    flow: ConditionalFlow | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)

    def to_csv(self, path) -> None:
        from .simulators.summaries import format_float

        lines = [",".join(self.names)]
        lines += [",".join(format_float(v) for v in row) for row in self.samples]
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class Simulations:
    """Raw joint simulations kept for reuse (IDE training, shared rounds)."""

    thetas: np.ndarray
    x: np.ndarray
    y: np.ndarray
    ok: np.ndarray

    def summaries(self, factor: int) -> np.ndarray:
        return summarize(self.y[self.ok], factor)


def simulate_prior(model: ImplicitHMM, prior: Prior, n: int, rng) -> Simulations:
    rng = as_generator(rng)
    thetas = prior.sample(rng, n)
    x, y, ok = model.simulate_batch(thetas, rng)
    return Simulations(thetas, x, y, ok)


def _transform_widths(prior: Prior, rng, n: int = 2000) -> np.ndarray:
    u = prior.to_unconstrained(prior.sample(rng, n))
    return u.std(axis=0)


def _posterior_chain(log_like, prior: Prior, cfg: SnleConfig, n_draws: int, rng, round_index: int):
    def log_target(u):
        theta, logjac = prior.from_unconstrained(u)
        lp = prior.log_pdf(theta)
        if not np.isfinite(lp):
            return -np.inf
        ll = log_like(theta)
        return float(ll + lp + logjac) if np.isfinite(ll) else -np.inf

    cand = prior.sample(rng, cfg.init_candidates)
    cand_u = prior.to_unconstrained(cand)
    scores = np.array([log_target(u) for u in cand_u])
    if not np.any(np.isfinite(scores)):
        raise McmcStuckError(round_index, "log target is -inf at every initial candidate")
    u0 = cand_u[int(np.argmax(scores))]
    widths = _transform_widths(prior, rng)
    try:
        burn = slice_sample(log_target, u0, cfg.burn_in, rng, widths, cfg.slice) if cfg.burn_in else u0[None]
        start = burn[-1] if len(burn) else u0
        draws_u = slice_sample(log_target, start, n_draws * cfg.thin, rng, widths, cfg.slice, thin=cfg.thin)
    except SliceSamplerError as err:
        raise McmcStuckError(round_index, str(err)) from err
    if n_draws > 1 and np.all(draws_u == draws_u[0]):
        raise McmcStuckError(round_index, "chain never moved")
    theta, _ = prior.from_unconstrained(draws_u)
    return theta


def snle_run(model: ImplicitHMM, prior: Prior | None, y_o, cfg: SnleConfig = SnleConfig(), rng=None,
             log_likelihood: Callable[[np.ndarray], float] | None = None,
             initial_simulations: Simulations | None = None,
             initial_flow: ConditionalFlow | None = None) -> PosteriorSampleSet:
    """Run SNLE and return posterior draws of θ from the final round.

    ``log_likelihood`` replaces the learned likelihood (no simulations are
    made). ``initial_simulations`` supplies the round-1 prior simulations and
    ``initial_flow`` a flow already trained on them; both depend only on the
    prior, so they may be shared across observed datasets.
    """
    prior = model.prior if prior is None else prior
    if prior.dim == 0:
        raise ValueError("SNLE needs at least one parameter")
    root = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    names = tuple(prior.names)
    if log_likelihood is not None:
        theta = _posterior_chain(log_likelihood, prior, cfg, cfg.n_posterior, root.child("mcmc", 1).generator(), 1)
        return PosteriorSampleSet(theta, names, 1, {"dataset_sizes": [], "simulations": 0})

    s_o = summarize(_obs_array(y_o), cfg.summary_factor)
    sims = initial_simulations
    if sims is None:
        sims = simulate_prior(model, prior, cfg.n_first, root.child("sim", 1).generator())
    thetas = sims.thetas[sims.ok]
    summaries = sims.summaries(cfg.summary_factor)
    n_sims = len(sims.thetas)
    sizes = []
    flow = initial_flow
    theta = None
    for r in range(1, cfg.rounds + 1):
        if r > 1:
            x, y, ok = model.simulate_batch(theta, root.child("sim", r).generator())
            n_sims += len(theta)
            thetas = np.vstack([thetas, theta[ok]])
            summaries = np.vstack([summaries, summarize(y[ok], cfg.summary_factor)])
            if (~ok).any():
                log.warning("round %d: %d simulations diverged and were dropped", r, int((~ok).sum()))
        sizes.append(len(thetas))
        if not (r == 1 and initial_flow is not None):
            flow, _ = train_flow(summaries, thetas, cfg.train, root.child("train", r).generator(),
                                 flow=None if flow is None else flow.copy())
        trained = flow

        def log_like(th, f=trained):
            return float(f.log_density(s_o, th, strict=False))

        n_draws = cfg.n_posterior if r == cfg.rounds else cfg.n_round
        theta = _posterior_chain(log_like, prior, cfg, n_draws, root.child("mcmc", r).generator(), r)
    return PosteriorSampleSet(theta, names, cfg.rounds,
                              {"dataset_sizes": sizes, "simulations": n_sims}, flow)


__all__ = [
    "McmcStuckError", "PosteriorSampleSet", "SliceConfig", "SliceSamplerError",
    "Simulations", "SnleConfig", "simulate_prior", "slice_sample", "snle_run",
]
