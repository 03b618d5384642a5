"""ABC-SMC on summary statistics with an adaptive tolerance schedule.

Every accepted particle keeps the latent path and simulated observations of
the joint simulation that produced its distance, so a population is a sample
from the ABC approximation of the joint posterior of ``(theta, x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .core import ImplicitHMM, Prior, RngStream, as_generator
from .simulators.gaussian import _obs_array
from .simulators.summaries import format_float, summarize
from .smc import push_through_observation

log = logging.getLogger(__name__)


class AbcStallError(RuntimeError):
    def __init__(self, generation: int, epsilon: float, trials: int, accepted: int):
        self.generation, self.epsilon, self.trials, self.accepted = generation, epsilon, trials, accepted
        super().__init__(
            f"generation {generation} stalled: {accepted} acceptances in {trials} trials at epsilon={epsilon:.6g}"
        )


def euclidean(a, b) -> np.ndarray:
    return np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))


def next_tolerance(distances, quantile: float = 0.1) -> float:
    """Linear-interpolation (type 7) quantile of the accepted distances."""
    return float(np.quantile(np.asarray(distances, dtype=float), quantile))


@dataclass
class AbcPopulation:
    thetas: np.ndarray
    x: np.ndarray | None
    y: np.ndarray | None
    weights: np.ndarray
    distances: np.ndarray
    epsilon: float
    generation: int
    sim_calls: int = 0
    history: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.thetas)


def knn_covariances(thetas, k: int = 15, jitter: float = 1e-10) -> np.ndarray:
    """Per-particle covariance of its ``k`` nearest neighbours (itself included)."""
    thetas = np.asarray(thetas, dtype=float)
    n, D = thetas.shape
    k = min(k, n)
    scale = thetas.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    _, idx = cKDTree(thetas / scale).query(thetas / scale, k=k)
    idx = np.asarray(idx).reshape(n, k)
    nb = thetas[idx]                                      # (n, k, D)
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / max(k - 1, 1)
    floor = jitter * np.maximum(np.diag(np.cov(thetas.T).reshape(D, D)), 1e-300)
    return cov + np.eye(D)[None] * floor[None, None, :]


def _mixture_logpdf(points, centres, weights, chols):
    """``log sum_j w_j N(points; centres_j, L_j L_j^T)`` for each point."""
    D = centres.shape[1]
    diff = points[:, None, :] - centres[None, :, :]            # (m, n, D)
    inv = np.linalg.inv(chols)                                  # (n, D, D)
    z = np.einsum("nij,mnj->mni", inv, diff)
    logdet = np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    comp = -0.5 * np.sum(z * z, axis=2) - logdet[None] - 0.5 * D * np.log(2 * np.pi)
    comp = comp + np.log(np.where(weights > 0, weights, 1e-300))[None]
    top = comp.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(comp - top).sum(axis=1, keepdims=True)))[:, 0]


def abc_smc(model: ImplicitHMM, prior: Prior | None, y_o, particles: int = 1000, sim_budget: int = 10**5,
            distance: Callable | None = None, summary_factor: int = 5, rng=None, quantile: float = 0.1,
            k: int = 15, max_generations: int | None = None, stall_factor: int = 100) -> AbcPopulation:
    """Run ABC-SMC until the simulation budget cannot complete another generation.

    Generation 0 samples the prior with tolerance ``inf``. Each later
    generation perturbs weighted resamples with per-particle Gaussian kernels
    from ``k``-nearest-neighbour covariances. Out-of-support proposals are
    re-proposed without simulating. The last completed generation is
    returned; ``sim_calls`` counts every simulation, accepted or not.
    """
    prior = model.prior if prior is None else prior
    if sim_budget < particles:
        raise ValueError("sim_budget must be at least the number of particles")
    distance = euclidean if distance is None else distance
    root = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    s_o = summarize(_obs_array(y_o), summary_factor)
    D = prior.dim
    calls = 0
    history: list[dict] = []
    pop: AbcPopulation | None = None
    gen = 0
    eps = np.inf
    while max_generations is None or gen < max_generations:
        g = root.child("generation", gen).generator()
        if pop is not None:
            eps_new = next_tolerance(pop.distances, quantile)
            eps = eps_new if eps_new < pop.epsilon else float(np.nextafter(pop.epsilon, -np.inf))
            covs = knn_covariances(pop.thetas, k)
            chols = np.linalg.cholesky(covs)
            cdf = np.cumsum(pop.weights)
            cdf /= cdf[-1]
        acc_t, acc_x, acc_y, acc_d = [], [], [], []
        trials = 0
        n_acc = 0
        exhausted = False
        while n_acc < particles:
            need = particles - n_acc
            batch = min(need, sim_budget - calls)
            if batch <= 0:
                exhausted = True
                break
            if pop is None:
                th = prior.sample(g, batch)
            else:
                th = np.empty((batch, D))
                filled = 0
                while filled < batch:
                    m = batch - filled
                    j = np.minimum(np.searchsorted(cdf, g.random(m), side="right"), len(cdf) - 1)
                    prop = pop.thetas[j] + np.einsum("nij,nj->ni", chols[j], g.standard_normal((m, D)))
                    good = prior.in_support(prop)
                    take = prop[good]
                    th[filled : filled + len(take)] = take
                    filled += len(take)
            x, y, ok = model.simulate_batch(th, g)
            calls += batch
            trials += batch
            d = np.full(batch, np.inf)
            if ok.any():
                d[ok] = distance(summarize(y[ok], summary_factor), s_o)
            hit = ok & (d <= eps)
            if hit.any():
                acc_t.append(th[hit])
                acc_x.append(x[hit])
                acc_y.append(y[hit])
                acc_d.append(d[hit])
                n_acc += int(hit.sum())
            if n_acc == 0 and trials >= stall_factor * particles:
                raise AbcStallError(gen, eps, trials, 0)
        if exhausted:
            if pop is None:
                raise AbcStallError(gen, eps, trials, n_acc)
            log.info("budget exhausted during generation %d; returning generation %d", gen, pop.generation)
            break
        thetas = np.concatenate(acc_t)
        if pop is None:
            w = np.full(particles, 1.0 / particles)
        else:
            logw = prior.log_pdf(thetas) - _mixture_logpdf(thetas, pop.thetas, pop.weights, chols)
            w = np.exp(logw - logw.max())
            w /= w.sum()
        history.append({"generation": gen, "epsilon": eps, "trials": trials, "calls": calls,
                        "acceptance": particles / trials, "thetas": thetas, "weights": w})
        pop = AbcPopulation(thetas, np.concatenate(acc_x), np.concatenate(acc_y), w,
                            np.concatenate(acc_d), eps, gen, calls, history)
        gen += 1
    pop.sim_calls = calls
    return pop


def abc_posterior_predictive(pop: AbcPopulation, model: ImplicitHMM, rng, n: int | None = None):
    """Weighted resample of retained ``(theta, x)`` pairs pushed through the observation model.

    Returns ``(paths, y_rep)``.
    """
    if len(pop) == 0:
        raise ValueError("empty population")
    n = len(pop) if n is None else int(n)
    rng = as_generator(rng)
    idx = rng.choice(len(pop), size=n, p=pop.weights)
    paths = pop.x[idx]
    return paths, push_through_observation(model, paths, pop.thetas[idx], rng)


def population_csv(pop: AbcPopulation, names) -> str:
    """Every generation's θ, weight and ε as CSV text."""
    lines = [",".join(["generation", "epsilon", "weight", *names])]
    for h in pop.history:
        eps = format_float(h["epsilon"])
        for th, w in zip(h["thetas"], h["weights"]):
            lines.append(",".join([str(h["generation"]), eps, format_float(w), *(format_float(v) for v in th)]))
    return "\n".join(lines) + "\n"


__all__ = [
    "AbcPopulation", "AbcStallError", "abc_posterior_predictive", "abc_smc", "euclidean",
    "knn_covariances", "next_tolerance", "population_csv",
]
