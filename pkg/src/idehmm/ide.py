"""Incremental density estimator for the hidden states of an implicit HMM.

Two conditional flows are fitted on joint simulations:

* ``q1(X_t | X_{t-1}, y_t, theta)``, the approximate factor (importance proposal);
* ``q2(X_t | X_{t+1}, X_{t-1}, y_t, theta)``, the exact full-conditional factor.

A path for one posterior draw of ``theta`` is generated by running ``P``
particles forward through ``q1``, weighting step ``t`` by ``q2 / q1``
(the last step is unweighted) and resampling one index per step,
independently across steps.

For count-valued models the flows can work on ``asinh`` of states and
observations (``transform="asinh"``). The Jacobian of that map at ``X_t``
is the same in ``q1`` and ``q2`` and cancels in the weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ImplicitHMM, Prior, RngStream, as_generator
from .flows import ConditionalFlow, TrainConfig, TrainingReport, load_flow, save_flow, train_flow
from .simulators.gaussian import _obs_array
from .smc import ess, push_through_observation

log = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.10
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
TRANSFORMS = {"identity": (lambda a: a, lambda a: a), "asinh": (np.arcsinh, np.sinh)}


def _transform(name: str):
    if name not in TRANSFORMS:
        raise ValueError(f"unknown state transform {name!r}; expected one of {sorted(TRANSFORMS)}")
    return TRANSFORMS[name]


class TooManyDivergedError(RuntimeError):
    def __init__(self, skipped: int, total: int):
        self.skipped, self.total = skipped, total
        super().__init__(f"{skipped} of {total} simulations diverged (limit {MAX_SKIP_FRACTION:.0%})")


@dataclass(frozen=True)
class IdeTrainingSet:
    """Input-target pairs for both factors.

    Approximate contexts are ``[X_{t-1}, y_t, theta]``; true contexts are
    ``[X_{t+1}, X_{t-1}, y_t, theta]``, so ``true_contexts[:, K:]`` has the
    same layout as an approximate context.
    """

    approx_targets: np.ndarray
    approx_contexts: np.ndarray
    true_targets: np.ndarray
    true_contexts: np.ndarray
    K: int
    L: int
    D: int
    n_simulations: int
    n_skipped: int = 0

    @property
    def counts(self) -> dict[str, int]:
        return {
            "simulations": self.n_simulations,
            "skipped": self.n_skipped,
            "approx": len(self.approx_targets),
            "true": len(self.true_targets),
        }


def training_set_from_simulations(x, y, thetas, ok=None) -> IdeTrainingSet:
    """Build all consecutive pairs and triples from ``(n, M, K)`` / ``(n, M, L)`` arrays."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, M, K = x.shape
    L = y.shape[2]
    th = np.asarray(thetas, dtype=float).reshape(n, -1) if thetas is not None else np.zeros((n, 0))
    ok = np.ones(n, dtype=bool) if ok is None else np.asarray(ok, dtype=bool)
    ok = ok & np.all(np.isfinite(x), axis=(1, 2)) & np.all(np.isfinite(y), axis=(1, 2))
    skipped = int(n - ok.sum())
    if skipped:
        log.warning("skipping %d diverged simulations out of %d", skipped, n)
    if skipped > MAX_SKIP_FRACTION * n:
        raise TooManyDivergedError(skipped, n)
    if M < 3:
        raise ValueError("series of length >= 3 are needed for the true factor")
    x, y, th = x[ok], y[ok], th[ok]
    m = len(x)
    D = th.shape[1]
    th_a = np.repeat(th[:, None, :], M - 1, axis=1)
    approx_ctx = np.concatenate([x[:, :-1], y[:, 1:], th_a], axis=2).reshape(-1, K + L + D)
    approx_tgt = x[:, 1:].reshape(-1, K)
    th_t = np.repeat(th[:, None, :], M - 2, axis=1)
    true_ctx = np.concatenate([x[:, 2:], x[:, :-2], y[:, 1:-1], th_t], axis=2).reshape(-1, 2 * K + L + D)
    true_tgt = x[:, 1:-1].reshape(-1, K)
    return IdeTrainingSet(approx_tgt, approx_ctx, true_tgt, true_ctx, K, L, D, m, skipped)


def build_training_set(model: ImplicitHMM, prior: Prior | None, N: int, rng) -> IdeTrainingSet:
    """Simulate ``N`` joint draws with ``theta ~ prior`` and collect IDE examples."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = as_generator(rng)
    prior = model.prior if prior is None else prior
    thetas = prior.sample(rng, N) if prior.dim else np.zeros((N, 0))
    x, y, ok = model.simulate_batch(thetas, rng)
    return training_set_from_simulations(x, y, thetas, ok)


@dataclass
class IdeModel:
    approx_flow: ConditionalFlow
    true_flow: ConditionalFlow
    K: int
    L: int
    D: int
    P: int = 10_000
    reports: dict[str, TrainingReport] = field(default_factory=dict)
    transform: str = "identity"

    def __post_init__(self):
        _transform(self.transform)
        if self.approx_flow.context_dim != self.K + self.L + self.D:
            raise ValueError("approximate flow context must be K + L + D")
        if self.true_flow.context_dim != 2 * self.K + self.L + self.D:
            raise ValueError("true flow context must be 2K + L + D")

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_flow(self.approx_flow, d / "approx.flow")
        save_flow(self.true_flow, d / "true.flow")
        manifest = {"K": self.K, "L": self.L, "D": self.D, "P": self.P, "transform": self.transform,
                    "approx": "approx.flow", "true": "true.flow"}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "IdeModel":
        d = Path(directory)
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise FileNotFoundError(f"IDE manifest not found: {mpath}")
        man = json.loads(mpath.read_text())
        return cls(load_flow(d / man["approx"]), load_flow(d / man["true"]), man["K"], man["L"], man["D"], man["P"],
                   transform=man.get("transform", "identity"))


def train_ide(ts: IdeTrainingSet, cfg: TrainConfig = TrainConfig(), rng=None, P: int = 10_000,
              true_cfg: TrainConfig | None = None, transform: str = "identity") -> IdeModel:
    """Fit both factors independently.

    ``transform`` is applied to states and observations (targets and the
    non-θ context columns) before fitting; θ is left as is.
    """
    if len(ts.approx_targets) == 0 or len(ts.true_targets) == 0:
        raise ValueError("empty IDE training set")
    fwd, _ = _transform(transform)
    K, L = ts.K, ts.L
    a_ctx, t_ctx = ts.approx_contexts.copy(), ts.true_contexts.copy()
    a_ctx[:, : K + L] = fwd(a_ctx[:, : K + L])
    t_ctx[:, : 2 * K + L] = fwd(t_ctx[:, : 2 * K + L])
    base = rng if isinstance(rng, RngStream) else RngStream(cfg.seed if rng is None else int(as_generator(rng).integers(2**63)))
    q1, r1 = train_flow(fwd(ts.approx_targets), a_ctx, cfg, base.child("approx").generator())
    q2, r2 = train_flow(fwd(ts.true_targets), t_ctx, true_cfg or cfg, base.child("true").generator())
    return IdeModel(q1, q2, K, L, ts.D, P, {"approx": r1, "true": r2}, transform)


@dataclass(frozen=True)
class IdeWeights:
    """Per-step diagnostics of the importance weights.

    ``ess`` has shape ``(n_theta, M)``; steps 0 and ``M-1`` are unweighted and
    report ``P``. ``weights`` (``(n_theta, M, P)``) is kept only on request.
    """

    ess: np.ndarray
    P: int
    fallbacks: int = 0
    weights: np.ndarray | None = None

    @property
    def weighted_ess(self) -> np.ndarray:
        return self.ess[:, 1:-1]


def _flow_sample_from_noise(flow: ConditionalFlow, z, ctx):
    x, logdet = flow.forward(z, ctx)
    logq = logdet - 0.5 * np.sum(z * z, axis=1) - flow.target_dim * _HALF_LOG_2PI
    return x, logq


def _theta_generators(rng, n):
    if isinstance(rng, RngStream):
        return [rng.child("theta", i).generator() for i in range(n)]
    return as_generator(rng).spawn(n)


def predict_states(ide: IdeModel, thetas, y, rng, P: int | None = None, paths_per_theta: int = 1,
                   x0=None, return_weights: bool = False, chunk: int | None = None):
    """Hidden-state paths for each θ sample.

    Returns ``(paths, IdeWeights)`` where ``paths`` has shape
    ``(n_theta * paths_per_theta, M, K)``; the draws for θ sample ``l`` occupy
    rows ``l*paths_per_theta`` to ``(l+1)*paths_per_theta - 1``. Each θ sample
    uses its own random stream, so results do not depend on ``chunk``.
    ``x0`` is the known initial state (defaults to zeros).
    """
    P = ide.P if P is None else int(P)
    fwd, inv = _transform(ide.transform)
    y = fwd(_obs_array(y))
    M = len(y)
    K, L, D = ide.K, ide.L, ide.D
    thetas = np.asarray(thetas, dtype=float).reshape(-1, D) if D else np.zeros((len(thetas), 0))
    n = len(thetas)
    x0_raw = np.zeros(K) if x0 is None else np.asarray(x0, dtype=float).reshape(K)
    x0 = fwd(x0_raw)
    gens = _theta_generators(rng, n)
    chunk = max(1, (20_000 // P) if chunk is None else int(chunk))
    paths = np.empty((n * paths_per_theta, M, K))
    ess_out = np.full((n, M), float(P))
    all_w = np.empty((n, M, P)) if return_weights else None
    fallbacks = 0
    for start in range(0, n, chunk):
        idx = range(start, min(n, start + chunk))
        c = len(idx)
        # noise first, then resampling uniforms, per θ stream
        z = np.stack([gens[l].standard_normal((M - 1, P, K)) for l in idx], axis=1)  # (M-1, c, P, K)
        u = np.stack([gens[l].random((M - 1, paths_per_theta)) for l in idx], axis=1)  # (M-1, c, n_p)
        th = np.repeat(thetas[list(idx)], P, axis=0)
        xh = np.empty((M, c * P, K))
        lq1 = np.empty((M, c * P))
        xh[0] = x0
        lq1[0] = 0.0
        for t in range(1, M):
            ctx = np.concatenate([xh[t - 1], np.repeat(y[t][None], c * P, axis=0), th], axis=1)
            xh[t], lq1[t] = _flow_sample_from_noise(ide.approx_flow, z[t - 1].reshape(c * P, K), ctx)
        for t in range(1, M):
            if t < M - 1:
                ctx2 = np.concatenate([xh[t + 1], xh[t - 1], np.repeat(y[t][None], c * P, axis=0), th], axis=1)
                logw = ide.true_flow.log_density(xh[t], ctx2, strict=False) - lq1[t]
                logw = np.where(np.isfinite(logw), logw, -np.inf).reshape(c, P)
            else:
                logw = np.zeros((c, P))
            for j, l in enumerate(idx):
                lw = logw[j]
                top = lw.max()
                if not np.isfinite(top):
                    log.warning("all IDE weights vanished at t=%d for theta %d; using uniform weights", t, l)
                    fallbacks += 1
                    w = np.full(P, 1.0 / P)
                else:
                    w = np.exp(lw - top)
                    w /= w.sum()
                ess_out[l, t] = ess(w)
                if all_w is not None:
                    all_w[l, t] = w
                cdf = np.cumsum(w)
                r = np.minimum(np.searchsorted(cdf / cdf[-1], u[t - 1, j], side="right"), P - 1)
                rows = slice(l * paths_per_theta, (l + 1) * paths_per_theta)
                paths[rows, t] = xh[t, j * P + r]
        if all_w is not None:
            all_w[list(idx), 0] = 1.0 / P
        paths[start * paths_per_theta : (start + c) * paths_per_theta, 0] = x0
    paths = inv(paths)
    paths[:, 0] = x0_raw
    return paths, IdeWeights(ess_out, P, fallbacks, all_w)


def ide_posterior_predictive(ide: IdeModel, model: ImplicitHMM, thetas, y, rng, P: int | None = None):
    """One IDE path per θ sample pushed through the observation model.

    Returns ``(paths, y_rep)``.
    """
    thetas = np.asarray(thetas, dtype=float).reshape(len(thetas), -1) if len(thetas) else np.zeros((0, ide.D))
    if len(thetas) == 0:
        return np.empty((0, len(_obs_array(y)), ide.K)), np.empty((0, len(_obs_array(y)), model.L))
    state_rng = rng.child("states") if isinstance(rng, RngStream) else rng
    paths, _ = predict_states(ide, thetas, y, state_rng, P=P, x0=model.x0(thetas[0]))
    obs_rng = rng.child("obs") if isinstance(rng, RngStream) else rng
    return paths, push_through_observation(model, paths, thetas, obs_rng)


__all__ = [
    "IdeModel", "IdeTrainingSet", "IdeWeights", "TooManyDivergedError", "build_training_set",
    "ide_posterior_predictive", "predict_states", "train_ide", "training_set_from_simulations",
]
