"""Maximum-likelihood training of a conditional flow with early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import as_generator
from .adam import Adam
from .maf import ConditionalFlow

log = logging.getLogger(__name__)


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"validation log-likelihood became non-finite at epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 5e-4
    val_fraction: float = 0.10
    patience: int = 20
    max_epochs: int = 200
    seed: int = 0
    n_blocks: int = 5
    hidden: int = 50

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.n_blocks < 1 or self.hidden < 1:
            raise ValueError("batch_size, max_epochs, n_blocks and hidden must be positive")
        if self.patience < 0 or self.lr <= 0:
            raise ValueError("patience must be >= 0 and lr > 0")


@dataclass
class TrainingReport:
    train_loglik: list[float] = field(default_factory=list)
    val_loglik: list[float] = field(default_factory=list)
    initial_val_loglik: float = float("nan")
    best_epoch: int = 0
    epochs: int = 0
    stopped_early: bool = False
    n_train: int = 0
    n_val: int = 0

    @property
    def best_val_loglik(self) -> float:
        if self.best_epoch == 0:
            return self.initial_val_loglik
        return self.val_loglik[self.best_epoch - 1]


def _scale(a):
    s = a.std(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def _mean_loglik(flow: ConditionalFlow, x, c, chunk: int = 8192) -> float:
    total = 0.0
    for i in range(0, len(x), chunk):
        total += float(np.sum(flow.log_density(x[i : i + chunk], c[i : i + chunk] if flow.context_dim else None)))
    return total / len(x)


def train_flow(targets, contexts, cfg: TrainConfig = TrainConfig(), rng=None,
               flow: ConditionalFlow | None = None) -> tuple[ConditionalFlow, TrainingReport]:
    """Fit ``q(target | context)`` by Adam on the mean log-likelihood.

    ``contexts`` may be ``None`` for an unconditional flow. Passing ``flow``
    warm-starts from its weights. The weights with the best validation
    log-likelihood (including the untrained start) are restored.
    """
    x = np.asarray(targets, dtype=float)
    x = x.reshape(len(x), -1)
    n = len(x)
    c = np.zeros((n, 0)) if contexts is None else np.asarray(contexts, dtype=float).reshape(n, -1)
    n_val = int(round(cfg.val_fraction * n))
    if n < 2 or n_val < 1 or n - n_val < 1:
        raise ValueError(f"dataset of {n} examples is too small for a {cfg.val_fraction} validation split")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(c))):
        raise ValueError("training data must be finite")
    rng = as_generator(rng if rng is not None else cfg.seed)
    perm = rng.permutation(n)
    tr, va = perm[n_val:], perm[:n_val]
    if flow is None:
        flow = ConditionalFlow(x.shape[1], c.shape[1], cfg.n_blocks, cfg.hidden, rng)
    elif (flow.target_dim, flow.context_dim) != (x.shape[1], c.shape[1]):
        raise ValueError("warm-start flow dimensions do not match the data")
    flow.set_standardization(x[tr].mean(0), _scale(x[tr]), c[tr].mean(0), _scale(c[tr]))
    xs = (x - flow.x_mean) / flow.x_std
    cs = (c - flow.c_mean) / flow.c_std if c.shape[1] else c

    report = TrainingReport(n_train=len(tr), n_val=n_val)
    report.initial_val_loglik = best = _mean_loglik(flow, x[va], c[va])
    best_params = flow.get_params()
    params = best_params.copy()
    opt = Adam(params.size, lr=cfg.lr)
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = tr[rng.permutation(len(tr))]
        acc = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            ll, grad = flow.log_density_grad(xs[idx], cs[idx], standardized=True)
            params = opt.step(params, grad)
            flow.set_params(params)
            acc += ll * len(idx)
        report.train_loglik.append(acc / len(order) - float(np.log(flow.x_std).sum()))
        try:
            val = _mean_loglik(flow, x[va], c[va])
        except ArithmeticError:
            val = float("nan")
        if not np.isfinite(val):
            flow.set_params(best_params)
            raise TrainingDivergedError(epoch)
        report.val_loglik.append(val)
        report.epochs = epoch
        if val > best:
            best, best_params, wait = val, params.copy(), 0
            report.best_epoch = epoch
        else:
            wait += 1
            if wait > cfg.patience:
                report.stopped_early = True
                break
    flow.set_params(best_params)
    log.debug("flow trained: %d epochs, best val loglik %.4f", report.epochs, best)
    return flow, report
