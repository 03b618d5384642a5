"""Conditional masked autoregressive flow.

Density direction (data -> noise) runs the blocks in order with a reversal
of coordinates between consecutive blocks; sampling runs them backwards.
Targets and contexts are standardized with stored statistics, and the
standardization Jacobian is part of the reported density.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import NumericalError, as_generator
from .made import PARAM_NAMES, MadeBlock

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ConditionalFlow:
    """MAF ``q(x | ctx)`` with a standard normal base distribution."""

    def __init__(self, target_dim: int, context_dim: int = 0, n_blocks: int = 5, hidden: int = 50,
                 rng=None):
        if target_dim < 1 or context_dim < 0 or n_blocks < 1 or hidden < 1:
            raise ValueError("invalid flow dimensions")
        rng = as_generator(rng if rng is not None else 0)
        self.target_dim = int(target_dim)
        self.context_dim = int(context_dim)
        self.n_blocks = int(n_blocks)
        self.hidden = int(hidden)
        self.blocks = [MadeBlock(target_dim, context_dim, hidden, rng) for _ in range(n_blocks)]
        self.x_mean = np.zeros(target_dim)
        self.x_std = np.ones(target_dim)
        self.c_mean = np.zeros(context_dim)
        self.c_std = np.ones(context_dim)

    # -- parameters ------------------------------------------------------------

    def set_standardization(self, x_mean, x_std, c_mean=None, c_std=None):
        self.x_mean = np.asarray(x_mean, dtype=float).reshape(self.target_dim).copy()
        self.x_std = np.asarray(x_std, dtype=float).reshape(self.target_dim).copy()
        if self.context_dim:
            self.c_mean = np.asarray(c_mean, dtype=float).reshape(self.context_dim).copy()
            self.c_std = np.asarray(c_std, dtype=float).reshape(self.context_dim).copy()
        if np.any(self.x_std <= 0) or np.any(self.c_std <= 0):
            raise ValueError("standardization scales must be positive")

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for j, block in enumerate(self.blocks):
            out.extend((f"block{j}.{k}", block.params[k]) for k in PARAM_NAMES)
        return out

    def get_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for block in self.blocks:
            for k in PARAM_NAMES:
                a = block.params[k]
                block.params[k] = flat[pos : pos + a.size].reshape(a.shape).copy()
                pos += a.size
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")

    @property
    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def copy(self) -> "ConditionalFlow":
        new = ConditionalFlow(self.target_dim, self.context_dim, self.n_blocks, self.hidden)
        new.set_params(self.get_params())
        new.set_standardization(self.x_mean, self.x_std, self.c_mean, self.c_std)
        return new

    # -- shape handling --------------------------------------------------------

    def _prep(self, x, ctx):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.target_dim:
            raise ValueError(f"target must have {self.target_dim} columns, got {x.shape[1]}")
        return x, self._ctx(ctx, len(x)), single

    def _ctx(self, ctx, n):
        if self.context_dim == 0:
            return np.zeros((n, 0))
        ctx = np.asarray(ctx, dtype=float)
        if ctx.ndim == 1:
            ctx = np.broadcast_to(ctx, (n, self.context_dim))
        if ctx.shape != (n, self.context_dim):
            raise ValueError(f"context must have shape ({n}, {self.context_dim}), got {ctx.shape}")
        return (ctx - self.c_mean) / self.c_std

    # -- transforms ------------------------------------------------------------

    def _to_noise(self, xs, cs, keep=False):
        h = xs
        logdet = np.zeros(len(xs))
        caches = []
        last = self.n_blocks - 1
        for j, block in enumerate(self.blocks):
            res = block.to_noise(h, cs, keep)
            u, alpha = res[0], res[1]
            if keep:
                caches.append(res[2])
            logdet -= alpha.sum(axis=1)
            h = u[:, ::-1] if j < last else u
        return h, logdet, caches

    def inverse(self, x, ctx=None):
        """Map data to base noise; returns ``(z, log|det dz/dx|)``."""
        x, cs, single = self._prep(x, ctx)
        z, logdet, _ = self._to_noise((x - self.x_mean) / self.x_std, cs)
        logdet = logdet - np.log(self.x_std).sum()
        return (z[0], logdet[0]) if single else (z, logdet)

    def forward(self, z, ctx=None):
        """Map base noise to data; returns ``(x, log|det dz/dx|)`` at the output."""
        z, cs, single = self._prep(z, ctx)
        h = z
        logdet = np.zeros(len(z))
        last = self.n_blocks - 1
        for j in range(last, -1, -1):
            if j < last:
                h = h[:, ::-1]
            h, alpha = self.blocks[j].from_noise(np.ascontiguousarray(h), cs)
            logdet -= alpha.sum(axis=1)
        x = h * self.x_std + self.x_mean
        logdet = logdet - np.log(self.x_std).sum()
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite value in flow sampling pass")
        return (x[0], logdet[0]) if single else (x, logdet)

    def log_density(self, x, ctx=None, strict: bool = True):
        """``log q(x | ctx)``; with ``strict=False`` non-finite values are returned, not raised."""
        x, cs, single = self._prep(x, ctx)
        z, logdet, _ = self._to_noise((x - self.x_mean) / self.x_std, cs)
        out = logdet - np.log(self.x_std).sum() - 0.5 * np.sum(z * z, axis=1) - self.target_dim * _HALF_LOG_2PI
        if strict and not np.all(np.isfinite(out)):
            raise NumericalError("non-finite flow log-density")
        return out[0] if single else out

    def sample(self, ctx=None, rng=None, n: int | None = None):
        """Draw ``x ~ q(. | ctx)``; returns ``(x, log q(x | ctx))``.

        ``ctx`` may be a single context (broadcast to ``n`` draws) or a
        ``(n, c)`` batch with one draw per row.
        """
        rng = as_generator(rng)
        if n is None:
            if self.context_dim and np.ndim(ctx) == 2:
                count, single = len(ctx), False
            else:
                count, single = 1, True
        else:
            count, single = int(n), False
        z = rng.standard_normal((count, self.target_dim))
        x, logdet = self.forward(z, self._raw_ctx(ctx, count))
        logq = logdet - 0.5 * np.sum(z * z, axis=1) - self.target_dim * _HALF_LOG_2PI
        return (x[0], logq[0]) if single else (x, logq)

    def _raw_ctx(self, ctx, n):
        if self.context_dim == 0:
            return None
        ctx = np.asarray(ctx, dtype=float)
        return np.broadcast_to(ctx, (n, self.context_dim)) if ctx.ndim == 1 else ctx

    # -- gradients -------------------------------------------------------------

    def log_density_grad(self, x, ctx=None, standardized: bool = False):
        """Mean log-density over a batch and its gradient w.r.t. the flat parameters.

        With ``standardized=True`` the inputs are taken as already standardized
        (the training loop standardizes once up front); the returned value then
        omits the constant ``-sum(log std)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = len(x)
        if n == 0:
            raise ValueError("empty batch")
        if standardized:
            xs = x
            cs = np.zeros((n, 0)) if self.context_dim == 0 else np.atleast_2d(np.asarray(ctx, dtype=float))
        else:
            xs = (x - self.x_mean) / self.x_std
            cs = self._ctx(ctx, n)
        z, logdet, caches = self._to_noise(xs, cs, keep=True)
        logq = logdet - 0.5 * np.sum(z * z, axis=1) - self.target_dim * _HALF_LOG_2PI
        if not standardized:
            logq = logq - np.log(self.x_std).sum()
        g_h = -z
        minus_one = -np.ones_like(z)
        grads = [None] * self.n_blocks
        last = self.n_blocks - 1
        for j in range(last, -1, -1):
            g_u = g_h if j == last else g_h[:, ::-1]
            grads[j], g_h = self.blocks[j].backward(caches[j], g_u, minus_one)
        flat = np.concatenate([grads[j][k].ravel() for j in range(self.n_blocks) for k in PARAM_NAMES])
        return float(logq.mean()), flat / n
