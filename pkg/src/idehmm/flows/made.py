"""Conditional MADE block with an affine (shift, log-scale) output.

Two ReLU hidden layers; the context enters the first hidden layer through
unmasked weights. Gradients are propagated by hand (``backward``), which is
all the reverse-mode machinery a MAF needs.
"""

from __future__ import annotations

import numpy as np

LOG_SCALE_BOUND = 7.0

PARAM_NAMES = ("W1", "C1", "b1", "W2", "b2", "Wo", "bo")


def made_masks(d: int, hidden: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masks for input->hidden, hidden->hidden, hidden->output.

    Inputs have degrees ``1..d``; hidden units cycle through ``1..d-1``
    (all 0 when ``d == 1``). The output mask is stacked twice, shift rows
    first, then log-scale rows.
    """
    in_deg = np.arange(1, d + 1)
    if d > 1:
        hid_deg = np.arange(hidden) % (d - 1) + 1
    else:
        hid_deg = np.zeros(hidden, dtype=int)
    m1 = (hid_deg[:, None] >= in_deg[None, :]).astype(float)
    m2 = (hid_deg[:, None] >= hid_deg[None, :]).astype(float)
    mo = (in_deg[:, None] > hid_deg[None, :]).astype(float)
    return m1, m2, np.vstack([mo, mo])


class MadeBlock:
    def __init__(self, d: int, c: int, hidden: int = 50, rng: np.random.Generator | None = None):
        self.d, self.c, self.hidden = d, c, hidden
        self.m1, self.m2, self.mo = made_masks(d, hidden)
        rng = np.random.default_rng(0) if rng is None else rng
        lim1 = 1.0 / np.sqrt(max(d + c, 1))
        lim2 = 1.0 / np.sqrt(hidden)
        self.params = {
            "W1": rng.uniform(-lim1, lim1, (hidden, d)) * self.m1,
            "C1": rng.uniform(-lim1, lim1, (hidden, c)),
            "b1": np.zeros(hidden),
            "W2": rng.uniform(-lim2, lim2, (hidden, hidden)) * self.m2,
            "b2": np.zeros(hidden),
            # zero output layer: the block starts as the identity map
            "Wo": np.zeros((2 * d, hidden)),
            "bo": np.zeros(2 * d),
        }

    def conditioner(self, h: np.ndarray, ctx: np.ndarray, keep: bool = False):
        """Return ``(mu, alpha)``; with ``keep`` also the activations for backward."""
        p = self.params
        a1 = h @ (p["W1"] * self.m1).T + p["b1"]
        if self.c:
            a1 += ctx @ p["C1"].T
        r1 = np.maximum(a1, 0.0)
        a2 = r1 @ (p["W2"] * self.m2).T + p["b2"]
        r2 = np.maximum(a2, 0.0)
        out = r2 @ (p["Wo"] * self.mo).T + p["bo"]
        mu = out[:, : self.d]
        raw = out[:, self.d :]
        alpha = np.clip(raw, -LOG_SCALE_BOUND, LOG_SCALE_BOUND)
        if not keep:
            return mu, alpha
        return mu, alpha, (h, ctx, a1, r1, a2, r2, raw)

    def to_noise(self, h, ctx, keep: bool = False):
        """Density direction: ``u = (h - mu) * exp(-alpha)``."""
        res = self.conditioner(h, ctx, keep)
        mu, alpha = res[0], res[1]
        u = (h - mu) * np.exp(-alpha)
        if keep:
            return u, alpha, (res[2], mu, alpha, u)
        return u, alpha

    def from_noise(self, u, ctx):
        """Sampling direction, one conditioner pass per coordinate."""
        h = np.zeros_like(u)
        alpha_out = np.zeros_like(u)
        for i in range(self.d):
            mu, alpha = self.conditioner(h, ctx)
            h[:, i] = u[:, i] * np.exp(alpha[:, i]) + mu[:, i]
            alpha_out[:, i] = alpha[:, i]
        return h, alpha_out

    def backward(self, cache, g_u, g_alpha_extra):
        """Backpropagate through ``to_noise``.

        ``g_u`` is the gradient w.r.t. the block output and ``g_alpha_extra``
        the direct gradient w.r.t. alpha (from the log-determinant). Returns
        ``(grads, g_h)``.
        """
        (h, ctx, a1, r1, a2, r2, raw), mu, alpha, u = cache
        p = self.params
        inv_scale = np.exp(-alpha)
        g_mu = -g_u * inv_scale
        g_alpha = -g_u * u + g_alpha_extra
        g_alpha = g_alpha * ((raw > -LOG_SCALE_BOUND) & (raw < LOG_SCALE_BOUND))
        g_out = np.concatenate([g_mu, g_alpha], axis=1)
        wo = p["Wo"] * self.mo
        grads = {}
        grads["Wo"] = (g_out.T @ r2) * self.mo
        grads["bo"] = g_out.sum(0)
        g_a2 = (g_out @ wo) * (a2 > 0)
        grads["W2"] = (g_a2.T @ r1) * self.m2
        grads["b2"] = g_a2.sum(0)
        g_a1 = (g_a2 @ (p["W2"] * self.m2)) * (a1 > 0)
        grads["W1"] = (g_a1.T @ h) * self.m1
        grads["C1"] = g_a1.T @ ctx if self.c else np.zeros_like(p["C1"])
        grads["b1"] = g_a1.sum(0)
        g_h = g_u * inv_scale + g_a1 @ (p["W1"] * self.m1)
        return grads, g_h
