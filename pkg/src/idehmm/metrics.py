"""Accuracy and dispersion metrics for posterior samples of a path."""

from __future__ import annotations

import logging

import numpy as np
from scipy import stats

from .smc import ess

log = logging.getLogger(__name__)

CV_MEAN_FLOOR = 1e-8


def _samples(posterior_samples) -> np.ndarray:
    s = np.asarray(posterior_samples, dtype=float)
    if s.ndim == 2:
        s = s[..., None]
    if s.ndim != 3 or len(s) == 0:
        raise ValueError("posterior samples must have shape (n, M, K) with n >= 1")
    return s


def _truth(truth, samples) -> np.ndarray:
    t = np.asarray(truth, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != samples.shape[1:]:
        raise ValueError(f"truth shape {t.shape} does not match samples {samples.shape[1:]}")
    return t


def mse(truth, posterior_samples) -> float:
    """Mean over cells of the squared error of the posterior mean."""
    s = _samples(posterior_samples)
    t = _truth(truth, s)
    return float(np.mean((t - s.mean(axis=0)) ** 2))


def empirical_coverage(truth, posterior_samples, level: float = 0.90) -> float:
    """Fraction of cells whose equal-tailed ``level`` interval contains the truth."""
    s = _samples(posterior_samples)
    if len(s) < 20:
        raise ValueError("empirical coverage needs at least 20 samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    t = _truth(truth, s)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(s, [a, 1.0 - a], axis=0)
    return float(np.mean((t >= lo) & (t <= hi)))


def coefficient_of_variation(posterior_samples) -> float:
    """Mean over cells of ``std / |mean|``; cells with ``|mean| < 1e-8`` are skipped."""
    s = _samples(posterior_samples)
    mean = s.mean(axis=0)
    sd = s.std(axis=0, ddof=1) if len(s) > 1 else np.zeros_like(mean)
    keep = np.abs(mean) >= CV_MEAN_FLOOR
    dropped = int(keep.size - keep.sum())
    if dropped:
        log.info("coefficient of variation: excluded %d cells with near-zero mean", dropped)
    if not keep.any():
        raise ValueError("every cell has a near-zero posterior mean")
    return float(np.mean(sd[keep] / np.abs(mean[keep])))


def ks_uniform_pvalue(u) -> float:
    return float(stats.kstest(np.asarray(u, dtype=float), "uniform").pvalue)


def ks_pvalue(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov p-value against ``cdf`` (callable or scipy name)."""
    return float(stats.kstest(np.asarray(samples, dtype=float), cdf).pvalue)


__all__ = ["coefficient_of_variation", "empirical_coverage", "ess", "ks_pvalue", "ks_uniform_pvalue", "mse"]
