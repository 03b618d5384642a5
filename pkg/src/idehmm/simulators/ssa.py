"""Exact stochastic simulation (Gillespie's direct method) for reaction networks.

Hazard functions are numba-compiled callables ``hazard(x, c, out)`` that fill
``out`` with the ``V`` reaction hazards for integer state ``x`` and rate
vector ``c``. The compiled batch kernel is cached per hazard function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from ..core import SimulationDivergedError, StatePath, as_generator

MAX_EVENTS = 10_000_000

_OK, _EXPLODED = 0, 1


class SSAExplosionError(SimulationDivergedError):
    """Event cap exceeded; ``partial`` holds the records written so far."""

    def __init__(self, time_index: int, partial: np.ndarray, events: int):
        self.partial = partial
        self.events = events
        super().__init__(
            time_index, f"SSA exceeded {events} events before record index {time_index}"
        )


_KERNELS: dict[Callable, Callable] = {}


def _make_kernel(hazard):
    @numba.njit(cache=False)
    def kernel(x0, c, t_start, record, S, max_events, rng):
        n, K = x0.shape
        V = S.shape[1]
        R = record.shape[0]
        out = np.empty((n, R, K), dtype=np.int64)
        status = np.zeros(n, dtype=np.int64)
        written = np.zeros(n, dtype=np.int64)
        h = np.empty(V)
        x = np.empty(K, dtype=np.int64)
        for p in range(n):
            for k in range(K):
                x[k] = x0[p, k]
            t = t_start
            r = 0
            events = 0
            while r < R:
                hazard(x, c[p], h)
                total = 0.0
                for i in range(V):
                    total += h[i]
                if total <= 0.0:
                    # absorbing state: hold for all remaining records
                    while r < R:
                        out[p, r] = x
                        r += 1
                    break
                t_next = t + rng.exponential(1.0 / total)
                while r < R and record[r] < t_next:
                    out[p, r] = x
                    r += 1
                if r == R:
                    break
                u = rng.random() * total
                j = 0
                acc = h[0]
                while acc < u and j < V - 1:
                    j += 1
                    acc += h[j]
                for k in range(K):
                    x[k] += S[k, j]
                t = t_next
                events += 1
                if events >= max_events:
                    status[p] = _EXPLODED
                    break
            written[p] = r
        return out, status, written

    return kernel


def _kernel_for(hazard):
    kern = _KERNELS.get(hazard)
    if kern is None:
        kern = _KERNELS[hazard] = _make_kernel(hazard)
    return kern


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    stoichiometry: np.ndarray
    hazard: Callable
    species_names: tuple[str, ...]
    reaction_names: tuple[str, ...] = ()

    def __post_init__(self):
        S = np.asarray(self.stoichiometry, dtype=np.int64)
        S.setflags(write=False)
        object.__setattr__(self, "stoichiometry", S)
        if S.shape[0] != len(self.species_names):
            raise ValueError("one stoichiometry row per species is required")

    @property
    def K(self) -> int:
        return self.stoichiometry.shape[0]

    @property
    def rate_count(self) -> int:
        return self.stoichiometry.shape[1]

    def hazard_vector(self, x, c) -> np.ndarray:
        out = np.empty(self.rate_count)
        self.hazard(np.asarray(x, dtype=np.int64), np.asarray(c, dtype=float), out)
        return out

    def run(self, x0, c, record_times, rng, t_start: float = 0.0, max_events: int = MAX_EVENTS):
        """Batch simulation: ``x0`` is ``(n, K)``, ``c`` is ``(n, V)`` or ``(V,)``.

        Returns the raw ``(out, status, written)`` triple; ``out`` has shape
        ``(n, R, K)``. Callers decide how to treat exploded trajectories.
        """
        x0 = np.ascontiguousarray(np.atleast_2d(x0), dtype=np.int64)
        n = x0.shape[0]
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            c = np.broadcast_to(c, (n, c.shape[0]))
        c = np.ascontiguousarray(c)
        if c.shape != (n, self.rate_count):
            raise ValueError(f"rates must have shape ({n}, {self.rate_count}), got {c.shape}")
        record = np.ascontiguousarray(record_times, dtype=float)
        if record.size and record[0] < t_start:
            raise ValueError("record times must not precede the start time")
        kern = _kernel_for(self.hazard)
        return kern(x0, c, float(t_start), record, self.stoichiometry, int(max_events), as_generator(rng))


def ssa_simulate(
    net: ReactionNetwork,
    c,
    x0,
    record_times,
    rng,
    max_events: int = MAX_EVENTS,
) -> StatePath:
    """One exact Gillespie trajectory recorded at ``record_times``.

    The record at time ``t`` is the state after the last event at time
    ``<= t``. Starts at ``record_times[0]``.
    """
    x0 = np.asarray(x0)
    if np.any(x0 < 0) or np.any(x0 != np.round(x0)):
        raise ValueError("initial state must be non-negative integers")
    if np.any(np.asarray(c) <= 0):
        raise ValueError("rate constants must be positive")
    record = np.asarray(record_times, dtype=float)
    out, status, written = net.run(x0.reshape(1, -1), c, record, rng, t_start=float(record[0]),
                                   max_events=max_events)
    if status[0] == _EXPLODED:
        raise SSAExplosionError(int(written[0]), out[0, : written[0]].astype(float), max_events)
    return StatePath(out[0].astype(float), record)


# -- reaction networks ------------------------------------------------------------


@numba.njit
def lv_hazard(x, c, out):
    out[0] = c[0] * x[0]
    out[1] = c[1] * x[0] * x[1]
    out[2] = c[2] * x[1]


_LV_NET = ReactionNetwork(
    # prey -> 2 prey; prey + pred -> 2 pred; pred -> 0
    np.array([[1, -1, 0], [0, 1, -1]]),
    lv_hazard,
    ("prey", "predator"),
    ("birth", "predation", "death"),
)


def lotka_volterra_network() -> ReactionNetwork:
    return _LV_NET


_PKY_HAZARDS: dict[float, Callable] = {}


def _pky_reduced_hazard(k: float):
    if k not in _PKY_HAZARDS:

        @numba.njit
        def hazard(x, c, out):
            rna, p, p2, dna = x[0], x[1], x[2], x[3]
            out[0] = c[0] * dna * p2
            out[1] = c[1] * (k - dna)
            out[2] = c[2] * dna
            out[3] = c[3] * rna
            out[4] = c[4] * p * (p - 1) / 2.0
            out[5] = c[5] * p2
            out[6] = c[6] * rna
            out[7] = c[7] * p

        _PKY_HAZARDS[k] = hazard
    return _PKY_HAZARDS[k]


# Reduced stoichiometry, species (RNA, P, P2, DNA), derived from R1..R8 with
# DNA.P2 = k - DNA eliminated:
#   R1 DNA+P2->DNA.P2  R2 reverse  R3 DNA->DNA+RNA  R4 RNA->RNA+P
#   R5 2P->P2  R6 P2->2P  R7 RNA->0  R8 P->0
PKY_REDUCED_STOICHIOMETRY = np.array(
    [
        [0, 0, 1, 0, 0, 0, -1, 0],
        [0, 0, 0, 1, -2, 2, 0, -1],
        [-1, 1, 0, 0, 1, -1, 0, 0],
        [-1, 1, 0, 0, 0, 0, 0, 0],
    ]
)

PKY_FULL_STOICHIOMETRY = np.vstack([PKY_REDUCED_STOICHIOMETRY, [1, -1, 0, 0, 0, 0, 0, 0]])

_PKY_NETS: dict[tuple[str, float], ReactionNetwork] = {}


def prokaryotic_network(k: float = 10.0) -> ReactionNetwork:
    """Reduced 4-species autoregulator network with DNA.P2 = k - DNA."""
    key = ("reduced", float(k))
    if key not in _PKY_NETS:
        _PKY_NETS[key] = ReactionNetwork(
            PKY_REDUCED_STOICHIOMETRY,
            _pky_reduced_hazard(float(k)),
            ("RNA", "P", "P2", "DNA"),
            tuple(f"R{i}" for i in range(1, 9)),
        )
    return _PKY_NETS[key]


@numba.njit
def _pky_full_hazard(x, c, out):
    rna, p, p2, dna, dnap2 = x[0], x[1], x[2], x[3], x[4]
    out[0] = c[0] * dna * p2
    out[1] = c[1] * dnap2
    out[2] = c[2] * dna
    out[3] = c[3] * rna
    out[4] = c[4] * p * (p - 1) / 2.0
    out[5] = c[5] * p2
    out[6] = c[6] * rna
    out[7] = c[7] * p


def prokaryotic_full_network() -> ReactionNetwork:
    """Unreduced 5-species network (RNA, P, P2, DNA, DNA.P2)."""
    key = ("full", 0.0)
    if key not in _PKY_NETS:
        _PKY_NETS[key] = ReactionNetwork(
            PKY_FULL_STOICHIOMETRY,
            _pky_full_hazard,
            ("RNA", "P", "P2", "DNA", "DNA.P2"),
            tuple(f"R{i}" for i in range(1, 9)),
        )
    return _PKY_NETS[key]
