"""Summary statistics and trajectory CSV export."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..core import ObsSeries, StatePath


def summarize(y, factor: int = 5) -> np.ndarray:
    """Downsample a series by ``factor`` and flatten it time-major.

    Keeps rows ``factor-1, 2*factor-1, ...``; accepts ``(M, L)`` or a batch
    ``(n, M, L)``. The summary length is ``L * (M // factor)``.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    arr = y.observations if isinstance(y, ObsSeries) else np.asarray(y, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    sub = arr[..., factor - 1 :: factor, :]
    return sub.reshape(sub.shape[:-2] + (-1,))


def format_float(v: float) -> str:
    return repr(float(v))


def trajectory_csv(path: StatePath, obs: ObsSeries | None = None) -> str:
    """CSV text with header ``time,x1..xK[,y1..yL]``."""
    header = ["time"] + [f"x{k + 1}" for k in range(path.K)]
    if obs is not None:
        if obs.M != path.M or not np.array_equal(obs.times, path.times):
            raise ValueError("observation times must match the state path")
        header += [f"y{j + 1}" for j in range(obs.L)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t in range(path.M):
        row = [path.times[t], *path.states[t]]
        if obs is not None:
            row += list(obs.observations[t])
        w.writerow([format_float(v) for v in row])
    return buf.getvalue()


def write_trajectory_csv(filename, path: StatePath, obs: ObsSeries | None = None) -> None:
    Path(filename).write_text(trajectory_csv(path, obs))


def read_trajectory_csv(filename) -> tuple[StatePath, ObsSeries | None]:
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    times = data[:, 0]
    path = StatePath(data[:, xcols], times)
    obs = ObsSeries(data[:, ycols], times) if ycols else None
    return path, obs
