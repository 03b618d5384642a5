"""Portable binary checkpoint for :class:`ConditionalFlow`.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"IDEMAF\\x00\\x00"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header
    16+H    ...   float64 little-endian arrays, C order, concatenated in
                  the order listed under "arrays" in the header

The header holds ``target_dim``, ``context_dim``, ``n_blocks``, ``hidden``
and ``arrays``: a list of ``{"name", "shape"}`` entries. The first four arrays
are the standardization statistics ``x_mean``, ``x_std``, ``c_mean``,
``c_std``; the rest are block weights named ``block{j}.{W1,C1,b1,W2,b2,Wo,bo}``.
MADE masks are not stored; they are a deterministic function of
``(target_dim, hidden)``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .maf import ConditionalFlow

MAGIC = b"IDEMAF\x00\x00"
VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def _arrays(flow: ConditionalFlow):
    return [
        ("x_mean", flow.x_mean),
        ("x_std", flow.x_std),
        ("c_mean", flow.c_mean),
        ("c_std", flow.c_std),
        *flow.named_arrays(),
    ]


def flow_to_bytes(flow: ConditionalFlow) -> bytes:
    arrays = _arrays(flow)
    header = {
        "target_dim": flow.target_dim,
        "context_dim": flow.context_dim,
        "n_blocks": flow.n_blocks,
        "hidden": flow.hidden,
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype=_LE_F64).tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + body


def flow_from_bytes(data: bytes) -> ConditionalFlow:
    if data[:8] != MAGIC:
        raise CheckpointError("not a flow checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    flow = ConditionalFlow(header["target_dim"], header["context_dim"], header["n_blocks"], header["hidden"])
    pos = 16 + hlen
    values = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(data):
            raise CheckpointError("truncated checkpoint")
        values[entry["name"]] = np.frombuffer(data[pos:end], dtype=_LE_F64).astype(float).reshape(shape)
        pos = end
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    flow.set_standardization(values.pop("x_mean"), values.pop("x_std"), values.pop("c_mean"), values.pop("c_std"))
    for name, arr in flow.named_arrays():
        if name not in values or values[name].shape != arr.shape:
            raise CheckpointError(f"missing or misshapen array {name}")
    flat = np.concatenate([values[name].ravel() for name, _ in flow.named_arrays()])
    flow.set_params(flat)
    return flow


def save_flow(flow: ConditionalFlow, path) -> None:
    Path(path).write_bytes(flow_to_bytes(flow))


def load_flow(path) -> ConditionalFlow:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"flow checkpoint not found: {p}")
    return flow_from_bytes(p.read_bytes())
