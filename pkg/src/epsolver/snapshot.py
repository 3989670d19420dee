"""Binary field snapshots.

Layout (little-endian): magic b"EPFS", u32 version, u32 n1, n2, n3, f64 L3,
u32 component count, then f64 values with i3 slowest, i1 fastest and the
component index innermost.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import Field, ScalarField, SlabGrid, TensorField, VectorField

MAGIC = b"EPFS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIdI")


def _flat_components(field: Field) -> np.ndarray:
    ncomp = int(np.prod(field.values.shape[: field.rank])) if field.rank else 1
    vals = field.values.reshape((ncomp,) + field.grid.shape)
    # (comp, i1, i2, i3) -> (i3, i2, i1, comp)
    return np.ascontiguousarray(vals.transpose(3, 2, 1, 0)), ncomp


def to_bytes(field: Field) -> bytes:
    g = field.grid
    data, ncomp = _flat_components(field)
    header = _HEADER.pack(MAGIC, VERSION, g.n1, g.n2, g.n3, float(g.length3), ncomp)
    return header + data.astype("<f8").tobytes()


def from_bytes(buf: bytes) -> Field:
    magic, version, n1, n2, n3, length3, ncomp = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    grid = SlabGrid(n1, n2, n3, length3)
    count = n1 * n2 * n3 * ncomp
    payload = np.frombuffer(buf, dtype="<f8", count=count, offset=_HEADER.size)
    if len(buf) != _HEADER.size + 8 * count:
        raise ValueError("snapshot length does not match its header")
    vals = payload.reshape(n3, n2, n1, ncomp).transpose(3, 2, 1, 0).astype(float)
    if ncomp == 1:
        return ScalarField(grid, vals[0])
    if ncomp == 3:
        return VectorField(grid, vals)
    if ncomp == 9:
        return TensorField(grid, vals.reshape((3, 3) + grid.shape))
    raise ValueError(f"unsupported component count {ncomp}")


def write_snapshot(path: str | Path, field: Field) -> None:
    Path(path).write_bytes(to_bytes(field))


def read_snapshot(path: str | Path) -> Field:
    return from_bytes(Path(path).read_bytes())
