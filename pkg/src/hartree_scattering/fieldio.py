"""Flat binary containers for fields and trajectories, plus text emitters.

Field container (``HFLD``, version 1) — all integers and floats
little-endian, payload in C order:

======  ====  =========================================================
offset  size  contents
======  ====  =========================================================
0       4     magic ``b"HFLD"``
4       1     container version (1)
5       1     spatial dimension ``d`` (1 or 2)
6       1     representation: 0 = position, 1 = frequency
7       1     scalar type: 0 = complex64, 1 = complex128
8       4     points per axis ``n`` (uint32)
12      8     half box length ``L`` (float64)
20      8     kernel exponent ``gamma`` (float64; NaN = kernel-free)
28      --    ``n^d`` complex scalars, C order, little-endian
======  ====  =========================================================

Trajectory container (``HTRJ``, version 1): every stored field is
position-representation on one shared grid, so the per-field header
collapses into one:

======  ====  =========================================================
offset  size  contents
======  ====  =========================================================
0       4     magic ``b"HTRJ"``
4       1     container version (1)
5       1     spatial dimension ``d``
6       1     picture: 0 = physical, 1 = interaction
7       1     scalar type: 0 = complex64, 1 = complex128
8       4     points per axis ``n`` (uint32)
12      8     half box length ``L`` (float64)
20      4     sample count ``m`` (uint32)
24      8m    sample times (float64 each)
--      --    ``m`` consecutive field payloads, each as in ``HFLD``
======  ====  =========================================================

Double precision round-trips exactly; single precision is a lossy
storage option for large sweeps and is never the default.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .propagator import INTERACTION, PHYSICAL, Trajectory
from .spectral_core import ComplexField, FREQUENCY, POSITION, make_grid

__all__ = [
    "read_field",
    "write_field",
    "read_trajectory",
    "write_trajectory",
    "write_json",
    "write_csv",
]

_FIELD_MAGIC = b"HFLD"
_TRAJ_MAGIC = b"HTRJ"
_VERSION = 1
_REPRESENTATIONS = (POSITION, FREQUENCY)
_PICTURES = (PHYSICAL, INTERACTION)
_DTYPES = (np.complex64, np.complex128)
_FIELD_HEADER = struct.Struct("<4sBBBBId d")   # magic, ver, d, rep, dtype, n, L, gamma
_TRAJ_HEADER = struct.Struct("<4sBBBBId I")    # magic, ver, d, pic, dtype, n, L, m


def _dtype_code(precision: str) -> int:
    if precision == "single":
        return 0
    if precision == "double":
        return 1
    raise ValueError(f"precision must be 'single' or 'double', got {precision!r}")


def write_field(path: str | Path, field: ComplexField, *,
                gamma: float | None = None,
                precision: str = "double") -> Path:
    """Serialize one field; ``gamma`` marks kernel-bearing data."""
    code = _dtype_code(precision)
    if gamma is not None and not math.isfinite(gamma):
        raise ValueError(f"gamma must be finite when given, got {gamma}")
    path = Path(path)
    rep = _REPRESENTATIONS.index(field.representation)
    header = _FIELD_HEADER.pack(
        _FIELD_MAGIC, _VERSION, field.grid.d, rep, code,
        field.grid.n, field.grid.L,
        math.nan if gamma is None else float(gamma))
    payload = np.ascontiguousarray(
        field.values, dtype=np.dtype(_DTYPES[code]).newbyteorder("<"))
    path.write_bytes(header + payload.tobytes())
    return path


def read_field(path: str | Path) -> tuple[ComplexField, float | None]:
    """Read one field back; returns ``(field, gamma-or-None)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _FIELD_HEADER.size or raw[:4] != _FIELD_MAGIC:
        raise ValueError(f"{path}: not a field container (bad magic)")
    magic, version, d, rep, code, n, L, gamma = \
        _FIELD_HEADER.unpack_from(raw)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    if rep not in (0, 1) or code not in (0, 1):
        raise ValueError(f"{path}: corrupt header")
    grid = make_grid(d, n, L)
    count = n**d
    expected = _FIELD_HEADER.size + count * np.dtype(_DTYPES[code]).itemsize
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size {len(raw)} does not match header "
            f"(expected {expected})")
    values = np.frombuffer(raw, dtype=np.dtype(_DTYPES[code]).newbyteorder("<"),
                           count=count, offset=_FIELD_HEADER.size)
    field = ComplexField(grid, values.astype(np.complex128).reshape(grid.shape),
                         _REPRESENTATIONS[rep])
    return field, (None if math.isnan(gamma) else gamma)


def write_trajectory(path: str | Path, traj: Trajectory, *,
                     precision: str = "double") -> Path:
    """Serialize a trajectory's times and fields (ledgers go to JSON)."""
    code = _dtype_code(precision)
    path = Path(path)
    grid = traj.fields[0].grid
    header = _TRAJ_HEADER.pack(
        _TRAJ_MAGIC, _VERSION, grid.d, _PICTURES.index(traj.picture), code,
        grid.n, grid.L, len(traj.fields))
    times = np.ascontiguousarray(traj.times, dtype="<f8").tobytes()
    chunks = [header, times]
    for field in traj.fields:
        chunks.append(np.ascontiguousarray(
            field.values,
            dtype=np.dtype(_DTYPES[code]).newbyteorder("<")).tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def read_trajectory(path: str | Path) -> Trajectory:
    """Read a trajectory container (without ledger series)."""
    raw = Path(path).read_bytes()
    if len(raw) < _TRAJ_HEADER.size or raw[:4] != _TRAJ_MAGIC:
        raise ValueError(f"{path}: not a trajectory container (bad magic)")
    magic, version, d, pic, code, n, L, m = _TRAJ_HEADER.unpack_from(raw)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    if pic not in (0, 1) or code not in (0, 1) or m == 0:
        raise ValueError(f"{path}: corrupt header")
    grid = make_grid(d, n, L)
    count = n**d
    item = np.dtype(_DTYPES[code]).itemsize
    expected = _TRAJ_HEADER.size + 8 * m + m * count * item
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size {len(raw)} does not match header "
            f"(expected {expected})")
    times = np.frombuffer(raw, dtype="<f8", count=m, offset=_TRAJ_HEADER.size)
    fields = []
    offset = _TRAJ_HEADER.size + 8 * m
    for k in range(m):
        values = np.frombuffer(
            raw, dtype=np.dtype(_DTYPES[code]).newbyteorder("<"),
            count=count, offset=offset + k * count * item)
        fields.append(ComplexField(
            grid, values.astype(np.complex128).reshape(grid.shape), POSITION))
    return Trajectory(times.astype(float), tuple(fields), _PICTURES[pic], None)


# ---------------------------------------------------------------------------
# text emitters (deterministic: sorted keys, no timestamps, NaN -> null)
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def write_json(path: str | Path, payload: Mapping) -> Path:
    """Canonical JSON: sorted keys, two-space indent, non-finite as null."""
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True)
                    + "\n")
    return path


def write_csv(path: str | Path, header: Sequence[str],
              rows: Iterable[Sequence]) -> Path:
    """Plain comma-separated table; floats via repr for exact round-trips."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(
                f"row width {len(row)} does not match header width "
                f"{len(header)}")
        lines.append(",".join(
            repr(float(c)) if isinstance(c, (float, np.floating))
            else str(c) for c in row))
    path.write_text("\n".join(lines) + "\n")
    return path
