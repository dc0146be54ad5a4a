"""Binary file formats.

GCDV (feature file), little-endian::

    b"GCDV" | u16 version | u32 n | u32 d | n*d float32, row-major

with a text sidecar ``<path>.labels`` holding one ``<label> <observed 0|1>``
line per row.

GCDT (task file), little-endian::

    b"GCDT" | u16 version | u32 n | u32 d | n*d float64 points | n int32 labels
    | n uint8 observed flags

A GCDT file is ``14 + 8*n*d + 5*n`` bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .synthgen import GcdTask

GCDV_MAGIC = b"GCDV"
GCDT_MAGIC = b"GCDT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")


class FormatError(ValueError):
    pass


def gcdt_size(n: int, d: int) -> int:
    return _HEADER.size + 8 * n * d + 5 * n


def _read_header(buf: bytes, magic: bytes, path) -> tuple[int, int]:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a header ({len(buf)} bytes)")
    got, version, n, d = _HEADER.unpack_from(buf)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {FORMAT_VERSION}")
    return n, d


def sidecar_path(path) -> Path:
    return Path(str(path) + ".labels")


def write_gcdv(path, features, labels=None, observed=None) -> None:
    x = np.asarray(features)
    if x.ndim != 2:
        raise ValueError("features must be an n x d matrix")
    n, d = x.shape
    Path(path).write_bytes(_HEADER.pack(GCDV_MAGIC, FORMAT_VERSION, n, d)
                           + np.ascontiguousarray(x, dtype="<f4").tobytes())
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        observed = np.ones(n, bool) if observed is None else np.asarray(observed, bool)
        if labels.shape != (n,) or observed.shape != (n,):
            raise ValueError("labels/observed must have one entry per row")
        sidecar_path(path).write_text(
            "".join(f"{int(y)} {int(o)}\n" for y, o in zip(labels, observed)))


def read_gcdv(path, with_sidecar: bool = True):
    """Return ``features`` or ``(features, labels, observed)``."""
    buf = Path(path).read_bytes()
    n, d = _read_header(buf, GCDV_MAGIC, path)
    expected = 4 * n * d
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise FormatError(f"{path}: body has {actual} bytes, expected {expected}")
    x = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n, d).copy()
    if not with_sidecar:
        return x
    labels, observed = read_sidecar(sidecar_path(path), n)
    return x, labels, observed


def read_sidecar(path, n: int) -> tuple[np.ndarray, np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != n:
        raise FormatError(f"{path}: {len(lines)} sidecar records, expected {n}")
    labels = np.empty(n, dtype=np.int64)
    observed = np.empty(n, dtype=bool)
    for i, ln in enumerate(lines):
        parts = ln.split()
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            raise FormatError(f"{path}:{i + 1}: expected '<label> <0|1>', got {ln!r}")
        labels[i] = int(parts[0])
        observed[i] = parts[1] == "1"
    return labels, observed


def write_gcdt(path, task: GcdTask) -> None:
    n, d = task.points.shape
    Path(path).write_bytes(b"".join([
        _HEADER.pack(GCDT_MAGIC, FORMAT_VERSION, n, d),
        np.ascontiguousarray(task.points, dtype="<f8").tobytes(),
        task.labels.astype("<i4").tobytes(),
        task.observed.astype(np.uint8).tobytes(),
    ]))


def read_gcdt(path) -> GcdTask:
    buf = Path(path).read_bytes()
    n, d = _read_header(buf, GCDT_MAGIC, path)
    expected = gcdt_size(n, d)
    if len(buf) != expected:
        raise FormatError(f"{path}: file has {len(buf)} bytes, expected {expected}")
    off = _HEADER.size
    pts = np.frombuffer(buf, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += 8 * n * d
    labels = np.frombuffer(buf, dtype="<i4", count=n, offset=off)
    off += 4 * n
    flags = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off)
    if flags.size and flags.max() > 1:
        raise FormatError(f"{path}: observed flags must be 0 or 1")
    return GcdTask(pts.astype(np.float64), labels.astype(np.int64), flags.astype(bool))
