"""Dataset readers, writers and synthetic generators."""

from __future__ import annotations

import csv
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import as_points, make_rng
from .errors import (
    BadMagic,
    CountTooLarge,
    DimensionMismatch,
    MalformedRecord,
    NormZero,
    ParseError,
)

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
CACHE_MAGIC = b"QPS1"
_CACHE_HEAD = struct.Struct("<4sQI")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: Optional[str]
    fmt: str  # fvecs | bvecs | idx | csv | npy | cache | synthetic
    n: Optional[int] = None
    d: Optional[int] = None
    normalize: bool = False
    columns: Optional[Sequence[int]] = None
    query_path: Optional[str] = None


def _read_vecs(path, dtype, item: int) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise MalformedRecord(f"{path}: empty file, dimension undefined")
    if raw.size < 4:
        raise MalformedRecord(f"{path}: truncated record at byte 0")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise MalformedRecord(f"{path}: non-positive dimension {d} at byte 0")
    rec = 4 + d * item
    if raw.size % rec:
        raise MalformedRecord(f"{path}: truncated record at byte {raw.size - raw.size % rec}")
    rows = raw.reshape(-1, rec)
    dims = rows[:, :4].copy().view("<i4").reshape(-1)
    bad = np.flatnonzero(dims != d)
    if len(bad):
        raise DimensionMismatch(f"{path}: record {bad[0]} (byte {bad[0] * rec}) has "
                                f"dimension {dims[bad[0]]}, expected {d}")
    return rows[:, 4:].copy().view(dtype).reshape(len(rows), d)


def read_fvecs(path) -> np.ndarray:
    """Records of a little-endian int32 dimension followed by that many float32."""
    return _read_vecs(path, "<f4", 4).astype(np.float64)


def read_bvecs(path) -> np.ndarray:
    return _read_vecs(path, np.uint8, 1).astype(np.float64)


def read_ivecs(path) -> np.ndarray:
    return _read_vecs(path, "<i4", 4).astype(np.int64)


def write_fvecs(path, points) -> None:
    pts = np.asarray(points, dtype="<f4")
    if pts.ndim != 2:
        raise ValueError("write_fvecs needs a 2-d array")
    n, d = pts.shape
    out = np.empty((n, d + 1), dtype="<f4")
    out[:, 0] = np.array([d], dtype="<i4").view("<f4")[0]
    out[:, 1:] = pts
    out.tofile(path)


def read_idx(path, normalize: bool = True) -> np.ndarray:
    """IDX3 image file (as used by MNIST) flattened to one row per image.

    With ``normalize`` every row is scaled to unit Euclidean norm; all-zero
    images cannot be normalized and are dropped with a warning.
    """
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise BadMagic(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
        body = np.frombuffer(fh.read(), dtype=np.uint8)
    if body.size != n * rows * cols:
        raise MalformedRecord(f"{path}: expected {n * rows * cols} pixels, got {body.size}")
    x = body.reshape(n, rows * cols).astype(np.float64)
    if normalize:
        x = normalize_rows(x, drop_zero=True)
    return x


def normalize_rows(x, drop_zero: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    if zero.any():
        if not drop_zero:
            raise NormZero(f"row {np.flatnonzero(zero)[0]} has zero norm")
        log.warning("dropping %d all-zero rows that cannot be normalized", int(zero.sum()))
        x, norms = x[~zero], norms[~zero]
    return x / norms[:, None]


def read_csv(path, columns: Optional[Sequence] = None, header: bool = True) -> np.ndarray:
    """One point per row from the selected numeric columns (all by default).

    Columns may be given as indices or, when the file has a header, names.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader) if header else None
        idx = None
        if columns is not None:
            idx = [names.index(c) if isinstance(c, str) else int(c) for c in columns]
        rows = []
        for line_no, row in enumerate(reader, start=2 if header else 1):
            if not row:
                continue
            cells = row if idx is None else [row[i] for i in idx]
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DimensionMismatch(f"{path}: rows have differing widths {sorted(widths)}")
    return as_points(rows)


def fold_series(values, width: int = 48) -> np.ndarray:
    """Cut a 1-d time series into consecutive non-overlapping windows.

    The default of 48 turns half-hourly counts into one 48-d point per day;
    a trailing partial window is dropped.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    n = len(v) // width
    return v[:n * width].reshape(n, width)


def gen_diagonal(n: int = 10_000, d: int = 128, hi: float = 40_000.0, seed: int = 0) -> np.ndarray:
    """Points (x, x, ..., x) with x uniform on [0, hi]."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    x = make_rng(seed).uniform(0.0, hi, size=n)
    return np.repeat(x[:, None], d, axis=1)


def gen_uniform(n: int, d: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    return make_rng(seed).uniform(0.0, scale, size=(n, d))


def sample_queries(points, count: int, seed: int = 0):
    """Split off ``count`` random rows as queries; returns (queries, rest)."""
    pts = np.asarray(points)
    n = len(pts)
    if count > n or count < 0:
        raise CountTooLarge(f"cannot draw {count} queries from {n} points")
    pick = np.sort(make_rng(seed).permutation(n)[:count])
    mask = np.zeros(n, dtype=bool)
    mask[pick] = True
    return pts[mask], pts[~mask]


def save_cache(path, points) -> None:
    """Native cache: ``"QPS1" | n u64 | d u32 | n x d little-endian f64``."""
    pts = as_points(points)
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEAD.pack(CACHE_MAGIC, *pts.shape))
        fh.write(pts.astype("<f8").tobytes())


def load_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_CACHE_HEAD.size)
        if len(head) < _CACHE_HEAD.size:
            raise MalformedRecord(f"{path}: truncated cache header")
        magic, n, d = _CACHE_HEAD.unpack(head)
        if magic != CACHE_MAGIC:
            raise BadMagic(f"{path}: not a point-set cache")
        body = fh.read()
    if len(body) != 8 * n * d:
        raise MalformedRecord(f"{path}: expected {8 * n * d} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


_READERS = {
    "fvecs": read_fvecs,
    "bvecs": read_bvecs,
    "cache": load_cache,
    "npy": np.load,
}


def load(spec: DatasetSpec) -> np.ndarray:
    """Load a dataset and check it against its declared shape."""
    if spec.fmt == "idx":
        pts = read_idx(spec.path, normalize=spec.normalize)
    elif spec.fmt == "csv":
        pts = read_csv(spec.path, spec.columns)
    elif spec.fmt == "synthetic":
        pts = gen_diagonal(spec.n or 10_000, spec.d or 128)
    elif spec.fmt in _READERS:
        pts = np.asarray(_READERS[spec.fmt](spec.path), dtype=np.float64)
    else:
        raise ValueError(f"unknown dataset format {spec.fmt!r}")
    if spec.normalize and spec.fmt != "idx":
        pts = normalize_rows(pts, drop_zero=True)
    if spec.n is not None and len(pts) != spec.n:
        raise DimensionMismatch(f"{spec.name}: expected {spec.n} points, loaded {len(pts)}")
    if spec.d is not None and pts.shape[1] != spec.d:
        raise DimensionMismatch(f"{spec.name}: expected d={spec.d}, loaded d={pts.shape[1]}")
    return pts


def guess_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext in ("fvecs", "bvecs", "csv", "npy"):
        return ext
    if ext in ("qps", "cache"):
        return "cache"
    if "idx" in os.path.basename(path) or ext == "ubyte":
        return "idx"
    raise ValueError(f"cannot infer the format of {path!r}; pass --format")


# Datasets of the evaluation, with their reported shapes.
SIFT = DatasetSpec("sift", "sift/sift_base.fvecs", "fvecs", 1_000_000, 128,
                   query_path="sift/sift_query.fvecs")
MNIST = DatasetSpec("mnist", "train-images-idx3-ubyte", "idx", 60_000, 784, normalize=True,
                    query_path="t10k-images-idx3-ubyte")
TAXI = DatasetSpec("taxi", "taxi.csv", "csv", 8_874, 48)
DIAGONAL = DatasetSpec("diagonal", None, "synthetic", 10_000, 128)
