"""Comparison quantizers: uniform per-dimension Grid and Product Quantization."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import as_points, make_rng
from .errors import BlockMismatch, CorruptSketch, EmptyInput, InvalidParams

DEFAULT_MAX_ITERS = 25


@dataclass(frozen=True)
class GridQuantizer:
    lo: np.ndarray
    hi: np.ndarray
    k: int

    def landmarks(self, j: int) -> np.ndarray:
        if self.hi[j] == self.lo[j]:
            return np.array([self.lo[j]])
        return np.linspace(self.lo[j], self.hi[j], self.k)

    def codes(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        span = self.hi - self.lo
        step = np.where(span > 0, span / (self.k - 1), 1.0)
        # ties at a midpoint go to the larger landmark
        idx = np.floor((pts - self.lo) / step + 0.5)
        idx = np.where(span > 0, idx, 0.0)
        return np.clip(idx, 0, self.k - 1).astype(np.int64)

    def decode(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.float64)
        span = self.hi - self.lo
        out = self.lo + codes * (span / (self.k - 1))
        # land exactly on the far endpoint
        return np.where(codes == self.k - 1, self.hi, out)

    def bits(self, n: int) -> int:
        """Storage of n coded points plus the per-dimension range header."""
        d = len(self.lo)
        return n * d * math.ceil(math.log2(self.k)) + 2 * d * 64


_GRID_HEAD = struct.Struct("<4sQII")


def grid_to_bytes(q: GridQuantizer, codes) -> bytes:
    """``"QGD1" | n u64 | d u32 | k u32 | lo d x f64 | hi d x f64 | codes``,
    codes packed LSB-first at ceil(log2 k) bits each."""
    codes = np.asarray(codes, dtype=np.uint64)
    n, d = codes.shape
    width = math.ceil(math.log2(q.k))
    bits = ((codes.reshape(-1)[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1))
    return (_GRID_HEAD.pack(b"QGD1", n, d, q.k)
            + np.asarray(q.lo, dtype="<f8").tobytes() + np.asarray(q.hi, dtype="<f8").tobytes()
            + np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes())


def grid_from_bytes(data) -> tuple[GridQuantizer, np.ndarray]:
    buf = bytes(data)
    if len(buf) < _GRID_HEAD.size:
        raise CorruptSketch("truncated grid header", offset=0)
    magic, n, d, k = _GRID_HEAD.unpack_from(buf, 0)
    if magic != b"QGD1":
        raise CorruptSketch(f"bad magic {magic!r}", offset=0)
    if k < 2 or d < 1:
        raise CorruptSketch("inconsistent grid shape", offset=12)
    width = math.ceil(math.log2(k))
    pos = _GRID_HEAD.size
    nbits = n * d * width
    if pos + 16 * d + (nbits + 7) // 8 != len(buf):
        raise CorruptSketch("grid payload size mismatch", offset=pos)
    lo = np.frombuffer(buf, dtype="<f8", count=d, offset=pos).astype(np.float64)
    hi = np.frombuffer(buf, dtype="<f8", count=d, offset=pos + 8 * d).astype(np.float64)
    raw = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=pos + 16 * d),
                        count=nbits, bitorder="little").reshape(-1, width)
    codes = (raw.astype(np.int64) << np.arange(width)).sum(axis=1).reshape(n, d)
    if np.any(codes >= k):
        raise CorruptSketch("grid code out of range", offset=pos + 16 * d)
    return GridQuantizer(lo=lo, hi=hi, k=int(k)), codes


def grid_fit_quantize(points, k: int) -> tuple[GridQuantizer, np.ndarray]:
    """Round each coordinate to the nearest of ``k`` equally spaced values
    between that dimension's minimum and maximum."""
    if k < 2:
        raise InvalidParams(f"grid needs k >= 2 landmarks, got {k}")
    pts = as_points(points)
    q = GridQuantizer(lo=pts.min(axis=0), hi=pts.max(axis=0), k=int(k))
    return q, q.decode(q.codes(pts))


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def _assign(x: np.ndarray, c: np.ndarray):
    d2 = _sq_dists(x, c)
    labels = np.argmin(d2, axis=1)  # first minimum: lowest centroid index wins ties
    # objective recomputed from exact differences, not the expansion
    resid = ((x - c[labels]) ** 2).sum(axis=1)
    return labels, resid


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    n_iter: int = 0


def kmeans(vectors, k: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS) -> KMeansResult:
    """Lloyd's algorithm from a k-means++ start.

    ``history`` holds the objective after each assignment step; it never
    increases. Empty clusters are moved onto the points currently farthest
    from their centroid. Stops when assignments no longer change.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise EmptyInput("k-means on an empty set")
    if k < 1 or max_iters < 1:
        raise InvalidParams(f"need k >= 1 and max_iters >= 1, got k={k}, max_iters={max_iters}")
    rng = make_rng(seed)
    centers = kmeans_plusplus(x, k, rng)
    labels, resid = _assign(x, centers)
    history = [float(resid.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        filled = counts > 0
        means = centers.copy()
        means[filled] = sums[filled] / counts[filled, None]
        # a rounded mean can be a hair worse than the old centroid; keep the old one then
        old_sse = np.bincount(labels, weights=resid, minlength=k)
        new_sse = np.bincount(labels, weights=((x - means[labels]) ** 2).sum(axis=1), minlength=k)
        better = filled & (new_sse < old_sse)
        centers[better] = means[better]
        empty = np.flatnonzero(~filled)
        if len(empty):
            far = np.argsort(-resid, kind="stable")[:len(empty)]
            centers[empty] = x[far]
        new_labels, resid = _assign(x, centers)
        history.append(float(resid.sum()))
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break
    return KMeansResult(centroids=centers, labels=labels, objective=history[-1],
                        history=history, n_iter=it)


@dataclass
class PQCodebook:
    """Per-block centroids (m, k, d/m) and codes (n, m)."""

    centroids: np.ndarray
    codes: np.ndarray

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def d(self) -> int:
        return self.centroids.shape[0] * self.centroids.shape[2]

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    def code_bits(self) -> int:
        return self.n * self.m * max(1, math.ceil(math.log2(self.k)))

    def codebook_bits(self) -> int:
        return self.centroids.size * 64

    def bits_per_coordinate(self, include_codebook: bool = False) -> float:
        bits = self.code_bits() + (self.codebook_bits() if include_codebook else 0)
        return bits / (self.n * self.d)

    _HEAD = struct.Struct("<4sQIII")

    def to_bytes(self) -> bytes:
        """``"PQC1" | n u64 | d u32 | m u32 | k u32 | centroids f64 | codes``,
        codes packed LSB-first at ceil(log2 k) bits each."""
        width = max(1, math.ceil(math.log2(self.k)))
        head = self._HEAD.pack(b"PQC1", self.n, self.d, self.m, self.k)
        c = np.asarray(self.centroids, dtype="<f8").tobytes()
        v = self.codes.reshape(-1).astype(np.uint64)
        bits = ((v[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
        return head + c + np.packbits(bits.reshape(-1), bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data) -> "PQCodebook":
        buf = bytes(data)
        if len(buf) < cls._HEAD.size:
            raise CorruptSketch("truncated PQ header", offset=0)
        magic, n, d, m, k = cls._HEAD.unpack_from(buf, 0)
        if magic != b"PQC1":
            raise CorruptSketch(f"bad magic {magic!r}", offset=0)
        if m < 1 or k < 1 or d % m:
            raise CorruptSketch("inconsistent PQ shape", offset=12)
        width = max(1, math.ceil(math.log2(k)))
        pos = cls._HEAD.size
        csize = 8 * m * k * (d // m)
        nbits = n * m * width
        if pos + csize + (nbits + 7) // 8 > len(buf):
            raise CorruptSketch("truncated PQ payload", offset=pos)
        cent = np.frombuffer(buf, dtype="<f8", count=m * k * (d // m), offset=pos)
        pos += csize
        raw = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=pos),
                            count=nbits, bitorder="little").reshape(-1, width)
        codes = (raw.astype(np.int64) << np.arange(width)).sum(axis=1).reshape(n, m)
        if np.any(codes >= k):
            raise CorruptSketch("PQ code out of range", offset=pos)
        return cls(centroids=cent.reshape(m, k, d // m).astype(np.float64), codes=codes)


def pq_fit(points, m: int, k: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS) -> PQCodebook:
    """k-means codebook on each of ``m`` contiguous coordinate blocks."""
    pts = as_points(points)
    n, d = pts.shape
    if m < 1 or d % m:
        raise BlockMismatch(f"{m} blocks do not divide dimension {d}")
    if k < 1:
        raise InvalidParams(f"k must be positive, got {k}")
    w = d // m
    cents = np.empty((m, k, w))
    codes = np.empty((n, m), dtype=np.int64)
    for b in range(m):
        res = kmeans(pts[:, b * w:(b + 1) * w], k, seed=seed + b, max_iters=max_iters)
        cents[b] = res.centroids
        codes[:, b] = res.labels
    return PQCodebook(centroids=cents, codes=codes)


def pq_decode(cb: PQCodebook) -> np.ndarray:
    return np.hstack([cb.centroids[b][cb.codes[:, b]] for b in range(cb.m)])
