"""Compression API: single-tree, block and max-distortion QuadSketch.

Block and multi-tree sketches wrap ordinary sketch records in an envelope::

    magic "QSKB" | version u16 | flags u16 | n u64 | d u32 | m u32 | seed u64 |
    m x (offset u64, length u64) | m sketch records

    magic "QSKM" | version u16 | flags u16 | n u64 | d u32 | k u32 | eps f64 |
    seed u64 | L u16 | lam u16 | gamma width u8 | pad 3 bytes |
    gamma ids (n x width bits, stored as tree index - 1) |
    k x (offset u64, length u64) | k sketch records

Offsets are absolute byte positions in the envelope.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import codec
from .core import (
    SketchParams,
    ShiftedHypercube,
    as_points,
    aspect_ratio,
    cube_from_delta,
    derive_params,
    enclosing_cube,
    split_seed,
)
from .errors import (
    AmplificationExhausted,
    BlockMismatch,
    CorruptSketch,
    DegeneratePointSet,
    IndexOutOfRange,
    InvalidParams,
    VersionMismatch,
)
from .quadtree import QuadTree, build, padded_points, prune

BLOCK_MAGIC = b"QSKB"
MULTI_MAGIC = b"QSKM"
ENVELOPE_VERSION = 1

_BLOCK_HEAD = struct.Struct("<4sHHQIIQ")
_MULTI_HEAD = struct.Struct("<4sHHQIIdQHHB3x")
_SECTION = struct.Struct("<QQ")

# delta used when the caller supplies only eps
DEFAULT_DELTA = 0.1
# delta of every tree in the max-distortion construction
MAXDIST_DELTA = 0.25


@dataclass
class Sketch:
    """An in-memory QuadSketch: the pruned tree plus its coordinate frame."""

    tree: QuadTree
    cube: ShiftedHypercube
    params: SketchParams
    degenerate: bool = False

    @property
    def n(self) -> int:
        return self.tree.n_points

    @property
    def d(self) -> int:
        return self.tree.d

    def to_bytes(self) -> bytes:
        flags = codec.FLAG_DEGENERATE if self.degenerate else 0
        return codec.encode(self.tree, self.cube, lam=self.params.lam,
                            seed=self.params.seed, flags=flags)

    def decompress(self) -> np.ndarray:
        return self.tree.decompress_points(self.cube.origin)

    def size(self) -> codec.SizeBreakdown:
        return codec.size_breakdown(self.tree)


def sketch_points(points, params: SketchParams) -> Sketch:
    """Shift, build and prune; the tree is kept in memory.

    A point set whose points all coincide gets a cube of half-width 1 around
    the common point instead of an error, giving a single chain of cells.
    """
    pts = as_points(points)
    degenerate = False
    try:
        cube = enclosing_cube(pts, params.seed)
    except DegeneratePointSet:
        cube = cube_from_delta(pts[0], 1.0, params.seed)
        degenerate = True
    tree = prune(build(pts, cube, params.L), params.lam)
    return Sketch(tree=tree, cube=cube, params=params, degenerate=degenerate)


def compress(points, params: SketchParams) -> bytes:
    """Serialized single-tree sketch of ``points``."""
    return sketch_points(points, params).to_bytes()


def load_sketch(data) -> Sketch:
    tree, cube, header = codec.decode(data)
    params = SketchParams(L=max(header.L, 1), lam=max(header.lam, 1), seed=header.seed)
    return Sketch(tree=tree, cube=cube, params=params,
                  degenerate=bool(header.flags & codec.FLAG_DEGENERATE))


def decompress(data) -> np.ndarray:
    """Approximate points recovered from a serialized sketch."""
    tree, cube, _ = codec.decode(data)
    return tree.decompress_points(cube.origin)


# --- block variant ---------------------------------------------------------

def block_slices(d: int, m: int) -> list[slice]:
    """Contiguous coordinate ranges of equal size, in order."""
    if m < 1 or d % m:
        raise BlockMismatch(f"{m} blocks do not divide dimension {d}")
    w = d // m
    return [slice(i * w, (i + 1) * w) for i in range(m)]


def block_seed(seed: int, index: int, m: int) -> int:
    """Seed of block ``index``; a single block reuses the master seed."""
    return seed if m == 1 else split_seed(seed, index)


@dataclass
class BlockSketch:
    blocks: list[Sketch]
    d: int
    seed: int

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return self.blocks[0].n

    def decompress(self) -> np.ndarray:
        return np.hstack([b.decompress() for b in self.blocks])

    def payload_bits(self) -> int:
        return sum(b.size().payload_bits for b in self.blocks)

    def to_bytes(self) -> bytes:
        records = [b.to_bytes() for b in self.blocks]
        head = _BLOCK_HEAD.pack(BLOCK_MAGIC, ENVELOPE_VERSION, 0, self.n, self.d, self.m, self.seed)
        return head + _section_table(len(head), records) + b"".join(records)


def _section_table(head_size: int, records: list[bytes]) -> bytes:
    pos = head_size + _SECTION.size * len(records)
    table = []
    for rec in records:
        table.append(_SECTION.pack(pos, len(rec)))
        pos += len(rec)
    return b"".join(table)


def _read_sections(buf: bytes, pos: int, count: int) -> list[tuple[int, int]]:
    if pos + _SECTION.size * count > len(buf):
        raise CorruptSketch("truncated section table", offset=pos)
    out = []
    for i in range(count):
        off, length = _SECTION.unpack_from(buf, pos + i * _SECTION.size)
        if off + length > len(buf):
            raise CorruptSketch(f"section {i} runs past the end", offset=pos + i * _SECTION.size)
        out.append((off, length))
    return out


def sketch_blocks(points, params: SketchParams) -> BlockSketch:
    pts = as_points(points)
    d = pts.shape[1]
    sketches = []
    for i, sl in enumerate(block_slices(d, params.m)):
        sub = params.replace(m=1, seed=block_seed(params.seed, i, params.m))
        sketches.append(sketch_points(pts[:, sl], sub))
    return BlockSketch(blocks=sketches, d=d, seed=params.seed)


def compress_blocks(points, params: SketchParams) -> bytes:
    """Independent sketches of the ``params.m`` contiguous coordinate blocks."""
    return sketch_blocks(points, params).to_bytes()


def load_block_sketch(data) -> BlockSketch:
    buf = bytes(data)
    if len(buf) < _BLOCK_HEAD.size:
        raise CorruptSketch("truncated block header", offset=0)
    magic, version, _, n, d, m, seed = _BLOCK_HEAD.unpack_from(buf, 0)
    if magic != BLOCK_MAGIC:
        raise CorruptSketch(f"bad magic {magic!r}", offset=0)
    if version != ENVELOPE_VERSION:
        raise VersionMismatch(f"unsupported envelope version {version}", offset=4)
    if m < 1 or d % m:
        raise CorruptSketch(f"{m} blocks do not divide d={d}", offset=20)
    blocks = []
    for off, length in _read_sections(buf, _BLOCK_HEAD.size, m):
        sk = load_sketch(buf[off:off + length])
        if sk.n != n or sk.d != d // m:
            raise CorruptSketch("block shape disagrees with envelope", offset=off)
        blocks.append(sk)
    return BlockSketch(blocks=blocks, d=d, seed=seed)


def decompress_blocks(data) -> np.ndarray:
    return load_block_sketch(data).decompress()


# --- max-distortion variant ------------------------------------------------

def maxdist_params(points, eps: float, seed: int = 0) -> SketchParams:
    """Tree parameters for the all-pairs oracle, from the aspect ratio of
    the whole set. Sets with aspect ratio 1 (for instance two points) are
    treated as having aspect ratio 2 so that the log terms stay positive."""
    pts = as_points(points)
    phi = aspect_ratio(pts) if len(pts) > 1 else 2.0
    return derive_params(eps, MAXDIST_DELTA, pts.shape[1], max(phi, 2.0), seed=seed)


@dataclass
class MultiTreeSketch:
    """Trees T_1..T_k over shrinking point subsets, plus the tree index
    ``gamma[i]`` (1-based) in which point i is padded. Point i belongs to
    every tree T_1..T_gamma[i], in increasing index order."""

    trees: list[Sketch]
    gamma: np.ndarray
    eps: float
    seed: int
    params: SketchParams
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.gamma)

    @property
    def d(self) -> int:
        return self.trees[0].d

    @property
    def k(self) -> int:
        return len(self.trees)

    def members(self, t: int) -> np.ndarray:
        """Point indices held by tree ``t`` (1-based)."""
        return np.flatnonzero(self.gamma >= t)

    def _points_of(self, t: int) -> np.ndarray:
        if t not in self._cache:
            self._cache[t] = self.trees[t - 1].decompress()
        return self._cache[t]

    def payload_bits(self) -> int:
        gamma_bits = self.n * codec.leaf_id_width(self.k)
        return sum(t.size().payload_bits for t in self.trees) + gamma_bits

    def to_bytes(self) -> bytes:
        width = codec.leaf_id_width(self.k)
        head = _MULTI_HEAD.pack(MULTI_MAGIC, ENVELOPE_VERSION, 0, self.n, self.d, self.k,
                                self.eps, self.seed, self.params.L, self.params.lam, width)
        if width:
            g = (self.gamma - 1).astype(np.uint64)
            bits = ((g[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
            gbytes = codec.pack_bits(bits.reshape(-1))
        else:
            gbytes = b""
        records = [t.to_bytes() for t in self.trees]
        prefix = head + gbytes
        return prefix + _section_table(len(prefix), records) + b"".join(records)

    @classmethod
    def from_bytes(cls, data) -> "MultiTreeSketch":
        buf = bytes(data)
        if len(buf) < _MULTI_HEAD.size:
            raise CorruptSketch("truncated multi-tree header", offset=0)
        (magic, version, _, n, d, k, eps, seed, L, lam,
         width) = _MULTI_HEAD.unpack_from(buf, 0)
        if magic != MULTI_MAGIC:
            raise CorruptSketch(f"bad magic {magic!r}", offset=0)
        if version != ENVELOPE_VERSION:
            raise VersionMismatch(f"unsupported envelope version {version}", offset=4)
        if k < 1 or width != codec.leaf_id_width(k):
            raise CorruptSketch("inconsistent tree count", offset=20)
        pos = _MULTI_HEAD.size
        gbytes = (n * width + 7) // 8
        if pos + gbytes > len(buf) or (width == 0 and n > codec.MAX_SINGLE_LEAF_POINTS):
            raise CorruptSketch("truncated gamma array", offset=pos)
        if width:
            raw = codec.unpack_bits(buf[pos:pos + gbytes], n * width).reshape(n, width)
            gamma = (raw.astype(np.int64) << np.arange(width)).sum(axis=1) + 1
        else:
            gamma = np.ones(n, dtype=np.int64)
        if np.any(gamma > k):
            raise CorruptSketch("gamma index past the last tree", offset=pos)
        pos += gbytes
        trees = []
        for t, (off, length) in enumerate(_read_sections(buf, pos, k), start=1):
            sk = load_sketch(buf[off:off + length])
            if sk.n != int((gamma >= t).sum()) or sk.d != d:
                raise CorruptSketch(f"tree {t} does not match its membership", offset=off)
            trees.append(sk)
        params = SketchParams(L=L, lam=lam, seed=seed, eps=eps, delta=MAXDIST_DELTA)
        return cls(trees=trees, gamma=gamma, eps=eps, seed=seed, params=params)


def compress_maxdist(points, eps: float, seed: int = 0, *,
                     params: Optional[SketchParams] = None,
                     max_retries: Optional[int] = None) -> MultiTreeSketch:
    """Sketch from which every pairwise distance is recoverable within 1 +/- eps.

    Each round sketches the points not yet padded in an earlier tree and keeps
    the round only if at least half of them come out padded; otherwise it
    retries with fresh randomness, up to ``4 ceil(log2 n) + 8`` times.
    """
    pts = as_points(points)
    if not 0.0 < eps < 1.0:
        raise InvalidParams(f"eps must lie in (0, 1), got {eps}")
    n = len(pts)
    if params is None:
        params = maxdist_params(pts, eps, seed)
    if max_retries is None:
        max_retries = 4 * math.ceil(math.log2(max(n, 2))) + 8
    gamma = np.zeros(n, dtype=np.int64)
    remaining = np.arange(n)
    trees = []
    draws = 0
    while len(remaining):
        for _ in range(max_retries):
            sub = params.replace(seed=split_seed(seed, draws))
            draws += 1
            sk = sketch_points(pts[remaining], sub)
            padded = padded_points(pts[remaining], sk.cube, sk.tree, eps, params.lam)
            if 2 * int(padded.sum()) >= len(remaining):
                break
        else:
            raise AmplificationExhausted(
                f"round {len(trees) + 1}: fewer than half of {len(remaining)} points "
                f"padded in {max_retries} attempts")
        trees.append(sk)
        gamma[remaining[padded]] = len(trees)
        remaining = remaining[~padded]
    return MultiTreeSketch(trees=trees, gamma=gamma, eps=eps, seed=seed, params=params)


def distance_query(msk: MultiTreeSketch, i: int, j: int) -> float:
    """Distance estimate between points i and j, read from the tree in
    which the earlier-padded of the two is padded."""
    n = msk.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"indices ({i}, {j}) outside [0, {n})")
    if i == j:
        raise InvalidParams("distance_query needs two distinct points")
    g = int(min(msk.gamma[i], msk.gamma[j]))
    members = msk.members(g)
    pos = np.searchsorted(members, [i, j])
    approx = msk._points_of(g)
    return float(np.linalg.norm(approx[pos[0]] - approx[pos[1]]))


def all_distances(msk: MultiTreeSketch) -> np.ndarray:
    """(n, n) matrix of :func:`distance_query` answers, zero on the diagonal."""
    n = msk.n
    out = np.zeros((n, n))
    for t in range(1, msk.k + 1):
        members = msk.members(t)
        approx = msk._points_of(t)
        rows = np.flatnonzero(msk.gamma[members] == t)
        if not len(rows):
            continue
        diff = approx[rows][:, None, :] - approx[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        # pairs (i, j) with gamma[i] == t and gamma[j] >= t resolve in tree t
        out[np.ix_(members[rows], members)] = dist
        out[np.ix_(members, members[rows])] = dist.T
    np.fill_diagonal(out, 0.0)
    return out
