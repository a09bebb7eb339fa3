"""Bit-exact serialization of pruned quadtrees.

Layout of a sketch record (all integers little-endian, bit streams filled
LSB-first within each byte)::

    magic "QSK1" | version u16 | flags u16 | n u64 | d u32 | m u32 |
    L u16 | lam u16 | root_level i32 | seed u64 | origin d x f64 |
    leaf_count u64 | tree_bits u64 | tree bytes | leaf id bytes

The tree is an Euler tour in DFS preorder. A downward step is a 0 bit,
followed by a kind bit (0 short, 1 long) and then either the d label bits
or the Elias-gamma code of the long edge's length. An upward step is a 1
bit. Leaf ids take ceil(log2(leaf_count)) bits per point.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import MAX_LEVELS, ShiftedHypercube
from .errors import CorruptSketch, LeafOutOfRange, VersionMismatch
from .quadtree import QuadTree

MAGIC = b"QSK1"
VERSION = 1
FLAG_DEGENERATE = 0x1

_HEAD = struct.Struct("<4sHHQIIHHiQ")
_U64 = struct.Struct("<Q")

# Upper bound on points accepted when leaf ids carry no bits (single leaf),
# since nothing else in the stream limits the allocation.
MAX_SINGLE_LEAF_POINTS = 1 << 26


@dataclass
class SketchHeader:
    n: int
    d: int
    m: int
    L: int
    lam: int
    root_level: int
    seed: int
    origin: np.ndarray
    leaf_count: int
    flags: int = 0
    version: int = VERSION


@dataclass
class SizeBreakdown:
    header_bits: int
    tree_bits: int
    leaf_id_bits: int
    padding_bits: int

    @property
    def payload_bits(self) -> int:
        return self.tree_bits + self.leaf_id_bits

    @property
    def total_bits(self) -> int:
        return self.header_bits + self.payload_bits + self.padding_bits


def leaf_id_width(leaf_count: int) -> int:
    return max(0, math.ceil(math.log2(leaf_count))) if leaf_count > 1 else 0


def gamma_length(value: np.ndarray) -> np.ndarray:
    value = np.asarray(value, dtype=np.int64)
    return 2 * (np.floor(np.log2(value)).astype(np.int64)) + 1


def gamma_encode(value: int) -> list[int]:
    """Elias-gamma bits of a positive integer, most significant first."""
    if value < 1:
        raise ValueError("gamma code needs a positive integer")
    width = value.bit_length()
    return [0] * (width - 1) + [(value >> s) & 1 for s in range(width - 1, -1, -1)]


def tree_depths_in_edges(tree: QuadTree) -> np.ndarray:
    """Number of edges (short or long) between each node and the root."""
    rdepth = np.zeros(tree.n_nodes, dtype=np.int64)
    order = np.argsort(tree.depth, kind="stable")
    bounds = np.searchsorted(tree.depth[order], np.arange(tree.L + 2))
    # a parent is always strictly shallower than its children
    for t in range(1, tree.L + 1):
        nodes = order[bounds[t]:bounds[t + 1]]
        rdepth[nodes] = rdepth[tree.parent[nodes]] + 1
    return rdepth


def encode_tree_bits(tree: QuadTree) -> np.ndarray:
    """Euler-tour bit array (uint8 zeros and ones) of ``tree``."""
    N, d = tree.n_nodes, tree.d
    if N == 1:
        return np.zeros(0, dtype=np.uint8)
    rdepth = tree_depths_in_edges(tree)
    node = np.arange(1, N)
    ups = rdepth[node - 1] - rdepth[node] + 1
    long_ = tree.is_long[node]
    length = tree.edge_length[node]
    body = np.where(long_, 0, d)
    body[long_] = gamma_length(length[long_])
    tok = ups + 2 + body
    start = np.zeros(N - 1, dtype=np.int64)
    start[1:] = np.cumsum(tok)[:-1]
    total = int(tok.sum()) + int(rdepth[N - 1])
    bits = np.zeros(total, dtype=np.uint8)

    n_up = int(ups.sum())
    if n_up:
        run = np.repeat(start, ups) + (np.arange(n_up) - np.repeat(np.cumsum(ups) - ups, ups))
        bits[run] = 1
    down = start + ups
    bits[down + 1] = long_
    short_nodes = node[~long_]
    if len(short_nodes):
        pos = (down[~long_] + 2)[:, None] + np.arange(d)
        bits[pos] = tree.label_bits(short_nodes)
    if long_.any():
        lens = length[long_]
        zeros = np.floor(np.log2(lens)).astype(np.int64)
        base = down[long_] + 2 + zeros
        for b in range(int(zeros.max()) + 1):
            sel = b <= zeros
            bits[base[sel] + b] = (lens[sel] >> (zeros[sel] - b)) & 1
    bits[total - int(rdepth[N - 1]):] = 1
    return bits


def decode_tree_bits(bits: bytes, d: int, L: int, root_level: int) -> QuadTree:
    """Rebuild the tree from an Euler-tour bit string (one byte per bit).

    Point assignment is left empty; the caller attaches leaf ids.
    """
    nbits = len(bits)
    parent = [-1]
    depth = [0]
    is_long = [False]
    label_at = [-1]
    stack = [0]
    pos = 0
    find = bits.find
    while pos < nbits:
        zero = find(b"\x00", pos)
        if zero < 0:
            ups = nbits - pos
        else:
            ups = zero - pos
        if ups:
            if ups >= len(stack):
                raise CorruptSketch("upward step past the root")
            del stack[len(stack) - ups:]
        if zero < 0:
            pos = nbits
            break
        pos = zero + 1
        if pos >= nbits:
            raise CorruptSketch("truncated edge record")
        kind = bits[pos]
        pos += 1
        top = stack[-1]
        if kind == 0:
            if pos + d > nbits:
                raise CorruptSketch("truncated short-edge label")
            step = 1
            label_at.append(pos)
            pos += d
        else:
            one = find(b"\x01", pos)
            if one < 0:
                raise CorruptSketch("unterminated gamma code")
            width = one - pos
            if width > 6 or one + width >= nbits:
                raise CorruptSketch("invalid long-edge length")
            step = 0
            for b in bits[one:one + width + 1]:
                step = (step << 1) | b
            label_at.append(-1)
            pos = one + width + 1
        child_depth = depth[top] + step
        if child_depth > L:
            raise CorruptSketch("edge descends below the bottom level")
        parent.append(top)
        depth.append(child_depth)
        is_long.append(kind == 1)
        stack.append(len(parent) - 1)
    if len(stack) != 1:
        raise CorruptSketch("tour does not return to the root")

    parent_a = np.asarray(parent, dtype=np.int64)
    depth_a = np.asarray(depth, dtype=np.int64)
    is_long_a = np.asarray(is_long, dtype=bool)
    label_a = np.asarray(label_at, dtype=np.int64)
    N = len(parent_a)
    nb = (d + 7) // 8
    labels = np.zeros((N, nb), dtype=np.uint8)
    short = np.flatnonzero(label_a >= 0)
    if len(short):
        raw = np.frombuffer(bits, dtype=np.uint8)
        labels[short] = np.packbits(raw[label_a[short][:, None] + np.arange(d)], axis=1)

    has_child = np.zeros(N, dtype=bool)
    has_child[parent_a[1:]] = True
    leaf_nodes = np.flatnonzero(~has_child)
    if np.any(depth_a[leaf_nodes] != L):
        raise CorruptSketch("leaf above the bottom level")
    tree = QuadTree(
        d=d, root_level=root_level, L=L, parent=parent_a, depth=depth_a,
        is_long=is_long_a, labels=labels, leaf_nodes=leaf_nodes,
        point_leaf=np.zeros(0, dtype=np.int64), leaf_codes=np.zeros((0, d), dtype=np.uint64),
    )
    tree.leaf_codes = leaf_codes_from_labels(tree)
    return tree


def leaf_codes_from_labels(tree: QuadTree) -> np.ndarray:
    """Cell coordinates of each leaf from the short-edge labels on its path,
    with zeros in place of the bits skipped by long edges."""
    N, d, L = tree.n_nodes, tree.d, tree.L
    rdepth = tree_depths_in_edges(tree)
    out = np.zeros((tree.n_leaves, d), dtype=np.uint64)
    if N == 1:
        return out
    leaf_ord = np.full(N, -1, dtype=np.int64)
    leaf_ord[tree.leaf_nodes] = np.arange(tree.n_leaves)
    order = np.argsort(rdepth, kind="stable")
    bounds = np.searchsorted(rdepth[order], np.arange(rdepth.max() + 2))
    prev_nodes = np.array([0])
    prev_codes = np.zeros((1, d), dtype=np.uint64)
    for r in range(1, int(rdepth.max()) + 1):
        nodes = order[bounds[r]:bounds[r + 1]]
        slot = np.searchsorted(prev_nodes, tree.parent[nodes])
        shift = (L - tree.depth[nodes]).astype(np.uint64)
        bits = tree.label_bits(nodes).astype(np.uint64) << shift[:, None]
        codes = prev_codes[slot] | bits
        is_leaf = leaf_ord[nodes] >= 0
        out[leaf_ord[nodes[is_leaf]]] = codes[is_leaf]
        sort = np.argsort(nodes)
        prev_nodes, prev_codes = nodes[sort], codes[sort]
    return out


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, nbits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=nbits, bitorder="little")


def encode(tree: QuadTree, cube: ShiftedHypercube, *, lam: int, seed: int, m: int = 1,
           flags: int = 0) -> bytes:
    """Serialize ``tree`` with the frame of ``cube``."""
    n, d = tree.n_points, tree.d
    header = _HEAD.pack(MAGIC, VERSION, flags, n, d, m, tree.L, lam,
                        tree.root_level, seed)
    origin = np.asarray(cube.origin, dtype="<f8").tobytes()
    tbits = encode_tree_bits(tree)
    width = leaf_id_width(tree.n_leaves)
    if width:
        ids = tree.point_leaf.astype(np.uint64)
        id_bits = ((ids[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
        leaf_bytes = pack_bits(id_bits.reshape(-1))
    else:
        leaf_bytes = b""
    return b"".join([
        header, origin, _U64.pack(tree.n_leaves), _U64.pack(len(tbits)),
        pack_bits(tbits), leaf_bytes,
    ])


def _need(buf: memoryview, pos: int, size: int, what: str):
    if size < 0 or pos + size > len(buf):
        raise CorruptSketch(f"truncated {what}", offset=pos)


def decode_with_header(data, offset: int = 0):
    """Parse one sketch record starting at ``offset``.

    Returns ``(tree, header, end_offset)``.
    """
    buf = memoryview(bytes(data))
    pos = offset
    _need(buf, pos, _HEAD.size, "header")
    magic, version, flags, n, d, m, L, lam, root_level, seed = _HEAD.unpack_from(buf, pos)
    if magic != MAGIC:
        raise CorruptSketch(f"bad magic {bytes(magic)!r}", offset=pos)
    if version != VERSION:
        raise VersionMismatch(f"unsupported sketch version {version}", offset=pos + 4)
    if d < 1 or n < 1:
        raise CorruptSketch("empty point set in header", offset=pos + 8)
    if L > MAX_LEVELS:
        raise CorruptSketch(f"L={L} exceeds {MAX_LEVELS}", offset=pos + 28)
    if root_level > 1023 or root_level - L < -1074:
        # cell sides must stay representable as float64
        raise CorruptSketch(f"root level {root_level} out of range", offset=pos + 32)
    pos += _HEAD.size
    _need(buf, pos, 8 * d, "origin")
    origin = np.frombuffer(buf, dtype="<f8", count=d, offset=pos).astype(np.float64)
    if not np.all(np.isfinite(origin)):
        raise CorruptSketch("non-finite origin", offset=pos)
    pos += 8 * d
    _need(buf, pos, 16, "leaf count")
    leaf_count, = _U64.unpack_from(buf, pos)
    nbits, = _U64.unpack_from(buf, pos + 8)
    pos += 16
    if leaf_count < 1 or leaf_count > n:
        raise CorruptSketch(f"leaf count {leaf_count} inconsistent with n={n}", offset=pos - 16)
    tbytes = (nbits + 7) // 8
    _need(buf, pos, tbytes, "tree bits")
    # every short step costs d + 2 bits, so the stream bounds the node count
    tree_bits = unpack_bits(buf[pos:pos + tbytes], nbits).tobytes()
    tree_start = pos
    pos += tbytes
    width = leaf_id_width(leaf_count)
    if width == 0 and n > MAX_SINGLE_LEAF_POINTS:
        raise CorruptSketch(f"n={n} too large for a single-leaf sketch", offset=offset + 8)
    lbytes = (n * width + 7) // 8
    _need(buf, pos, lbytes, "leaf ids")
    try:
        tree = decode_tree_bits(tree_bits, d, L, root_level)
    except CorruptSketch as exc:
        raise CorruptSketch(str(exc), offset=tree_start) from None
    if tree.n_leaves != leaf_count:
        raise CorruptSketch(f"tree has {tree.n_leaves} leaves, header says {leaf_count}",
                            offset=tree_start)
    if width:
        raw = unpack_bits(buf[pos:pos + lbytes], n * width).reshape(n, width).astype(np.int64)
        ids = (raw << np.arange(width)).sum(axis=1)
        if np.any(ids >= leaf_count):
            raise CorruptSketch("leaf id out of range", offset=pos)
    else:
        ids = np.zeros(n, dtype=np.int64)
    pos += lbytes
    tree.point_leaf = ids
    tree.lam = lam
    header = SketchHeader(n=n, d=d, m=m, L=L, lam=lam, root_level=root_level, seed=seed,
                          origin=origin, leaf_count=leaf_count, flags=flags, version=version)
    return tree, header, pos


def cube_from_header(header: SketchHeader) -> ShiftedHypercube:
    side = 2.0 ** header.root_level
    return ShiftedHypercube(origin=header.origin, side=side, root_level=header.root_level,
                            shift=np.full(header.d, np.nan))


def decode(data) -> tuple[QuadTree, ShiftedHypercube, SketchHeader]:
    """Inverse of :func:`encode`. The shift itself is not stored, so the
    returned cube carries NaN in ``shift``."""
    tree, header, end = decode_with_header(data)
    if end != len(data):
        raise CorruptSketch("trailing bytes after sketch", offset=end)
    return tree, cube_from_header(header), header


def decompress_point(tree: QuadTree, leaf: int, cube: ShiftedHypercube) -> np.ndarray:
    """c(v) of leaf ordinal ``leaf`` in absolute coordinates."""
    if not 0 <= leaf < tree.n_leaves:
        raise LeafOutOfRange(f"leaf {leaf} outside [0, {tree.n_leaves})")
    code = tree.leaf_codes[leaf].astype(np.float64)
    return np.asarray(cube.origin, dtype=np.float64) + np.ldexp(code, tree.bottom_level)


def size_breakdown(tree: QuadTree) -> SizeBreakdown:
    d = tree.d
    header_bits = 8 * (_HEAD.size + 8 * d + 16)
    tbits = len(encode_tree_bits(tree))
    lbits = tree.n_points * leaf_id_width(tree.n_leaves)
    padding = (-tbits) % 8 + (-lbits) % 8
    return SizeBreakdown(header_bits=header_bits, tree_bits=tbits, leaf_id_bits=lbits,
                         padding_bits=padding)
