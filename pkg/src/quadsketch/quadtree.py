"""Quadtree over nested shifted grids, its pruning, and padding tests.

Trees are stored as flat arrays in DFS preorder rather than as node objects:
for d = 128 a node can have up to 2**128 children, and a sketch over 10**5
points has millions of nodes, so everything below works level by level on
whole arrays.

Depths count edges of the unpruned tree from the root, so a node at depth
``t`` sits on grid level ``root_level - t``. A leaf's cell coordinates are
held as one uint64 per dimension whose bit ``L - t`` is the label bit chosen
at depth ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ShiftedHypercube, as_points, rho

_ONE = np.uint64(1)


@dataclass
class QuadTree:
    """Edge-labelled quadtree in DFS preorder.

    parent:      parent node index, -1 for the root (node 0)
    depth:       depth below the root, in grid levels
    is_long:     True where the edge from the parent is a long edge
    labels:      packed d-bit short-edge labels, one row per node (zeros
                 for the root and long edges); bit j set means the child
                 is the upper half along coordinate j
    leaf_nodes:  node index of every leaf, by leaf ordinal (DFS order)
    point_leaf:  leaf ordinal of every input point
    leaf_codes:  (leaves, d) uint64 cell coordinates reconstructed from the
                 short-edge labels on each root-to-leaf path
    lam:         pruning parameter, None for an unpruned tree
    """

    d: int
    root_level: int
    L: int
    parent: np.ndarray
    depth: np.ndarray
    is_long: np.ndarray
    labels: np.ndarray
    leaf_nodes: np.ndarray
    point_leaf: np.ndarray
    leaf_codes: np.ndarray
    lam: Optional[int] = None

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_nodes)

    @property
    def n_points(self) -> int:
        return len(self.point_leaf)

    @property
    def bottom_level(self) -> int:
        return self.root_level - self.L

    @property
    def level(self) -> np.ndarray:
        return self.root_level - self.depth

    @property
    def edge_length(self) -> np.ndarray:
        out = np.zeros(self.n_nodes, dtype=np.int64)
        out[1:] = self.depth[1:] - self.depth[self.parent[1:]]
        return out

    @property
    def n_long_edges(self) -> int:
        return int(self.is_long.sum())

    def degree(self) -> np.ndarray:
        return np.bincount(self.parent[1:], minlength=self.n_nodes)

    def label_bits(self, nodes=None) -> np.ndarray:
        rows = self.labels if nodes is None else self.labels[nodes]
        return np.unpackbits(rows, axis=1, count=self.d).astype(bool)

    def children(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.parent == node)

    def leaf_corners(self, origin) -> np.ndarray:
        """c(v) of every leaf in absolute coordinates."""
        origin = np.asarray(origin, dtype=np.float64)
        scaled = np.ldexp(self.leaf_codes.astype(np.float64), self.bottom_level)
        return origin + scaled

    def decompress_points(self, origin) -> np.ndarray:
        return self.leaf_corners(origin)[self.point_leaf]


def cell_codes(points, cube: ShiftedHypercube, L: int) -> np.ndarray:
    """Integer coordinates of each point's cell in the bottom grid.

    Cells are half-open ``[low, high)``; a point on the far face of the cube
    is clamped into the last cell.
    """
    pts = as_points(points)
    bottom = cube.root_level - L
    scaled = np.floor(np.ldexp(pts - cube.origin, -bottom))
    np.clip(scaled, 0.0, float(2 ** L - 1), out=scaled)
    return scaled.astype(np.uint64)


def _depth_groups(depth: np.ndarray, max_depth: int):
    order = np.argsort(depth, kind="stable")
    bounds = np.searchsorted(depth[order], np.arange(max_depth + 2))
    return [order[bounds[t]:bounds[t + 1]] for t in range(max_depth + 1)]


def build(points, cube: ShiftedHypercube, L: int) -> QuadTree:
    """Bucket the points down ``L`` levels below the cube.

    Only cells holding at least one point become nodes. Children are ordered
    by their label read as a bit string from coordinate 0 to d - 1, so leaf
    ordinals follow the lexicographic order of the root-to-leaf label paths.
    """
    pts = as_points(points)
    n, d = pts.shape
    if L < 0:
        raise ValueError(f"L must be non-negative, got {L}")
    codes = cell_codes(pts, cube, L)
    nb = (d + 7) // 8

    if L == 0:
        return QuadTree(
            d=d, root_level=cube.root_level, L=0,
            parent=np.array([-1], dtype=np.int64), depth=np.zeros(1, dtype=np.int64),
            is_long=np.zeros(1, dtype=bool), labels=np.zeros((1, nb), dtype=np.uint8),
            leaf_nodes=np.zeros(1, dtype=np.int64), point_leaf=np.zeros(n, dtype=np.int64),
            leaf_codes=np.zeros((1, d), dtype=np.uint64),
        )

    # key[i] = packed labels of point i, depth-major: sorting keys sorts leaves in DFS order
    keys = np.empty((n, L, nb), dtype=np.uint8)
    for t in range(1, L + 1):
        bits = ((codes >> np.uint64(L - t)) & _ONE).astype(np.uint8)
        keys[:, t - 1] = np.packbits(bits, axis=1)
    uniq, first, point_leaf = np.unique(keys.reshape(n, L * nb), axis=0,
                                        return_index=True, return_inverse=True)
    point_leaf = point_leaf.reshape(-1).astype(np.int64)
    uniq = uniq.reshape(-1, L, nb)
    U = len(uniq)

    # lcp[k]: number of leading depths on which leaf k agrees with leaf k - 1
    lcp = np.zeros(U, dtype=np.int64)
    if U > 1:
        same = np.all(uniq[1:] == uniq[:-1], axis=2)
        lcp[1:] = np.argmin(same, axis=1)

    # leaf k introduces the nodes at depths lcp[k] + 1 .. L, in preorder
    count = L - lcp
    start = np.ones(U, dtype=np.int64)
    start[1:] += np.cumsum(count)[:-1]
    N = 1 + int(count.sum())
    owner = np.repeat(np.arange(U), count)
    depth = np.zeros(N, dtype=np.int64)
    depth[1:] = np.arange(N - 1) - np.repeat(start - 1, count) + np.repeat(lcp + 1, count)

    parent = np.arange(-1, N - 1, dtype=np.int64)
    parent[start[lcp == 0]] = 0
    head_leaf = np.flatnonzero(lcp > 0)
    for p in np.unique(lcp[head_leaf]):
        ks = head_leaf[lcp[head_leaf] == p]
        earlier = np.flatnonzero(lcp < p)
        k0 = earlier[np.searchsorted(earlier, ks) - 1]
        parent[start[ks]] = start[k0] + (p - lcp[k0] - 1)

    labels = np.zeros((N, nb), dtype=np.uint8)
    labels[1:] = uniq[owner, depth[1:] - 1]
    leaf_nodes = start + count - 1

    return QuadTree(
        d=d, root_level=cube.root_level, L=L,
        parent=parent, depth=depth, is_long=np.zeros(N, dtype=bool), labels=labels,
        leaf_nodes=leaf_nodes, point_leaf=point_leaf, leaf_codes=codes[first],
    )


def prune(tree: QuadTree, lam: int) -> QuadTree:
    """Collapse every non-branching chain longer than ``lam`` into a long edge.

    For a downward path u_0, ..., u_k whose interior nodes all have one child
    and k > lam + 1, the nodes u_{lam+1} .. u_{k-1} are dropped and u_k hangs
    off u_lam by a long edge of length k - lam. The root always acts as a path
    endpoint. Leaf ordinals and the point-to-leaf map are unchanged.
    """
    if lam < 1:
        raise ValueError(f"lam must be >= 1, got {lam}")
    if tree.lam is not None or tree.is_long.any():
        raise ValueError("prune expects an unpruned tree")
    N, L = tree.n_nodes, tree.L
    parent, depth = tree.parent, tree.depth
    deg = tree.degree()

    # chain_top: depth of the nearest proper ancestor that is the root or has degree != 1
    chain_top = np.zeros(N, dtype=np.int64)
    keep_root = np.zeros(N, dtype=bool)
    keep_root[0] = True
    groups = _depth_groups(depth, L)
    for t in range(1, L + 1):
        nodes = groups[t]
        p = parent[nodes]
        anchor = keep_root[p] | (deg[p] != 1)
        chain_top[nodes] = np.where(anchor, depth[p], chain_top[p])
    removed = (deg == 1) & (depth - chain_top >= lam + 1)
    removed[0] = False
    kept = ~removed

    # last kept ancestor-or-self, and the mask of depths whose label bit survives
    last_kept = np.arange(N, dtype=np.int64)
    bitmask = np.zeros(N, dtype=np.uint64)
    for t in range(1, L + 1):
        nodes = groups[t]
        p = parent[nodes]
        last_kept[nodes] = np.where(kept[nodes], nodes, last_kept[p])
        survive = kept[nodes] & kept[p]
        bitmask[nodes] = bitmask[p] | np.where(survive, _ONE << np.uint64(L - t), np.uint64(0))

    idx = np.flatnonzero(kept)
    new_index = np.cumsum(kept) - 1
    new_parent = np.full(len(idx), -1, dtype=np.int64)
    new_parent[1:] = new_index[last_kept[parent[idx[1:]]]]
    is_long = np.zeros(len(idx), dtype=bool)
    is_long[1:] = removed[parent[idx[1:]]]
    labels = tree.labels[idx].copy()
    labels[is_long] = 0
    leaf_codes = tree.leaf_codes & bitmask[tree.leaf_nodes][:, None]

    return QuadTree(
        d=tree.d, root_level=tree.root_level, L=L,
        parent=new_parent, depth=depth[idx].copy(), is_long=is_long, labels=labels,
        leaf_nodes=new_index[tree.leaf_nodes], point_leaf=tree.point_leaf.copy(),
        leaf_codes=leaf_codes, lam=int(lam),
    )


def boundary_margin(points, cube: ShiftedHypercube, level: int) -> np.ndarray:
    """Per-point distance, in units of the cell side, to the nearest face of
    the level-``level`` cell containing it (minimum over coordinates)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    u = np.ldexp(pts - cube.origin, -level)
    frac = u - np.floor(u)
    return np.minimum(frac, 1.0 - frac).min(axis=1)


def is_padded(i: int, points, cube: ShiftedHypercube, levels, eps: float, lam: int) -> bool:
    """Whether point ``i`` keeps a margin of rho(level) inside its cell on
    every listed level. The test uses the axis-aligned box of that radius,
    which contains the Euclidean ball."""
    pts = as_points(points)
    x = pts[i:i + 1]
    d = pts.shape[1]
    for level in levels:
        margin = boundary_margin(x, cube, int(level))[0] * 2.0 ** int(level)
        if margin < rho(int(level), d, eps, lam):
            return False
    return True


def branching_depths(tree: QuadTree) -> np.ndarray:
    """(leaves, L) boolean matrix: entry [k, t] is True when the ancestor of
    leaf k at depth t has two or more children."""
    deg = tree.degree()
    out = np.zeros((tree.n_leaves, max(tree.L, 1)), dtype=bool)
    cur = tree.leaf_nodes.copy()
    active = cur != 0
    while active.any():
        nodes = cur[active]
        p = tree.parent[nodes]
        hit = deg[p] >= 2
        rows = np.flatnonzero(active)[hit]
        out[rows, tree.depth[p[hit]]] = True
        cur[active] = p
        active = cur != 0
    return out


def padded_points(points, cube: ShiftedHypercube, tree: QuadTree, eps: float, lam: int) -> np.ndarray:
    """Padding of every point on the levels that separate it from others.

    Point i is checked on level ``l(w) - 1`` for each branching ancestor w of
    its leaf: these are the only levels at which another point can leave its
    cell, and the separation argument behind the distance guarantee needs
    the padding exactly there.
    """
    pts = as_points(points)
    d = pts.shape[1]
    need = branching_depths(tree)[tree.point_leaf]
    ok = np.ones(len(pts), dtype=bool)
    threshold = rho(0, d, eps, lam)  # rho(level) / 2**level is level independent
    for t in np.flatnonzero(need.any(axis=0)):
        level = tree.root_level - int(t) - 1
        rows = need[:, t]
        ok[rows] &= boundary_margin(pts[rows], cube, level) >= threshold
    return ok
