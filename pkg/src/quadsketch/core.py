"""Point-set validation, parameter formulas and the randomly shifted cube.

All randomness is drawn from numpy's PCG64 bit generator. Child seeds for
blocks and retries are derived with ``SeedSequence`` spawn keys, so every
sketch is reproducible from a single 64-bit seed on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .errors import (
    DegeneratePointSet,
    DuplicatePoints,
    InvalidParams,
    TooFewPoints,
)

SEED_MASK = (1 << 64) - 1

# Longest supported pre-pruning depth; cell coordinates are held in uint64.
MAX_LEVELS = 62


def as_points(x, *, name: str = "points") -> np.ndarray:
    """Validate and return an (n, d) float64 array with finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidParams(f"{name} must be 2-d, got shape {arr.shape}")
    n, d = arr.shape
    if n < 1 or d < 1:
        raise InvalidParams(f"{name} must have n >= 1 and d >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParams(f"{name} contains NaN or infinite coordinates")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


def split_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit child seed from ``seed``."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ShiftedHypercube:
    """Axis-parallel cube H that encloses the point set.

    ``side`` is ``4 * delta`` and always a power of two, ``2 ** root_level``.
    ``shift`` is the random offset that was applied to the centred cube.
    """

    origin: np.ndarray
    side: float
    root_level: int
    shift: np.ndarray

    @property
    def delta(self) -> float:
        return self.side / 4.0

    @property
    def d(self) -> int:
        return len(self.origin)

    def contains(self, points) -> bool:
        pts = np.asarray(points, dtype=np.float64)
        return bool(np.all(pts >= self.origin) and np.all(pts <= self.origin + self.side))


@dataclass(frozen=True)
class SketchParams:
    """Configuration of a QuadSketch run.

    ``L`` is the depth of the quadtree before pruning and ``lam`` the longest
    non-branching chain kept by pruning. ``m`` is the number of coordinate
    blocks for the block variant.
    """

    L: int
    lam: int
    m: int = 1
    seed: int = 0
    eps: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or not 1 <= self.L <= MAX_LEVELS:
            raise InvalidParams(f"L must be an integer in [1, {MAX_LEVELS}], got {self.L!r}")
        if not isinstance(self.lam, (int, np.integer)) or not 1 <= self.lam <= 0xFFFF:
            raise InvalidParams(f"lam must be a positive integer, got {self.lam!r}")
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise InvalidParams(f"m must be a positive integer, got {self.m!r}")
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "lam", int(self.lam))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "seed", int(self.seed) & SEED_MASK)

    def replace(self, **changes) -> "SketchParams":
        fields = dict(L=self.L, lam=self.lam, m=self.m, seed=self.seed,
                      eps=self.eps, delta=self.delta)
        fields.update(changes)
        return SketchParams(**fields)


def aspect_ratio(points, *, exact_cap: int = 4000, n_pairs: int = 200_000,
                 seed: int = 0) -> float:
    """Ratio of the largest to the smallest pairwise Euclidean distance.

    Exact for ``n <= exact_cap``. Larger sets are estimated from ``n_pairs``
    random pairs; the sampled maximum can only undershoot and the sampled
    minimum only overshoot, so the estimate is a lower bound on the truth.
    """
    pts = as_points(points)
    n = len(pts)
    if n < 2:
        raise TooFewPoints(f"aspect ratio needs at least 2 points, got {n}")
    if len(np.unique(pts, axis=0)) < n:
        raise DuplicatePoints("point set contains identical points")
    if n <= exact_cap:
        dist = pdist(pts)
    else:
        rng = make_rng(seed)
        i = rng.integers(0, n, size=n_pairs)
        j = rng.integers(0, n - 1, size=n_pairs)
        j = j + (j >= i)
        dist = np.linalg.norm(pts[i] - pts[j], axis=1)
    lo = dist.min()
    if lo == 0.0:
        raise DuplicatePoints("point set contains identical points")
    return float(dist.max() / lo)


def _ceil_log2(x: float) -> int:
    return math.ceil(math.log2(x))


def derive_params(eps: float, delta: float, d: int, phi: float, *,
                  m: int = 1, seed: int = 0) -> SketchParams:
    """Pruning depth and level count that give the (1 +/- eps) guarantee.

    ``lam = ceil(log2(16 d^1.5 log2(phi) / (eps delta)))`` and
    ``L = ceil(log2(phi)) + lam``.
    """
    if not 0.0 < eps <= 1.0:
        raise InvalidParams(f"eps must lie in (0, 1], got {eps}")
    if not 0.0 < delta <= 1.0:
        raise InvalidParams(f"delta must lie in (0, 1], got {delta}")
    if not phi > 1.0 or not math.isfinite(phi):
        raise InvalidParams(f"aspect ratio must be finite and > 1, got {phi}")
    if d < 1:
        raise InvalidParams(f"d must be positive, got {d}")
    log_phi = math.log2(phi)
    lam = max(1, _ceil_log2(16.0 * d ** 1.5 * log_phi / (eps * delta)))
    L = max(1, _ceil_log2(phi)) + lam
    return SketchParams(L=L, lam=lam, m=m, seed=seed, eps=eps, delta=delta)


def power_of_two_ceil(x: float) -> float:
    """Smallest power of two that is >= x (x > 0)."""
    mant, exp = math.frexp(x)
    return math.ldexp(1.0, exp - 1) if mant == 0.5 else math.ldexp(1.0, exp)


def cube_from_delta(center, delta: float, seed: int) -> ShiftedHypercube:
    """Cube of side ``4 * delta`` centred at ``center`` then randomly shifted."""
    center = np.asarray(center, dtype=np.float64)
    rng = make_rng(seed)
    shift = rng.uniform(-delta, delta, size=len(center))
    origin = center - 2.0 * delta + shift
    side = 4.0 * delta
    root_level = math.frexp(side)[1] - 1
    return ShiftedHypercube(origin=origin, side=side, root_level=root_level, shift=shift)


def enclosing_cube(points, seed: int) -> ShiftedHypercube:
    """Randomly shifted power-of-two cube containing every point.

    The radius is measured from the first point, rounded up to a power of
    two ``delta``; the cube has side ``4 * delta`` and is shifted by a
    uniform draw from ``[-delta, delta]`` in each coordinate.
    """
    pts = as_points(points)
    radius = float(np.sqrt(((pts - pts[0]) ** 2).sum(axis=1)).max())
    if radius == 0.0:
        raise DegeneratePointSet("all points coincide; the enclosing cube is undefined")
    cube = cube_from_delta(pts[0], power_of_two_ceil(radius), seed)
    assert cube.contains(pts), "shifted cube does not contain the point set"
    return cube


def rho(level: int, d: int, eps: float, lam: int) -> float:
    """Padding radius required at grid level ``level``."""
    return 8.0 / eps * math.ldexp(1.0, level - lam) * math.sqrt(d)
