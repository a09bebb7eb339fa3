"""
Keeping every pairwise distance
===============================

A single tree keeps most points' distances. The multi-tree sketch goes on
building trees over the points that were not padded until every point is,
and answers any pair from the first tree that padded one of them.
"""

import numpy as np
from scipy.spatial.distance import pdist, squareform

import quadsketch as qs

rng = np.random.default_rng(1)
points = rng.uniform(size=(300, 8))
eps = 0.2

msk = qs.compress_maxdist(points, eps, seed=0)
print(f"{msk.k} trees, L={msk.params.L}, lam={msk.params.lam}")
print("points first padded in each tree:", np.bincount(msk.gamma)[1:].tolist())

est = qs.all_distances(msk)
true = squareform(pdist(points))
off = ~np.eye(len(points), dtype=bool)
ratio = est[off] / true[off]
print(f"all {off.sum() // 2} pairs: ratio in [{ratio.min():.4f}, {ratio.max():.4f}] "
      f"(allowed [{1 - eps}, {1 + eps}])")
print(f"distance 3-17: true {true[3, 17]:.5f}, sketch {qs.distance_query(msk, 3, 17):.5f}")

blob = msk.to_bytes()
print(f"serialized: {8 * len(blob) / points.size:.2f} bits per coordinate including headers")
