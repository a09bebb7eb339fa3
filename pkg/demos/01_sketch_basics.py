"""
Compressing a point set with a single quadtree
===============================================

Build a sketch, look at its size, and check how well distances survive.
"""

import numpy as np
from scipy.spatial.distance import pdist

import quadsketch as qs

rng = np.random.default_rng(0)
points = rng.normal(size=(2000, 16))

# Parameters can be given directly ...
params = qs.SketchParams(L=14, lam=4, seed=1)
sketch = qs.sketch_points(points, params)
size = sketch.size()
print(f"nodes {sketch.tree.n_nodes}, leaves {sketch.tree.n_leaves}, "
      f"long edges {sketch.tree.n_long_edges}")
print(f"payload {size.payload_bits / points.size:.3f} bits per coordinate "
      f"(tree {size.tree_bits} bits, leaf ids {size.leaf_id_bits} bits)")

# ... and the serialized form decodes to the same approximate points.
blob = sketch.to_bytes()
approx = qs.decompress(blob)
assert np.array_equal(approx, sketch.decompress())

ratio = pdist(approx) / pdist(points)
print(f"pairwise distance ratio: min {ratio.min():.3f}, max {ratio.max():.3f}")

# Or derived from a distortion target eps and failure probability delta.
phi = qs.aspect_ratio(points)
derived = qs.derive_params(0.2, 0.1, points.shape[1], phi, seed=1)
print(f"aspect ratio {phi:.1f} -> L={derived.L}, lam={derived.lam}")
ratio = pdist(qs.decompress(qs.compress(points, derived))) / pdist(points)
print(f"with derived parameters: ratio in [{ratio.min():.4f}, {ratio.max():.4f}]")

# Raising lam keeps more of every non-branching path, so errors only shrink.
print("lam  bits/coord  mean error")
for lam in (1, 2, 4, 8, 13):
    sk = qs.sketch_points(points, params.replace(lam=lam))
    err = np.linalg.norm(sk.decompress() - points, axis=1).mean()
    print(f"{lam:3d}  {sk.size().payload_bits / points.size:10.3f}  {err:.4f}")
