"""QuadSketch: quadtree sketches that preserve distances between points.

The main entry points are :func:`compress` / :func:`decompress` for a single
tree, :func:`compress_blocks` for independent coordinate blocks and
:func:`compress_maxdist` for the all-pairs distance oracle. Grid and product
quantization baselines live in :mod:`quadsketch.baselines`, and the
accuracy and size measurements in :mod:`quadsketch.evaluation`.
"""

from .core import (
    ShiftedHypercube,
    SketchParams,
    aspect_ratio,
    derive_params,
    enclosing_cube,
    rho,
)
from .errors import QuadSketchError
from .quadtree import QuadTree, build, prune
from .sketch import (
    BlockSketch,
    MultiTreeSketch,
    Sketch,
    all_distances,
    compress,
    compress_blocks,
    compress_maxdist,
    decompress,
    decompress_blocks,
    distance_query,
    load_block_sketch,
    load_sketch,
    sketch_blocks,
    sketch_points,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSketch", "MultiTreeSketch", "QuadSketchError", "QuadTree", "ShiftedHypercube",
    "Sketch", "SketchParams", "all_distances", "aspect_ratio", "build", "compress",
    "compress_blocks", "compress_maxdist", "decompress", "decompress_blocks",
    "derive_params", "distance_query", "enclosing_cube", "load_block_sketch",
    "load_sketch", "prune", "rho", "sketch_blocks", "sketch_points",
]
