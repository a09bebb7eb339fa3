"""
Block count sweep on SIFT
=========================

Accuracy and size of QuadSketch with L=6, lam=5 as the number of blocks
runs over the divisors of 128. Needs sift_base.fvecs and sift_query.fvecs
(the standard SIFT1M files) in the directory given as the first argument.

    python3 05_sift_blocks.py /data/sift            # 100,000-point subset
    python3 05_sift_blocks.py /data/sift --full     # all 1,000,000 points

The full run takes a long time and several GB of memory.
"""

import os
import sys

from quadsketch.data import read_fvecs
from quadsketch.evaluation import evaluate, true_nn

if len(sys.argv) < 2:
    sys.exit(__doc__)
root = sys.argv[1]
base = read_fvecs(os.path.join(root, "sift_base.fvecs"))
if "--full" not in sys.argv:
    base = base[:100_000]
queries = read_fvecs(os.path.join(root, "sift_query.fvecs"))
truth = true_nn(queries, base)

print("blocks  bits/coord  accuracy  distortion")
for m in (1, 2, 4, 8, 16, 32, 64, 128):
    rec = evaluate("qs", base, queries, {"m": m, "L": 6, "lam": 5}, truth=truth)
    print(f"{m:6d}  {rec.bits_per_coordinate:10.3f}  {rec.accuracy:8.3f}  {rec.avg_distortion:10.4f}",
          flush=True)
