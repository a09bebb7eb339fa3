"""
QuadSketch, Grid and PQ on the Diagonal data set
================================================

Points (x, x, ..., x) on a line in 128 dimensions. The quadtree only spends
bits where points separate, the grid pays for every coordinate, and PQ
blocks each see the same one-dimensional structure.

Takes a few minutes. Writes diagonal_envelopes.csv next to the script.
"""

import os

from quadsketch.data import gen_diagonal, sample_queries
from quadsketch.evaluation import evaluate, pareto_envelope, true_nn, write_csv

points = gen_diagonal(seed=0)
queries, base = sample_queries(points, 500, seed=0)
truth = true_nn(queries, base)

qs_recs = [evaluate("qs", base, queries, {"m": m, "L": L, "lam": lam}, truth=truth)
           for m in (1, 4, 8) for L in range(8, 19, 2) for lam in (1, 2, 4, 8) if lam < L]
grid_recs = [evaluate("grid", base, queries, {"k": 2 ** e}, truth=truth) for e in range(2, 16, 2)]
pq_recs = [evaluate("pq", base, queries, {"m": m, "k": k}, truth=truth)
           for m, k in ((1, 256), (16, 256), (128, 4), (128, 16), (128, 64))]

for name, recs in (("QuadSketch", qs_recs), ("Grid", grid_recs), ("PQ", pq_recs)):
    print(name)
    for r in pareto_envelope(recs):
        print(f"  {r.bits_per_coordinate:7.3f} bits/coord  accuracy {r.accuracy:.3f}  "
              f"distortion {r.avg_distortion:.4f}  {r.params}")

out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "diagonal_envelopes.csv")
write_csv(pareto_envelope(qs_recs) + pareto_envelope(grid_recs) + pareto_envelope(pq_recs), out)
print("wrote", out)
