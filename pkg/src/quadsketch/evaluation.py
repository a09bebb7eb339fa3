"""Nearest-neighbour accuracy, distortion and size measurements.

Every method compresses the base points and the queries together, the query
nearest neighbours are searched among the decompressed base points, and the
distortion is measured with the original coordinates.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import baselines
from .core import SketchParams, as_points
from .sketch import sketch_blocks

SCHEMA_VERSION = 1
METHODS = ("qs", "pq", "grid", "identity")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class EvalRecord:
    method: str
    params: dict
    bits_per_coordinate: float
    accuracy: float
    avg_distortion: float
    seed: int = 0
    wall_time: float = 0.0
    # PQ only: size when the codebook itself is charged to the sketch
    bits_with_codebook: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def key(self) -> str:
        return json.dumps([self.method, self.params, self.seed], sort_keys=True)

    def to_row(self) -> dict:
        row = {"schema": SCHEMA_VERSION, "method": self.method}
        for name in ("m", "L", "lam", "k"):
            row[name] = self.params.get(name, "")
        row.update(bits=self.bits_per_coordinate, accuracy=self.accuracy,
                   distortion=self.avg_distortion, seed=self.seed, time=self.wall_time,
                   bits_with_codebook="" if self.bits_with_codebook is None else self.bits_with_codebook)
        return row


CSV_FIELDS = ["schema", "method", "m", "L", "lam", "k", "bits", "accuracy", "distortion",
              "seed", "time", "bits_with_codebook"]


def nearest(queries, base, chunk: int = 256) -> np.ndarray:
    """Index of each query's nearest base point; ties go to the lowest index.

    Candidates come from the fast dot-product expansion and the winner is
    then picked on directly computed squared distances.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    b = np.atleast_2d(np.asarray(base, dtype=np.float64))
    if len(b) == 0:
        raise ValueError("nearest neighbour search over an empty base set")
    # identical base rows collapse to their lowest index
    b, first_index = np.unique(b, axis=0, return_index=True)
    bn = (b * b).sum(axis=1)
    out = np.empty(len(q), dtype=np.int64)
    scale = bn.max()
    pair_batch = max(1, (1 << 22) // b.shape[1])
    for s in range(0, len(q), chunk):
        qc = q[s:s + chunk]
        qn = (qc * qc).sum(axis=1)
        approx = qn[:, None] - 2.0 * qc @ b.T + bn[None, :]
        best = approx.min(axis=1)
        tol = 1e-10 * (qn + scale) + 1e-300
        rows, cols = np.nonzero(approx <= (best + tol)[:, None])
        exact = np.concatenate([
            ((qc[rows[p:p + pair_batch]] - b[cols[p:p + pair_batch]]) ** 2).sum(axis=1)
            for p in range(0, len(rows), pair_batch)])
        cols = first_index[cols]
        order = np.lexsort((cols, exact, rows))
        rows, cols = rows[order], cols[order]
        first = np.ones(len(rows), dtype=bool)
        first[1:] = rows[1:] != rows[:-1]
        out[s + rows[first]] = cols[first]
    return out


def true_nn(queries, base) -> np.ndarray:
    """Exact Euclidean nearest neighbours in the original coordinates."""
    return nearest(queries, base)


def _distortion(queries, base, reported, truth) -> np.ndarray:
    d_rep = np.linalg.norm(queries - base[reported], axis=1)
    d_true = np.linalg.norm(queries - base[truth], axis=1)
    ratio = np.ones(len(queries))
    differ = reported != truth
    with np.errstate(divide="ignore", invalid="ignore"):
        r = d_rep[differ] / d_true[differ]
    # a query sitting on a base point: any other point at distance zero is as good
    r = np.where((d_true[differ] == 0) & (d_rep[differ] == 0), 1.0, r)
    ratio[differ] = r
    return ratio


def compress_joint(method: str, points: np.ndarray, params: dict, seed: int):
    """Compress and decompress ``points``; returns (approx, payload_bits,
    bits_with_codebook or None)."""
    n, d = points.shape
    if method == "qs":
        sp = SketchParams(L=params["L"], lam=params["lam"], m=params.get("m", 1), seed=seed)
        bs = sketch_blocks(points, sp)
        return bs.decompress(), bs.payload_bits(), None
    if method == "pq":
        cb = baselines.pq_fit(points, params.get("m", 1), params["k"], seed=seed,
                              max_iters=params.get("max_iters", baselines.DEFAULT_MAX_ITERS))
        return baselines.pq_decode(cb), cb.code_bits(), cb.code_bits() + cb.codebook_bits()
    if method == "grid":
        q, approx = baselines.grid_fit_quantize(points, params["k"])
        return approx, n * d * math.ceil(math.log2(q.k)), None
    if method == "identity":
        return points.copy(), n * d * 64, None
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def evaluate(method: str, base, queries, params: dict, seed: int = 0,
             truth: Optional[np.ndarray] = None) -> EvalRecord:
    """Accuracy, average distortion and bits per coordinate of one setting."""
    base = as_points(base, name="base")
    queries = as_points(queries, name="queries")
    if truth is None:
        truth = true_nn(queries, base)
    t0 = time.perf_counter()
    joint = np.vstack([base, queries])
    approx, bits, bits_cb = compress_joint(method, joint, params, seed)
    wall = time.perf_counter() - t0
    nb = len(base)
    reported = nearest(approx[nb:], approx[:nb])
    coords = joint.size
    return EvalRecord(
        method=method, params=dict(params), seed=seed, wall_time=wall,
        bits_per_coordinate=bits / coords,
        accuracy=float(np.mean(reported == truth)),
        avg_distortion=float(np.mean(_distortion(queries, base, reported, truth))),
        bits_with_codebook=None if bits_cb is None else bits_cb / coords,
    )


def divisors(d: int) -> list[int]:
    return [m for m in range(1, d + 1) if d % m == 0]


def qs_grid(d: int, levels: Iterable[int] = range(2, 21), blocks: Optional[Sequence[int]] = None,
            lambdas: Optional[Sequence[int]] = None) -> list[dict]:
    """Every (m, L, lam) with m a divisor of d and 1 <= lam <= L - 1."""
    blocks = divisors(d) if blocks is None else list(blocks)
    out = []
    for m in blocks:
        for L in levels:
            for lam in range(1, L):
                if lambdas is None or lam in lambdas:
                    out.append({"m": m, "L": L, "lam": lam})
    return out


def pq_grid(d: int, ks: Iterable[int] = tuple(2 ** e for e in range(5, 13)),
            blocks: Optional[Sequence[int]] = None) -> list[dict]:
    blocks = divisors(d) if blocks is None else list(blocks)
    return [{"m": m, "k": k} for m in blocks for k in ks]


def grid_grid(ks: Iterable[int] = tuple(2 ** e for e in range(1, 17))) -> list[dict]:
    return [{"k": k} for k in ks]


def _journal_keys(path) -> dict:
    done = {}
    if path and os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = EvalRecord(**json.loads(line))
                except (json.JSONDecodeError, TypeError):
                    continue  # a torn final line from an interrupted run
                done[rec.key()] = rec
    return done


def _run_one(args):
    method, base, queries, params, seed, truth = args
    return evaluate(method, base, queries, params, seed=seed, truth=truth)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("QSK_THREADS", "1")))
    except ValueError:
        return 1


def sweep(method: str, base, queries, grid: Sequence[dict], seeds: Sequence[int] = (0,),
          journal: Optional[str] = None, workers: Optional[int] = None) -> list[EvalRecord]:
    """Evaluate every parameter setting under every seed.

    With a ``journal`` path each finished record is appended as a JSON line
    and settings already present are not recomputed.
    """
    if not grid:
        raise ValueError("empty parameter grid")
    base = as_points(base, name="base")
    queries = as_points(queries, name="queries")
    truth = true_nn(queries, base)
    done = _journal_keys(journal)
    jobs, results = [], {}
    for params in grid:
        for seed in seeds:
            probe = EvalRecord(method, dict(params), 0.0, 0.0, 1.0, seed=seed)
            if probe.key() in done:
                results[probe.key()] = done[probe.key()]
            else:
                jobs.append((method, base, queries, dict(params), seed, truth))
    workers = worker_count() if workers is None else workers
    fh = open(journal, "a") if journal else None
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(_run_one, jobs):
                    results[rec.key()] = rec
                    _append(fh, rec)
        else:
            for job in jobs:
                rec = _run_one(job)
                results[rec.key()] = rec
                _append(fh, rec)
    finally:
        if fh:
            fh.close()
    ordered = []
    for params in grid:
        for seed in seeds:
            ordered.append(results[EvalRecord(method, dict(params), 0, 0, 1, seed=seed).key()])
    return ordered


def _append(fh, rec: EvalRecord):
    if fh is not None:
        fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        fh.flush()


def summarize(records: Sequence[EvalRecord]) -> list[EvalRecord]:
    """Average records that share method and parameters across seeds.

    The spread (standard deviation) of accuracy and distortion is kept in
    ``extra``.
    """
    groups: dict = {}
    for r in records:
        groups.setdefault(json.dumps([r.method, r.params], sort_keys=True), []).append(r)
    out = []
    for rs in groups.values():
        acc = np.array([r.accuracy for r in rs])
        dist = np.array([r.avg_distortion for r in rs])
        bits = np.array([r.bits_per_coordinate for r in rs])
        cb = [r.bits_with_codebook for r in rs if r.bits_with_codebook is not None]
        out.append(EvalRecord(
            method=rs[0].method, params=rs[0].params, seed=-1,
            bits_per_coordinate=float(bits.mean()), accuracy=float(acc.mean()),
            avg_distortion=float(dist.mean()),
            wall_time=float(np.mean([r.wall_time for r in rs])),
            bits_with_codebook=float(np.mean(cb)) if cb else None,
            extra={"seeds": len(rs), "accuracy_std": float(acc.std()),
                   "distortion_std": float(dist.std()), "bits_std": float(bits.std())},
        ))
    return out


def pareto_envelope(records: Sequence[EvalRecord], metric: str = "accuracy") -> list[EvalRecord]:
    """Records not dominated in (fewer bits, better metric), sorted by size.

    ``metric`` is ``"accuracy"`` (higher is better) or ``"distortion"``
    (lower is better). Exact duplicates keep their first occurrence.
    """
    if not records:
        raise ValueError("pareto_envelope of no records")
    if metric == "accuracy":
        score = [r.accuracy for r in records]
    elif metric == "distortion":
        score = [-r.avg_distortion for r in records]
    else:
        raise ValueError(f"unknown metric {metric!r}")
    order = sorted(range(len(records)), key=lambda i: (records[i].bits_per_coordinate, -score[i], i))
    out, best = [], -math.inf
    for i in order:
        if score[i] > best:
            out.append(records[i])
            best = score[i]
    return out


def envelope_value(envelope: Sequence[EvalRecord], bits: float, metric: str = "accuracy") -> float:
    """Best metric reachable within ``bits`` per coordinate (step function)."""
    vals = [r.accuracy if metric == "accuracy" else -r.avg_distortion
            for r in envelope if r.bits_per_coordinate <= bits]
    if not vals:
        return -math.inf
    return max(vals) if metric == "accuracy" else -max(vals)


def write_csv(records: Sequence[EvalRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(r.to_row())


def write_jsonl(records: Sequence[EvalRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"schema": SCHEMA_VERSION, **asdict(r)}, sort_keys=True) + "\n")
