"""Command-line interface.

Every command prints its fully resolved configuration as a ``# config:``
JSON line first. Exit codes: 0 success, 2 usage, 3 data or corrupt input,
4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import baselines, codec, data, evaluation
from .core import SketchParams, aspect_ratio, derive_params
from .errors import (
    BlockMismatch,
    CorruptSketch,
    CountTooLarge,
    DataError,
    DegeneratePointSet,
    DuplicatePoints,
    InvalidParams,
    QuadSketchError,
    TooFewPoints,
)
from .sketch import (
    BLOCK_MAGIC,
    MULTI_MAGIC,
    DEFAULT_DELTA,
    MultiTreeSketch,
    compress_maxdist,
    load_block_sketch,
    load_sketch,
    sketch_blocks,
    sketch_points,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("quadsketch")


class UsageError(Exception):
    pass


def int_list(text: str) -> list[int]:
    """``"1,2,8-10"`` -> [1, 2, 8, 9, 10]."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _list_arg(text: str) -> list[int]:
    try:
        return int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None


# --- datasets --------------------------------------------------------------

def load_dataset(name: str, fmt: str | None, seed: int) -> np.ndarray:
    if name == "diagonal":
        return data.gen_diagonal(seed=seed)
    if not os.path.exists(name):
        raise UsageError(f"dataset {name!r} not found")
    fmt = fmt or data.guess_format(name)
    return data.load(data.DatasetSpec(name=os.path.basename(name), path=name, fmt=fmt))


def split_queries(points: np.ndarray, queries: str, fmt: str | None, seed: int):
    """``--queries`` is a count to sample from the dataset or a query file."""
    if queries.isdigit():
        return data.sample_queries(points, int(queries), seed=seed)
    q = load_dataset(queries, fmt, seed)
    if q.shape[1] != points.shape[1]:
        raise DataError(f"queries have d={q.shape[1]}, base has d={points.shape[1]}")
    return q, points


def write_points(path: str, points: np.ndarray) -> None:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".npy":
        np.save(path, points)
    elif ext == ".fvecs":
        data.write_fvecs(path, points)
    else:
        data.save_cache(path, points)


# --- compression -----------------------------------------------------------

def qs_params(args, points: np.ndarray) -> SketchParams:
    d = points.shape[1]
    m = args.blocks or 1
    if args.L is not None:
        if args.lam is None:
            raise UsageError("-L needs --lambda")
        return SketchParams(L=args.L, lam=args.lam, m=m, seed=args.seed)
    if args.eps is None:
        raise UsageError("give -L and --lambda, or --eps (and optionally --delta)")
    delta = DEFAULT_DELTA if args.delta is None else args.delta
    w = d // m if d % m == 0 else d
    phi = max(aspect_ratio(points, seed=args.seed), 2.0)
    p = derive_params(args.eps, delta, w, phi, m=m, seed=args.seed)
    if args.lam is not None:
        p = p.replace(lam=args.lam)
    return p


def sketch_bytes(args, points: np.ndarray) -> tuple[bytes, dict]:
    """Serialized artifact for ``args.method`` and the resolved parameters."""
    n, d = points.shape
    if args.method == "qs":
        if args.all_pairs:
            if args.eps is None:
                raise UsageError("--all-pairs needs --eps")
            msk = compress_maxdist(points, args.eps, seed=args.seed)
            return msk.to_bytes(), {"eps": args.eps, "L": msk.params.L,
                                    "lam": msk.params.lam, "trees": msk.k}
        p = qs_params(args, points)
        if p.m == 1:
            sk = sketch_points(points, p)
            return sk.to_bytes(), {"m": 1, "L": p.L, "lam": p.lam}
        return sketch_blocks(points, p).to_bytes(), {"m": p.m, "L": p.L, "lam": p.lam}
    if args.k is None:
        raise UsageError(f"--method {args.method} needs -k")
    if args.method == "pq":
        cb = baselines.pq_fit(points, args.blocks or 1, args.k, seed=args.seed)
        return cb.to_bytes(), {"m": cb.m, "k": cb.k}
    if args.k < 2:
        raise InvalidParams(f"grid needs k >= 2 landmarks, got {args.k}")
    q = baselines.GridQuantizer(lo=points.min(0), hi=points.max(0), k=args.k)
    return baselines.grid_to_bytes(q, q.codes(points)), {"k": args.k}


def read_artifact(buf: bytes) -> np.ndarray:
    """Decompressed points of any artifact written by ``compress``."""
    magic = buf[:4]
    if magic == codec.MAGIC:
        return load_sketch(buf).decompress()
    if magic == BLOCK_MAGIC:
        return load_block_sketch(buf).decompress()
    if magic == MULTI_MAGIC:
        # tree 1 holds every point
        return MultiTreeSketch.from_bytes(buf).trees[0].decompress()
    if magic == b"PQC1":
        return baselines.pq_decode(baselines.PQCodebook.from_bytes(buf))
    if magic == b"QGD1":
        q, codes = baselines.grid_from_bytes(buf)
        return q.decode(codes)
    raise CorruptSketch(f"unrecognized magic {magic!r}", offset=0)


# --- commands --------------------------------------------------------------

def print_config(args, **resolved) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved)
    print("# config: " + json.dumps(cfg, sort_keys=True, default=str))


def cmd_compress(args) -> int:
    points = load_dataset(args.dataset, args.format, args.seed)
    if args.blocks and points.shape[1] % args.blocks:
        raise BlockMismatch(f"{args.blocks} blocks do not divide dimension {points.shape[1]}")
    t0 = time.perf_counter()
    blob, resolved = sketch_bytes(args, points)
    elapsed = time.perf_counter() - t0
    print_config(args, n=len(points), d=points.shape[1], **resolved)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    bits = 8 * len(blob) / points.size
    print(f"wrote {args.out}: {len(blob)} bytes, {bits:.4f} bits/coordinate, {elapsed:.3f} s")
    return EXIT_OK


def cmd_decompress(args) -> int:
    print_config(args)
    with open(args.input, "rb") as fh:
        pts = read_artifact(fh.read())
    write_points(args.out, pts)
    print(f"wrote {args.out}: {pts.shape[0]} x {pts.shape[1]} points")
    return EXIT_OK


def _tree_report(prefix: str, sk) -> tuple[list[str], int]:
    t = sk.tree
    size = sk.size()
    lines = [
        f"{prefix}nodes {t.n_nodes}",
        f"{prefix}leaves {t.n_leaves}",
        f"{prefix}long_edges {t.n_long_edges}",
        f"{prefix}L {t.L} lam {sk.params.lam} root_level {t.root_level}",
        f"{prefix}header_bits {size.header_bits}",
        f"{prefix}tree_bits {size.tree_bits}",
        f"{prefix}leaf_id_bits {size.leaf_id_bits}",
        f"{prefix}padding_bits {size.padding_bits}",
    ]
    return lines, size.total_bits


def cmd_info(args) -> int:
    print_config(args)
    with open(args.input, "rb") as fh:
        buf = fh.read()
    magic = buf[:4]
    lines, accounted = [], 0
    if magic == codec.MAGIC:
        sk = load_sketch(buf)
        lines.append(f"format QSK1 n {sk.n} d {sk.d} seed {sk.params.seed} "
                     f"degenerate {int(sk.degenerate)}")
        body, accounted = _tree_report("", sk)
        lines += body
    elif magic in (BLOCK_MAGIC, MULTI_MAGIC):
        if magic == BLOCK_MAGIC:
            bs = load_block_sketch(buf)
            parts, what = bs.blocks, f"format QSKB n {bs.n} d {bs.d} blocks {bs.m} seed {bs.seed}"
        else:
            msk = MultiTreeSketch.from_bytes(buf)
            parts, what = msk.trees, (f"format QSKM n {msk.n} d {msk.d} trees {msk.k} "
                                      f"eps {msk.eps} seed {msk.seed}")
        lines.append(what)
        for i, sk in enumerate(parts):
            body, bits = _tree_report(f"[{i}] ", sk)
            lines += body
            accounted += bits
        envelope = 8 * len(buf) - accounted
        lines.append(f"envelope_bits {envelope}")
        accounted += envelope
        lines.append(f"nodes {sum(s.tree.n_nodes for s in parts)} "
                     f"leaves {sum(s.tree.n_leaves for s in parts)} "
                     f"long_edges {sum(s.tree.n_long_edges for s in parts)}")
    elif magic == b"PQC1":
        cb = baselines.PQCodebook.from_bytes(buf)
        lines.append(f"format PQC1 n {cb.n} d {cb.d} m {cb.m} k {cb.k}")
        lines.append(f"code_bits {cb.code_bits()} codebook_bits {cb.codebook_bits()}")
        accounted = 8 * len(buf)
    elif magic == b"QGD1":
        q, codes = baselines.grid_from_bytes(buf)
        lines.append(f"format QGD1 n {codes.shape[0]} d {codes.shape[1]} k {q.k}")
        accounted = 8 * len(buf)
    else:
        raise CorruptSketch(f"unrecognized magic {magic!r}", offset=0)
    lines.append(f"total_bits {accounted} file_bits {8 * len(buf)}")
    print("\n".join(lines))
    if accounted != 8 * len(buf):
        log.error("size breakdown does not add up to the file size")
        return EXIT_INTERNAL
    return EXIT_OK


def method_params(args) -> dict:
    if args.method == "qs":
        if args.L is None or args.lam is None:
            raise UsageError("eval --method qs needs -L and --lambda")
        return {"m": args.blocks or 1, "L": args.L, "lam": args.lam}
    if args.k is None:
        raise UsageError(f"eval --method {args.method} needs -k")
    if args.method == "pq":
        return {"m": args.blocks or 1, "k": args.k}
    return {"k": args.k}


def cmd_eval(args) -> int:
    points = load_dataset(args.dataset, args.format, args.seed)
    queries, base = split_queries(points, args.queries, args.format, args.seed)
    params = method_params(args)
    if "m" in params and base.shape[1] % params["m"]:
        raise BlockMismatch(f"{params['m']} blocks do not divide dimension {base.shape[1]}")
    print_config(args, params=params, n_base=len(base), n_queries=len(queries))
    rec = evaluation.evaluate(args.method, base, queries, params, seed=args.seed)
    print(json.dumps(rec.to_row(), sort_keys=True))
    if args.out:
        evaluation.write_csv([rec], args.out)
    return EXIT_OK


def sweep_grid(args, d: int) -> list[dict]:
    blocks = args.blocks_list or evaluation.divisors(d)
    bad = [m for m in blocks if d % m]
    if bad:
        raise BlockMismatch(f"blocks {bad} do not divide dimension {d}")
    if args.method == "qs":
        levels = args.levels or list(range(2, 21))
        return evaluation.qs_grid(d, levels=levels, blocks=blocks, lambdas=args.lambdas)
    if args.method == "pq":
        ks = args.ks or [2 ** e for e in range(5, 13)]
        return evaluation.pq_grid(d, ks=ks, blocks=blocks)
    return evaluation.grid_grid(args.ks or [2 ** e for e in range(1, 17)])


def cmd_sweep(args) -> int:
    points = load_dataset(args.dataset, args.format, args.seed)
    queries, base = split_queries(points, args.queries, args.format, args.seed)
    grid = sweep_grid(args, base.shape[1])
    if not grid:
        raise UsageError("the parameter grid is empty")
    seeds = args.seeds or [args.seed]
    print_config(args, grid_size=len(grid), seeds=seeds, workers=evaluation.worker_count())
    recs = evaluation.sweep(args.method, base, queries, grid, seeds=seeds, journal=args.journal)
    recs = evaluation.summarize(recs) if len(seeds) > 1 else recs
    if args.envelope:
        recs = evaluation.pareto_envelope(recs, metric=args.envelope)
    evaluation.write_csv(recs, args.out)
    print(f"wrote {len(recs)} rows to {args.out}")
    return EXIT_OK


def cmd_gen_diagonal(args) -> int:
    print_config(args)
    pts = data.gen_diagonal(n=args.n, d=args.d, hi=args.hi, seed=args.seed)
    data.write_fvecs(args.out, pts)
    print(f"wrote {args.out}: {args.n} x {args.d}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _dataset_flags(p):
    p.add_argument("--dataset", required=True,
                   help="path to fvecs/bvecs/idx/csv/npy/cache file, or 'diagonal'")
    p.add_argument("--format", choices=["fvecs", "bvecs", "idx", "csv", "npy", "cache"])
    p.add_argument("--seed", type=int, default=0)


def _method_flags(p):
    p.add_argument("--method", choices=["qs", "pq", "grid"], default="qs")
    p.add_argument("--blocks", type=int, help="number of coordinate blocks m")
    p.add_argument("-L", type=int, dest="L", help="quadtree depth")
    p.add_argument("--lambda", type=int, dest="lam", help="pruning parameter")
    p.add_argument("-k", type=int, help="codebook size (pq) or landmarks per axis (grid)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadsketch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="write a sketch file")
    _dataset_flags(p)
    _method_flags(p)
    p.add_argument("--eps", type=float, help="derive L and lambda from a distortion target")
    p.add_argument("--delta", type=float, help="failure probability used with --eps")
    p.add_argument("--all-pairs", action="store_true",
                   help="multi-tree sketch keeping every pairwise distance within 1 +/- eps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="recover approximate points from a sketch file")
    p.add_argument("input")
    p.add_argument("--out", required=True, help=".npy, .fvecs, or anything else for the cache format")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("info", help="describe a sketch file")
    p.add_argument("input")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("eval", help="accuracy and size of one setting")
    _dataset_flags(p)
    _method_flags(p)
    p.add_argument("--queries", default="500", help="query count to sample, or a query file")
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate a parameter grid")
    _dataset_flags(p)
    p.add_argument("--method", choices=["qs", "pq", "grid"], default="qs")
    p.add_argument("--blocks", type=_list_arg, dest="blocks_list",
                   help="block counts, e.g. 1,2,4 (default: all divisors of d)")
    p.add_argument("-L", type=_list_arg, dest="levels", help="depths, e.g. 2-20")
    p.add_argument("--lambda", type=_list_arg, dest="lambdas", help="pruning values")
    p.add_argument("-k", type=_list_arg, dest="ks", help="codebook or landmark counts")
    p.add_argument("--seeds", type=_list_arg, help="seeds to average over")
    p.add_argument("--queries", default="500", help="query count to sample, or a query file")
    p.add_argument("--journal", help="JSON-lines journal; finished settings are skipped on rerun")
    p.add_argument("--envelope", choices=["accuracy", "distortion"],
                   help="write only the Pareto envelope for this metric")
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-diagonal", help="write the synthetic Diagonal dataset as fvecs")
    p.add_argument("-n", type=int, default=10_000)
    p.add_argument("-d", type=int, default=128)
    p.add_argument("--hi", type=float, default=40_000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_diagonal)
    return ap


USAGE_ERRORS = (UsageError, InvalidParams, BlockMismatch, CountTooLarge, TooFewPoints)
DATA_ERRORS = (DataError, CorruptSketch, DuplicatePoints, DegeneratePointSet, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except QuadSketchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # format guessing and similar argument problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
