import csv
import time

import numpy as np
import pytest

from quadsketch.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, int_list, main
from quadsketch.data import read_fvecs, write_fvecs


@pytest.fixture
def diag(tmp_path):
    p = tmp_path / "diag.fvecs"
    assert main(["gen-diagonal", "-n", "300", "-d", "8", "--out", str(p)]) == EXIT_OK
    return p


def run(args, capsys):
    code = main([str(a) for a in args])
    return code, capsys.readouterr()


def test_gen_diagonal(diag):
    pts = read_fvecs(diag)
    assert pts.shape == (300, 8) and np.all(pts == pts[:, :1])


def test_compress_decompress_shape(diag, tmp_path, capsys):
    out = tmp_path / "s.qsk"
    code, cap = run(["compress", "--dataset", diag, "-L", 12, "--lambda", 3, "--out", out], capsys)
    assert code == EXIT_OK and cap.out.startswith("# config: ")
    assert "bits/coordinate" in cap.out
    code, _ = run(["decompress", out, "--out", tmp_path / "r.npy"], capsys)
    assert code == EXIT_OK and np.load(tmp_path / "r.npy").shape == (300, 8)


@pytest.mark.parametrize("extra", [[], ["--blocks", 4], ["--method", "pq", "-k", 8, "--blocks", 2],
                                   ["--method", "grid", "-k", 8], ["--eps", 0.5, "--all-pairs"]])
def test_same_seed_same_bytes(diag, tmp_path, capsys, extra):
    base = ["compress", "--dataset", diag, "-L", 12, "--lambda", 3, "--seed", 7]
    if "--eps" in extra:
        base = ["compress", "--dataset", diag, "--seed", 7]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(base + extra + ["--out", a], capsys)[0] == EXIT_OK
    assert run(base + extra + ["--out", b], capsys)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    code, cap = run(["info", a], capsys)
    assert code == EXIT_OK
    total = [ln for ln in cap.out.splitlines() if ln.startswith("total_bits")][0].split()
    assert total[1] == total[3] == str(8 * a.stat().st_size)


def test_block_mismatch_is_usage_error(diag, tmp_path, capsys):
    code, cap = run(["compress", "--dataset", diag, "-L", 8, "--lambda", 2, "--blocks", 3,
                     "--out", tmp_path / "x"], capsys)
    assert code == EXIT_USAGE and "divide" in cap.err


def test_usage_errors(diag, tmp_path, capsys):
    assert run(["compress", "--dataset", diag, "--bogus", "--out", tmp_path / "x"], capsys)[0] == EXIT_USAGE
    assert run(["compress", "--dataset", diag, "--out", tmp_path / "x"], capsys)[0] == EXIT_USAGE
    assert run(["compress", "--dataset", tmp_path / "missing.fvecs", "-L", 4, "--lambda", 1,
                "--out", tmp_path / "x"], capsys)[0] == EXIT_USAGE
    assert run(["nonsense"], capsys)[0] == EXIT_USAGE


def test_root_only_info(tmp_path, capsys):
    p = tmp_path / "one.fvecs"
    write_fvecs(p, np.array([[1.0, 2.0]]))
    out = tmp_path / "one.qsk"
    assert run(["compress", "--dataset", p, "-L", 1, "--lambda", 1, "--out", out], capsys)[0] == 0
    code, cap = run(["info", out], capsys)
    lines = dict(ln.split(" ", 1) for ln in cap.out.splitlines()[1:] if " " in ln)
    assert lines["leaves"] == "1" and lines["long_edges"] == "0"


def test_info_corrupt(diag, tmp_path, capsys):
    out = tmp_path / "s.qsk"
    run(["compress", "--dataset", diag, "-L", 10, "--lambda", 3, "--out", out], capsys)
    bad = tmp_path / "bad.qsk"
    bad.write_bytes(out.read_bytes()[:-3])
    assert run(["info", bad], capsys)[0] == EXIT_DATA
    bad.write_bytes(b"junk")
    assert run(["decompress", bad, "--out", tmp_path / "y.npy"], capsys)[0] == EXIT_DATA


def test_long_edges_bounded(diag, tmp_path, capsys):
    out = tmp_path / "s.qsk"
    run(["compress", "--dataset", diag, "-L", 30, "--lambda", 2, "--out", out], capsys)
    _, cap = run(["info", out], capsys)
    vals = dict(ln.split(" ", 1) for ln in cap.out.splitlines()[1:5])
    assert int(vals["long_edges"]) <= int(vals["nodes"])
    assert int(vals["long_edges"]) <= 2 * int(vals["leaves"])


def test_eval_smoke(diag, tmp_path, capsys):
    t0 = time.perf_counter()
    code, cap = run(["eval", "--dataset", diag, "--queries", 30, "-L", 12, "--lambda", 4,
                     "--out", tmp_path / "e.csv"], capsys)
    assert code == EXIT_OK and time.perf_counter() - t0 < 10
    row = next(csv.DictReader(open(tmp_path / "e.csv")))
    assert 0.0 <= float(row["accuracy"]) <= 1.0


def test_eval_query_file(diag, tmp_path, capsys):
    q = tmp_path / "q.fvecs"
    write_fvecs(q, read_fvecs(diag)[:5] + 0.25)
    code, _ = run(["eval", "--dataset", diag, "--queries", q, "--method", "grid", "-k", 64], capsys)
    assert code == EXIT_OK


def test_sweep_blocks_rows_and_resume(tmp_path, capsys):
    p = tmp_path / "u.fvecs"
    write_fvecs(p, np.random.default_rng(0).uniform(size=(200, 128)))
    journal, out = tmp_path / "j.jsonl", tmp_path / "s.csv"
    args = ["sweep", "--dataset", p, "--queries", 20, "-L", 6, "--lambda", 5,
            "--journal", journal, "--out", out]
    assert run(args, capsys)[0] == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert [int(r["m"]) for r in rows] == [1, 2, 4, 8, 16, 32, 64, 128]
    before = journal.read_text()
    assert run(args, capsys)[0] == EXIT_OK
    assert journal.read_text() == before


def test_sweep_envelope(diag, tmp_path, capsys):
    out = tmp_path / "g.csv"
    code, _ = run(["sweep", "--dataset", diag, "--queries", 20, "--method", "grid", "-k", "2,4,8,16",
                   "--envelope", "accuracy", "--out", out], capsys)
    assert code == EXIT_OK
    acc = [float(r["accuracy"]) for r in csv.DictReader(open(out))]
    assert acc == sorted(acc) and len(set(acc)) == len(acc)


def test_int_list():
    assert int_list("1,2,8-10") == [1, 2, 8, 9, 10]
