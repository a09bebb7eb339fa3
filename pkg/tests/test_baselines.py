import math

import numpy as np
import pytest

from quadsketch.baselines import (
    GridQuantizer,
    PQCodebook,
    grid_fit_quantize,
    grid_from_bytes,
    grid_to_bytes,
    kmeans,
    pq_decode,
    pq_fit,
)
from quadsketch.errors import BlockMismatch, CorruptSketch, EmptyInput, InvalidParams


def test_grid_three_landmarks():
    pts = np.array([[0.0], [10.0], [3.7], [5.0]])
    q, out = grid_fit_quantize(pts, 3)
    assert list(q.landmarks(0)) == [0.0, 5.0, 10.0]
    assert list(out[:, 0]) == [0.0, 10.0, 5.0, 5.0]


def test_grid_midpoint_rule():
    pts = np.array([[0.0], [1.0], [0.49], [0.51], [0.5]])
    _, out = grid_fit_quantize(pts, 2)
    assert list(out[:, 0]) == [0.0, 1.0, 0.0, 1.0, 1.0]


def test_grid_constant_dimension_and_k():
    pts = np.array([[1.0, 2.0], [1.0, 5.0]])
    q, out = grid_fit_quantize(pts, 4)
    assert np.all(out[:, 0] == 1.0)
    with pytest.raises(InvalidParams):
        grid_fit_quantize(pts, 1)


def test_grid_idempotent():
    pts = np.random.default_rng(0).normal(size=(200, 5))
    q, once = grid_fit_quantize(pts, 16)
    assert np.array_equal(q.decode(q.codes(once)), once)
    _, twice = grid_fit_quantize(once, 16)
    assert np.allclose(twice, once, rtol=0, atol=1e-12)


def test_grid_bits_and_serialization():
    pts = np.random.default_rng(1).uniform(size=(30, 4))
    q, out = grid_fit_quantize(pts, 10)
    assert q.bits(30) == 30 * 4 * 4 + 2 * 4 * 64
    q2, codes = grid_from_bytes(grid_to_bytes(q, q.codes(pts)))
    assert np.array_equal(q2.decode(codes), out)
    with pytest.raises(CorruptSketch):
        grid_from_bytes(grid_to_bytes(q, q.codes(pts))[:-1])


def objective(x, c, labels):
    return float(((x - c[labels]) ** 2).sum())


def test_kmeans_separable():
    res = kmeans(np.array([0.0, 0.0, 10.0, 10.0]), 2)
    assert sorted(res.centroids[:, 0]) == [0.0, 10.0]
    assert res.objective == 0.0


def test_kmeans_k_at_least_distinct():
    x = np.random.default_rng(2).integers(0, 5, size=(40, 2)).astype(float)
    res = kmeans(x, 30, seed=1)
    assert res.objective == 0.0


def test_kmeans_monotone_and_optimal_assignment():
    rng = np.random.default_rng(3)
    for trial in range(30):
        x = rng.normal(size=(rng.integers(5, 200), rng.integers(1, 6)))
        k = int(rng.integers(1, 12))
        res = kmeans(x, k, seed=trial)
        assert all(b <= a for a, b in zip(res.history, res.history[1:]))
        assert res.objective == pytest.approx(objective(x, res.centroids, res.labels), rel=1e-9)
        d2 = ((x[:, None, :] - res.centroids[None]) ** 2).sum(-1)
        assert np.all(d2[np.arange(len(x)), res.labels] <= d2.min(axis=1) + 1e-9)


def test_kmeans_ties_to_lowest_index():
    # the point 5 is equidistant from both centres after convergence
    res = kmeans(np.array([0.0, 5.0, 10.0]), 2, seed=0)
    d = np.abs(5.0 - res.centroids[:, 0])
    if d[0] == d[1]:
        assert res.labels[1] == 0


def test_kmeans_errors():
    with pytest.raises(EmptyInput):
        kmeans(np.empty((0, 2)), 2)
    with pytest.raises(InvalidParams):
        kmeans(np.ones((3, 2)), 0)
    with pytest.raises(InvalidParams):
        kmeans(np.ones((3, 2)), 1, max_iters=0)


def test_kmeans_deterministic():
    x = np.random.default_rng(4).normal(size=(100, 3))
    a, b = kmeans(x, 5, seed=7), kmeans(x, 5, seed=7)
    assert np.array_equal(a.centroids, b.centroids)


def test_pq_exact_when_k_is_n():
    x = np.random.default_rng(5).normal(size=(12, 4))
    cb = pq_fit(x, 1, 12)
    assert np.allclose(pq_decode(cb), x, rtol=0, atol=1e-12)


def test_pq_error_is_sum_of_block_residuals():
    x = np.random.default_rng(6).normal(size=(150, 6))
    cb = pq_fit(x, 3, 8, seed=2)
    total = ((pq_decode(cb) - x) ** 2).sum()
    parts = sum(kmeans(x[:, 2 * b:2 * b + 2], 8, seed=2 + b).objective for b in range(3))
    assert total == pytest.approx(parts, rel=1e-12)
    one = ((x - x.mean(0)) ** 2).sum()
    assert total <= one


def test_pq_bits_accounting():
    x = np.random.default_rng(7).normal(size=(64, 8))
    cb = pq_fit(x, 4, 16)
    assert cb.bits_per_coordinate() == 4 * 4 / 8
    assert cb.bits_per_coordinate(include_codebook=True) == (64 * 4 * 4 + 4 * 16 * 2 * 64) / (64 * 8)


def test_pq_serialization_and_errors():
    x = np.random.default_rng(8).normal(size=(40, 6))
    cb = pq_fit(x, 2, 5)
    back = PQCodebook.from_bytes(cb.to_bytes())
    assert np.array_equal(pq_decode(back), pq_decode(cb))
    with pytest.raises(CorruptSketch):
        PQCodebook.from_bytes(cb.to_bytes()[:50])
    with pytest.raises(BlockMismatch):
        pq_fit(x, 4, 5)
