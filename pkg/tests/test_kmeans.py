import numpy as np
import pytest

from dcss.kmeans import _plusplus, kmeans, lloyd

from oracles import best_sse


def test_rectangle():
    pts = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    assert best_sse(pts, 2) == pytest.approx(1.0)
    res = kmeans(pts, 2, restarts=5, seed=0)
    assert res.sse == pytest.approx(1.0)
    got = sorted(map(tuple, res.centers.round(12)))
    assert got == [(0.0, 0.5), (10.0, 0.5)]


def test_n_equals_k():
    pts = np.random.default_rng(0).normal(size=(5, 2))
    res = kmeans(pts, 5, restarts=3, seed=1)
    assert res.sse == pytest.approx(0.0, abs=1e-24)
    assert len(set(res.labels)) == 5


def test_duplicates_single_cluster():
    pts = np.ones((6, 3)) * 2.5
    res = kmeans(pts, 1, restarts=2)
    np.testing.assert_array_equal(res.labels, 0)
    np.testing.assert_allclose(res.centers, [[2.5, 2.5, 2.5]])


def test_too_few_points():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 3)


def test_deterministic():
    pts = np.random.default_rng(2).normal(size=(40, 3))
    a, b = kmeans(pts, 3, restarts=4, seed=9), kmeans(pts, 3, restarts=4, seed=9)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.sse == b.sse


@pytest.mark.parametrize("seed", range(10))
def test_sse_monotone_within_restart(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(60, 2))
    init = _plusplus(pts, 4, rng)
    *_, history = lloyd(pts, init)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_best_over_restarts():
    pts = np.random.default_rng(4).normal(size=(50, 2))
    best = kmeans(pts, 4, restarts=10, seed=3)
    rng = np.random.default_rng(3)
    singles = [lloyd(pts, _plusplus(pts, 4, rng))[2] for _ in range(10)]
    assert best.sse == pytest.approx(min(singles))
    assert all(best.sse <= s + 1e-12 for s in singles)


def test_empty_cluster_repair():
    # two centers start on the same far point; one must be re-seeded
    pts = np.array([[0.0], [0.1], [0.2], [5.0], [5.1]])
    centers, labels, sse, _, _ = lloyd(pts, np.array([[0.1], [100.0], [100.0]]))
    assert len(set(labels)) == 3
    assert np.isfinite(sse)


@pytest.mark.parametrize("seed", range(10))
def test_matches_exhaustive(seed):
    rng = np.random.default_rng(100 + seed)
    n, k = int(rng.integers(3, 9)), int(rng.integers(1, 4))
    pts = rng.normal(size=(n, 2))
    assert kmeans(pts, k, restarts=20, seed=seed).sse == pytest.approx(best_sse(pts, k), rel=1e-9, abs=1e-12)


def test_label_permutation_keeps_sse():
    pts = np.random.default_rng(5).normal(size=(20, 2))
    res = kmeans(pts, 3, restarts=3)
    perm = np.array([2, 0, 1])
    relabeled = perm[res.labels]
    centers = res.centers[np.argsort(perm)]
    sse = ((pts - centers[relabeled]) ** 2).sum()
    assert sse == pytest.approx(res.sse)
