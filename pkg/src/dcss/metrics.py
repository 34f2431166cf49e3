"""Clustering quality measures.

Hard and soft silhouette (with the analytic gradient of the soft variant),
the entropy penalty used during training, and the external indices NMI and
ARI. Everything is computed in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_MASS = 1e-12
EPS_LOG = 1e-12


class InvalidPartitionError(ValueError):
    """Raised when a labelling cannot be scored (e.g. fewer than two clusters)."""


class DegenerateSilhouetteError(ArithmeticError):
    """Raised when a soft-silhouette gradient is requested at a point where
    some own-cluster mass is (numerically) zero."""


@dataclass
class SilhouetteReport:
    per_point: np.ndarray
    total: float
    # number of (point, cluster) conditional terms forced to zero
    degenerate: int = 0
    empty_clusters: list[int] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return self.degenerate > 0 or bool(self.empty_clusters)


def _as_distance(dist) -> np.ndarray:
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    return d


def _as_probs(assign, n: int) -> np.ndarray:
    p = np.asarray(assign, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != n:
        raise ValueError(f"assignment must be {n}xK, got shape {p.shape}")
    if p.shape[1] < 2:
        raise InvalidPartitionError("soft silhouette needs K >= 2")
    return p


def pairwise_euclidean(points) -> np.ndarray:
    """Plain Euclidean distance matrix with an exact zero diagonal."""
    z = np.asarray(points, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    diff = z[:, None, :] - z[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, 0.0)
    return d


# ---------------------------------------------------------------------------
# hard silhouette


def hard_silhouette(dist, labels, k: int | None = None) -> SilhouetteReport:
    """Classic silhouette from a precomputed distance matrix.

    Points in singleton clusters score 0, as does a point whose intra and
    nearest inter-cluster mean distances are both 0. Empty cluster ids in
    ``range(k)`` are ignored when taking the nearest other cluster and are
    listed in ``report.empty_clusters``.
    """
    d = _as_distance(dist)
    labels = np.asarray(labels)
    n = d.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per point")
    if n < 2:
        raise InvalidPartitionError("silhouette needs at least two points")
    if labels.min() < 0:
        raise InvalidPartitionError("labels must be non-negative")
    k = int(labels.max()) + 1 if k is None else int(k)
    if labels.max() >= k:
        raise InvalidPartitionError(f"label {labels.max()} out of range for k={k}")
    if k < 2:
        raise InvalidPartitionError("silhouette needs K >= 2")

    sizes = np.bincount(labels, minlength=k)
    empty = [int(c) for c in np.flatnonzero(sizes == 0)]
    if len(empty) > k - 2:
        raise InvalidPartitionError("silhouette needs at least two non-empty clusters")

    sums = np.zeros((n, k))
    for c in range(k):
        if sizes[c]:
            sums[:, c] = d[:, labels == c].sum(axis=1)

    rows = np.arange(n)
    own_size = sizes[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[rows, labels] / (own_size - 1)
        means = sums / sizes
    means[:, sizes == 0] = np.inf
    means[rows, labels] = np.inf
    b = means.min(axis=1)

    s = np.zeros(n)
    ok = own_size > 1
    top = np.maximum(a, b)
    ok &= top > 0
    s[ok] = (b[ok] - a[ok]) / top[ok]
    return SilhouetteReport(s, float(s.mean()), 0, empty)


# ---------------------------------------------------------------------------
# soft silhouette


def _weighted_sums(dist: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # sums[i, I] runs over every j (d_ii = 0); mass[i, I] excludes j = i
    sums = dist @ p
    mass = p.sum(axis=0)[None, :] - p
    return sums, mass


def _conditional(sums, mass, eps_mass):
    """Per-(point, cluster) conditional silhouettes plus bookkeeping for the
    backward pass."""
    n, k = sums.shape
    valid = mass >= eps_mass
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(valid, sums / np.where(valid, mass, 1.0), np.inf)
    # nearest other cluster: stable sort keeps the lowest index on ties
    order = np.argsort(a, axis=1, kind="stable")[:, :2]
    rows = np.arange(n)
    first, second = order[:, 0], order[:, 1]
    is_first = np.arange(k)[None, :] == first[:, None]
    b_idx = np.where(is_first, second[:, None], first[:, None])
    b = a[rows[:, None], b_idx]

    live = valid & np.isfinite(b)
    top = np.where(live, np.maximum(a, b), 0.0)
    live &= top > 0
    s = np.zeros((n, k))
    s[live] = (b[live] - a[live]) / top[live]
    return a, b, b_idx, s, live, valid


def soft_silhouette(dist, assign, eps_mass: float = EPS_MASS) -> SilhouetteReport:
    """Soft silhouette of a probabilistic assignment.

    ``assign[i, I]`` is the probability that point ``i`` belongs to cluster
    ``I``. For each point and cluster the expected intra distance ``a`` and
    the smallest expected distance to another cluster ``b`` give a
    conditional silhouette; the per-point score is its expectation under the
    point's own membership row. Conditional terms whose own-cluster mass is
    below ``eps_mass`` score 0 and are counted in ``report.degenerate``.
    """
    d = _as_distance(dist)
    n = d.shape[0]
    if n < 2:
        raise InvalidPartitionError("soft silhouette needs at least two points")
    p = _as_probs(assign, n)
    sums, mass = _weighted_sums(d, p)
    return _soft_from_sums(sums, mass, p, eps_mass)


def _soft_from_sums(sums, mass, p, eps_mass) -> SilhouetteReport:
    _, _, _, s, _, valid = _conditional(sums, mass, eps_mass)
    per_point = (p * s).sum(axis=1)
    # only terms carrying probability weight count as degenerate
    degenerate = int(np.count_nonzero(~valid & (p > 0)))
    return SilhouetteReport(per_point, float(per_point.mean()), degenerate)


def soft_silhouette_grad(dist, assign, eps_mass: float = EPS_MASS):
    """Soft silhouette together with its gradient.

    Returns
    -------
    total : float
        The soft silhouette ``Sf``.
    grad_probs : ndarray, shape (n, K)
        dSf/dP for the unconstrained assignment matrix (rows are not
        renormalised).
    grad_dist : ndarray, shape (n, n)
        Symmetric; entry (i, j) is dSf/dd where ``d = d(x_i, x_j) = d(x_j, x_i)``
        moves both matrix entries together. The diagonal is zero.

    Ties in the nearest-other-cluster minimum and in ``max(a, b)`` resolve to
    the lowest cluster index and to ``a`` respectively.
    """
    d = _as_distance(dist)
    n = d.shape[0]
    p = _as_probs(assign, n)
    sums, mass = _weighted_sums(d, p)
    if np.any(mass < eps_mass):
        raise DegenerateSilhouetteError("own-cluster mass below eps_mass; gradient undefined")
    a, b, b_idx, s, live, _ = _conditional(sums, mass, eps_mass)
    k = p.shape[1]

    # d s / d a and d s / d b, branch on which of a, b is the max
    a_top = a >= b
    with np.errstate(divide="ignore", invalid="ignore"):
        ds_da = np.where(a_top, -b / a**2, -1.0 / b)
        ds_db = np.where(a_top, 1.0 / a, a / b**2)
    ds_da = np.where(live, ds_da, 0.0)
    ds_db = np.where(live, ds_db, 0.0)

    w = p / n  # dSf/ds
    g_a = w * ds_da
    gb = w * ds_db
    rows = np.repeat(np.arange(n), k)
    np.add.at(g_a, (rows, b_idx.ravel()), gb.ravel())

    g_sums = g_a / mass
    g_mass = -g_a * a / mass

    grad_p = s / n
    grad_p = grad_p + d.T @ g_sums
    grad_p = grad_p + g_mass.sum(axis=0)[None, :] - g_mass

    g_d = g_sums @ p.T
    g_d = g_d + g_d.T
    np.fill_diagonal(g_d, 0.0)
    total = float((p * s).sum(axis=1).mean())
    return total, grad_p, g_d


def soft_silhouette_points(points, assign, chunk: int = 2048,
                           eps_mass: float = EPS_MASS) -> SilhouetteReport:
    """Soft silhouette on Euclidean distances between ``points`` without
    materialising the full distance matrix."""
    z = np.asarray(points, dtype=np.float64)
    n = z.shape[0]
    p = _as_probs(assign, n)
    sums = np.empty_like(p)
    for lo in range(0, n, chunk):
        blk = z[lo:lo + chunk]
        sq = (blk**2).sum(1)[:, None] + (z**2).sum(1)[None, :] - 2.0 * blk @ z.T
        dblk = np.sqrt(np.maximum(sq, 0.0))
        dblk[np.arange(len(blk)), np.arange(lo, lo + len(blk))] = 0.0
        sums[lo:lo + chunk] = dblk @ p
    mass = p.sum(axis=0)[None, :] - p
    return _soft_from_sums(sums, mass, p, eps_mass)


def hard_silhouette_points(points, labels, k: int | None = None,
                           chunk: int = 2048) -> SilhouetteReport:
    """Hard silhouette on Euclidean distances between ``points``, chunked."""
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if k is None else int(k)
    if len(labels) <= chunk:
        return hard_silhouette(pairwise_euclidean(points), labels, k)
    onehot = np.eye(k)[labels]
    rep = soft_silhouette_points(points, onehot, chunk=chunk)
    sizes = np.bincount(labels, minlength=k)
    rep.empty_clusters = [int(c) for c in np.flatnonzero(sizes == 0)]
    rep.degenerate = 0
    return rep


# ---------------------------------------------------------------------------
# entropy penalty


def entropy_regularizer(assign, eps_log: float = EPS_LOG) -> float:
    """Mean per-point entropy (natural log) of the membership rows."""
    p = np.asarray(assign, dtype=np.float64)
    return float(-(p * np.log(np.maximum(p, eps_log))).sum(axis=1).mean())


def entropy_regularizer_grad(assign, eps_log: float = EPS_LOG) -> np.ndarray:
    p = np.asarray(assign, dtype=np.float64)
    n = p.shape[0]
    clamped = p > eps_log
    g = np.where(clamped, -(np.log(np.maximum(p, eps_log)) + 1.0), -np.log(eps_log))
    return g / n


# ---------------------------------------------------------------------------
# external indices


def _contingency(truth, pred) -> np.ndarray:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise ValueError(f"label vectors differ in shape: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("empty labelling")
    _, ti = np.unique(truth, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def _entropy_counts(counts: np.ndarray) -> float:
    q = counts[counts > 0] / counts.sum()
    return float(-(q * np.log(q)).sum())


def nmi(truth, pred) -> float:
    """Normalized mutual information with arithmetic-mean normalisation."""
    table = _contingency(truth, pred)
    n = table.sum()
    h_t = _entropy_counts(table.sum(axis=1))
    h_p = _entropy_counts(table.sum(axis=0))
    if h_t + h_p == 0.0:
        # both labellings constant, hence the same partition
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / n**2
    mi = float((pij * np.log(pij / outer)).sum())
    if mi <= 0.0:
        return 0.0
    return float(min(1.0, 2.0 * mi / (h_t + h_p)))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(truth, pred) -> float:
    """Hubert-Arabie adjusted Rand index."""
    table = _contingency(truth, pred)
    n = table.sum()
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        # both partitions trivial (all-in-one or all-singletons)
        return 1.0
    return float((sum_ij - expected) / (top - expected))
