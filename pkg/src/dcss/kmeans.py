"""Lloyd's k-means with k-means++ seeding and best-of-restarts selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    sse: float
    restarts_used: int
    n_iter: int = 0


def _sq_dists(x, centers):
    # exact differences; the expanded form loses precision on near-ties
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("ikj,ikj->ik", diff, diff)


def _plusplus(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = x[idx]
        closest = np.minimum(closest, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def lloyd(x, centers, max_iter: int = 300):
    """Run Lloyd iterations from ``centers`` until the labelling is stable.

    Returns ``(centers, labels, sse, n_iter, sse_history)``. An emptied
    cluster is re-seeded at the point farthest from its current center.
    """
    k = centers.shape[0]
    centers = centers.copy()
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centers)
        new = d2.argmin(axis=1)  # lowest index wins ties
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            own = d2[np.arange(len(x)), labels]
            far = int(own.argmax())
            labels[far] = c
            d2[far] = np.inf
            d2[far, c] = 0.0
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    d2 = _sq_dists(x, centers)
    labels = d2.argmin(axis=1)
    sse = float(d2[np.arange(len(x)), labels].sum())
    return centers, labels, sse, it, history


def kmeans(points, k: int, restarts: int = 100, max_iter: int = 300, seed: int = 0) -> KMeansResult:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be an n x m matrix")
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        init = _plusplus(x, k, rng)
        centers, labels, sse, it, _ = lloyd(x, init, max_iter)
        # strict < keeps the lowest restart index on equal SSE
        if best is None or sse < best.sse:
            best = KMeansResult(centers, labels, sse, restarts, it)
    return best
