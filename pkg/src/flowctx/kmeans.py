"""Deterministic k-means (k-means++ seeding, Lloyd iterations)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusteringResult:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # (n,) cluster id per point
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; the bit stream is fixed across numpy releases."""
    return np.random.Generator(np.random.PCG64(seed))


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _assign(points, centroids):
    d2 = _sq_distances(points, centroids)
    labels = np.argmin(d2, axis=1)  # first minimum -> lowest cluster id
    return labels, d2[np.arange(len(points)), labels]


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.random() * n)]
    closest = _sq_distances(points, points[chosen]).ravel()
    for _ in range(1, k):
        cum = np.cumsum(closest)
        target = rng.random() * cum[-1]
        idx = int(np.searchsorted(cum, target, side="right"))
        idx = min(idx, n - 1)
        chosen.append(idx)
        closest = np.minimum(closest, _sq_distances(points, points[idx : idx + 1]).ravel())
    return points[chosen].copy()


def _update(points, labels, centroids, k):
    new = np.empty_like(centroids)
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        if counts[j]:
            new[j] = points[labels == j].mean(axis=0)
    empty = [j for j in range(k) if counts[j] == 0]
    if empty:
        # distance of every point to its (updated) own centroid
        dist = np.full(len(points), -1.0)
        for j in range(k):
            if counts[j]:
                members = labels == j
                diff = points[members] - new[j]
                dist[members] = np.einsum("nd,nd->n", diff, diff)
        for j in empty:
            far = int(np.argmax(dist))
            new[j] = points[far]
            dist[far] = -1.0
    return new


def _lloyd(points, centroids, max_iter, tol):
    k = len(centroids)
    labels, d = _assign(points, centroids)
    history = [float(d.sum())]
    iterations = 0
    for _ in range(max_iter):
        new = _update(points, labels, centroids, k)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        new_labels, d = _assign(points, centroids)
        history.append(float(d.sum()))
        iterations += 1
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break
        if shift < tol and len(np.unique(labels)) == k:
            break
    return centroids, labels, float(d.sum()), iterations, history


def kmeans_fit(
    points,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_init: int = 10,
) -> ClusteringResult:
    """Cluster ``points`` into ``k`` groups, keeping the best of ``n_init`` seeded runs.

    All restarts draw from one PCG64 stream seeded with ``seed``, so the
    result is a pure function of (points, k, seed, max_iter, tol, n_init).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("points must be an n x d matrix with d >= 1")
    n = len(X)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain non-finite values")
    distinct = len(np.unique(X, axis=0))
    if distinct < k:
        raise ValueError(f"only {distinct} distinct points for k={k}")

    rng = make_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = _kmeans_pp(X, k, rng)
        centroids, labels, inertia, iterations, history = _lloyd(X, init, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = ClusteringResult(centroids, labels, inertia, iterations, history)
    return best


def nearest_centroid(point, centroids) -> int:
    """Index of the closest centroid by Euclidean distance; ties go to the lowest id."""
    p = np.asarray(point, dtype=float).ravel()
    C = np.asarray(centroids, dtype=float)
    if C.ndim != 2 or len(C) == 0:
        raise ValueError("centroids must be a non-empty k x d matrix")
    if C.shape[1] != p.shape[0]:
        raise ValueError(f"dimension mismatch: point has {p.shape[0]}, centroids {C.shape[1]}")
    diff = C - p
    return int(np.argmin(np.einsum("kd,kd->k", diff, diff)))
