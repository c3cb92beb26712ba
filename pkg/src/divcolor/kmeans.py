"""Lloyd's k-means with k-means++ seeding."""

from __future__ import annotations

import numpy as np

from .errors import UsageError


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    n = len(points)
    if not 1 <= k <= n:
        raise UsageError(f"cannot pick {k} centres from {n} points")
    centers = [points[rng.integers(n)]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a centre already
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 50) -> tuple[np.ndarray, np.ndarray, int]:
    """Alternate assignment and centroid updates until labels stop changing.

    Empty clusters keep their previous centre.  Returns (centres, labels,
    iterations run).
    """
    points = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    centers = np.array(centers, dtype=np.float64)
    labels = assign(points, centers)
    for it in range(1, max_iter + 1):
        for j in range(len(centers)):
            members = points[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        new = assign(points, centers)
        if np.array_equal(new, labels):
            return centers, labels, it
        labels = new
    return centers, labels, max_iter


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(len(points), -1)
    centers, labels, _ = lloyd(flat, kmeans_plus_plus(flat, k, rng), max_iter)
    return centers.reshape((k,) + points.shape[1:]), labels
