"""Final Position Clustering: oversample, k-means the endpoints, keep one real sample per cluster."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RolloutSample, SocialVAE, predict

MAX_SAMPLING_RATE = 50


@dataclass
class ClusterAssignment:
    final_positions: np.ndarray   # (n, 2)
    centroids: np.ndarray         # (K, 2)
    labels: np.ndarray            # (n,)
    representatives: np.ndarray   # (K,) sample index per cluster
    degenerate: bool = False      # fewer distinct endpoints than clusters


@dataclass
class PredictionSet:
    """K retained samples for one window; ``indices`` point into the drawn samples."""

    samples: RolloutSample        # arrays shaped (K, H, ...)
    indices: np.ndarray
    k_requested: int
    sampling_rate: int = 1
    clusters: ClusterAssignment | None = None


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dist(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a centre
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[0]) if len(free) else 0
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dist(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100,
           tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; returns ``(centroids, labels)``.

    An emptied cluster is re-seeded at the point farthest from its nearest
    centroid. Assignment ties go to the lowest cluster index.
    """
    points = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(max_iter):
        d2 = _sq_dist(points, centroids)
        labels = d2.argmin(axis=1)
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = points[members].mean(axis=0)
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            nearest = _sq_dist(points, new).min(axis=1)
            far = int(np.argmax(nearest))
            if nearest[far] == 0.0:
                break
            new[c] = points[far]
            labels = _sq_dist(points, new).argmin(axis=1)
        shift = np.sqrt(((new - centroids) ** 2).sum(-1)).max()
        centroids = new
        if shift <= tol:
            break
    labels = _sq_dist(points, centroids).argmin(axis=1)
    return centroids, labels


def cluster_final_positions(final_positions: np.ndarray, k: int, seed: int = 0,
                            max_iter: int = 100, tol: float = 1e-6) -> ClusterAssignment:
    """Cluster endpoints and pick the sample closest to each centroid.

    Points are clustered in a canonical (x, y, index) order so the result
    does not depend on the order samples were drawn in. Each sample is used at
    most once; an empty cluster takes the closest unused sample overall.
    """
    pts = np.asarray(final_positions, dtype=float)
    n = len(pts)
    if n < k:
        raise ValueError(f"need at least {k} samples, got {n}")
    order = np.lexsort((np.arange(n), pts[:, 1], pts[:, 0]))
    centroids, lab_sorted = kmeans(pts[order], k, seed, max_iter, tol)
    labels = np.empty(n, dtype=int)
    labels[order] = lab_sorted
    d = np.sqrt(_sq_dist(pts, centroids))
    used = np.zeros(n, dtype=bool)
    reps = np.empty(k, dtype=int)
    for c in range(k):
        cand = np.flatnonzero((labels == c) & ~used)
        if len(cand) == 0:
            cand = np.flatnonzero(~used)
        # lowest original index wins ties
        best = cand[np.lexsort((cand, d[cand, c]))[0]]
        reps[c] = best
        used[best] = True
    distinct = len(np.unique(pts, axis=0))
    return ClusterAssignment(pts, centroids, labels, reps, degenerate=distinct < k)


def fpc_select(samples: RolloutSample, k: int, seed: int = 0, sampling_rate: int | None = None,
               max_iter: int = 100, tol: float = 1e-6) -> PredictionSet:
    """Reduce ``n >= k`` samples of one window to ``k`` by clustering final positions."""
    n = len(samples)
    if n < k:
        raise ValueError(f"fpc_select needs at least {k} samples, got {n}")
    clusters = cluster_final_positions(samples.positions[:, -1], k, seed, max_iter, tol)
    idx = np.sort(clusters.representatives)
    return PredictionSet(samples.take(idx), idx, k, sampling_rate or max(1, n // k), clusters)


def sample_predictions(params: SocialVAE, data, k: int, rng: np.random.Generator,
                       mean_only: bool = False) -> PredictionSet:
    """``k`` independent rollouts for a single window, no clustering."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sample, _ = predict(params, data, k, rng, mean_only=mean_only)
    if len(sample) != 1:
        raise ValueError("sample_predictions expects a single window")
    return PredictionSet(sample.take(0), np.arange(k), k, 1)


def predict_with_fpc(params: SocialVAE, data, k: int, rate: int, rng: np.random.Generator,
                     seed: int = 0, mean_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Best ``k`` predicted positions per window after drawing ``k * rate`` samples.

    Returns ``(positions, indices)`` shaped (B, k, H, 2) and (B, k).
    With ``rate == 1`` the drawn samples are returned unchanged.
    """
    if not 1 <= rate <= MAX_SAMPLING_RATE:
        raise ValueError(f"sampling rate must be in [1, {MAX_SAMPLING_RATE}]")
    sample, _ = predict(params, data, k * rate, rng, mean_only=mean_only)
    B = len(sample)
    if rate == 1:
        return sample.positions, np.tile(np.arange(k), (B, 1))
    out = np.empty((B, k) + sample.positions.shape[2:])
    indices = np.empty((B, k), dtype=int)
    for b in range(B):
        sel = fpc_select(sample.take(b), k, seed, rate)
        out[b] = sel.samples.positions
        indices[b] = sel.indices
    return out, indices
