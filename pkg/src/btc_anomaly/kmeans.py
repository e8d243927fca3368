"""Lloyd's k-means with k-means++ seeding, plus entropy-guided k selection.

k-means is the evaluation baseline, not an anomaly scorer: detected
outliers are judged by how far they sit from their cluster centroid
relative to the cluster's own radius (see evaluation.centroid_distance_ratios).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray  # k x n
    assignments: np.ndarray  # length m, values in [0, k)
    objective: float  # within-cluster sum of squares
    objective_history: tuple[float, ...]
    converged: bool


def _require_normalized(matrix: FeatureMatrix) -> np.ndarray:
    if not matrix.normalized:
        raise ValueError("expected a normalized feature matrix")
    return matrix.values


def _sq_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        (X * X).sum(axis=1)[:, None]
        - 2.0 * X @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)

def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(m)]
    d2 = _sq_distances(X, centroids[:1]).ravel()
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = X[rng.integers(m)]
            continue
        centroids[i] = X[rng.choice(m, p=d2 / total)]
        d2 = np.minimum(d2, _sq_distances(X, centroids[i : i + 1]).ravel())
    return centroids


def fit_kmeans(
    matrix: FeatureMatrix,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> KMeansModel:
    """Lloyd iterations until the assignment set is stable, the relative
    objective improvement drops below ``tol``, or ``max_iter`` is hit.

    Empty clusters are repaired by reseeding the centroid to the point
    currently farthest from its own centroid (and moving that point over),
    which keeps the objective non-increasing.
    """
    X = _require_normalized(matrix)
    m = X.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, k, rng)
    assignments = np.full(m, -1)
    history: list[float] = []
    prev_obj = math.inf
    converged = False

    for _ in range(max_iter):
        d2 = _sq_distances(X, centroids)
        new_assign = d2.argmin(axis=1)
        point_d2 = d2[np.arange(m), new_assign]
        while True:
            # moving a singleton can empty its old cluster, so re-scan; with
            # every point already on a centroid there is nothing to repair
            empties = np.flatnonzero(np.bincount(new_assign, minlength=k) == 0)
            if len(empties) == 0 or point_d2.max() == 0.0:
                break
            far = int(point_d2.argmax())
            new_assign[far] = empties[0]
            point_d2[far] = 0.0
        stable = bool((new_assign == assignments).all())
        assignments = new_assign
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
        obj = float(((X - centroids[assignments]) ** 2).sum())
        history.append(obj)
        if stable:
            converged = True
            break
        if prev_obj - obj < tol * max(abs(prev_obj), 1.0) and math.isfinite(prev_obj):
            converged = True
            break
        prev_obj = obj

    return KMeansModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        objective=history[-1],
        objective_history=tuple(history),
        converged=converged,
    )


def cluster_entropy(model: KMeansModel, matrix: FeatureMatrix, eps: float = 1e-6) -> float:
    """Size-weighted Gaussian differential-entropy estimate of the clustering.

    Returns H(weights) + sum_i w_i * H_i with w_i = m_i / m and
    H_i = (n/2) ln(2*pi*e) + 0.5 ln det(Sigma_i + eps*I) + n(n+1)/(4 m_i),
    Sigma_i the population covariance of cluster i.  Two guards keep the
    metric from rewarding over-splitting: the label-entropy term charges a
    split its ln(2)-ish, and the last term undoes the first-order Wishart
    bias of the log-det estimate, which otherwise shrinks with cluster size.
    """
    X = matrix.values
    m, n = X.shape
    const = 0.5 * n * math.log(2.0 * math.pi * math.e)
    total = 0.0
    for c in range(model.k):
        pts = X[model.assignments == c]
        if len(pts) == 0:
            continue
        w = len(pts) / m
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / len(pts)
        _, logdet = np.linalg.slogdet(cov + eps * np.eye(n))
        bias = n * (n + 1) / (4.0 * len(pts))
        total += w * (const + 0.5 * logdet + bias) - w * math.log(w)
    return total


def select_k(
    matrix: FeatureMatrix,
    k_min: int,
    k_max: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[int, list[tuple[int, float]]]:
    """Fit every k in [k_min, k_max] with the same seed and return the
    entropy-minimizing k (ties toward smaller k) plus the full curve."""
    if not 1 <= k_min <= k_max <= matrix.m:
        raise ValueError("need 1 <= k_min <= k_max <= m")
    curve: list[tuple[int, float]] = []
    best_k, best_e = k_min, math.inf
    for k in range(k_min, k_max + 1):
        model = fit_kmeans(matrix, k, seed=seed, max_iter=max_iter, tol=tol)
        e = cluster_entropy(model, matrix)
        curve.append((k, e))
        if e < best_e:
            best_k, best_e = k, e
    return best_k, curve


def write_entropy_csv(curve: list[tuple[int, float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,entropy\n")
        for k, e in curve:
            fh.write(f"{k},{e!r}\n")
