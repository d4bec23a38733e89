"""Synthetic contaminated data with known outliers."""

import itertools

import numpy as np

from .data_io import Dataset


def separated_means(n_clusters, dim, min_separation, rng, spread=None, max_tries=10000):
    """Rejection-sample cluster centres with pairwise distance >= ``min_separation``."""
    spread = spread if spread is not None else min_separation
    means = []
    for _ in range(max_tries):
        cand = rng.uniform(-spread, spread, size=dim)
        if all(np.linalg.norm(cand - m) >= min_separation for m in means):
            means.append(cand)
            if len(means) == n_clusters:
                return np.array(means)
    raise RuntimeError("could not place separated cluster means")


def make_contaminated_clusters(n_inliers=900, n_outliers=100, n_clusters=3, dim=10,
                               min_separation=10.0, margin=1.0, seed=0):
    """Gaussian clusters with unit covariance plus uniform outliers.

    Outliers are drawn uniformly from the inliers' bounding box widened by
    ``margin`` on every side. Rows are shuffled; ``labels`` marks outliers.
    """
    rng = np.random.default_rng(seed)
    means = separated_means(n_clusters, dim, min_separation, rng)
    sizes = [n_inliers // n_clusters + (i < n_inliers % n_clusters) for i in range(n_clusters)]
    inliers = np.vstack([rng.normal(mu, 1.0, size=(s, dim)) for mu, s in zip(means, sizes)])
    lo = inliers.min(axis=0) - margin
    hi = inliers.max(axis=0) + margin
    outliers = rng.uniform(lo, hi, size=(n_outliers, dim))
    X = np.vstack([inliers, outliers])
    y = np.r_[np.zeros(n_inliers, dtype=np.int8), np.ones(n_outliers, dtype=np.int8)]
    order = rng.permutation(len(X))
    names = tuple(f"x{j + 1}" for j in range(dim))
    return Dataset(X[order], y[order], names, f"synthetic(seed={seed})")


def min_pairwise_distance(points):
    return min(np.linalg.norm(a - b) for a, b in itertools.combinations(points, 2))
