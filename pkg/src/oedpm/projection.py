"""Random subspaces: dimension sampling, orthonormal random projections."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError

_COLLAPSE_TOL = 1e-12
_MAX_REDRAWS = 100


def subspace_dim_bounds(p):
    """Inclusive ``(low, high)`` range of subspace dimensions for ``p`` features.

    Both ends are floored: ``floor(min(p, 2 + sqrt(p)/2))`` and
    ``floor(min(p, 2 + sqrt(p)))``.
    """
    if p < 1:
        raise UsageError(f"p must be >= 1, got {p}")
    high = math.floor(min(p, 2.0 + math.sqrt(p)))
    low = max(1, math.floor(min(p, 2.0 + math.sqrt(p) / 2.0)))
    return min(low, high), high


def sample_subspace_dim(p, rng):
    """Draw a subspace dimension uniformly from :func:`subspace_dim_bounds`."""
    low, high = subspace_dim_bounds(p)
    return int(rng.integers(low, high, endpoint=True))


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """A ``source_dim x target_dim`` matrix with orthonormal columns."""

    entries: np.ndarray
    source_dim: int
    target_dim: int
    seed: int | None = None

    def __post_init__(self):
        self.entries.setflags(write=False)

    @classmethod
    def identity(cls, p):
        return cls(np.eye(p), p, p)


def generate_projection(p, d, rng, seed=None):
    """Uniform(-1, 1) random matrix with columns orthonormalised by modified Gram-Schmidt.

    A column whose residual norm falls below 1e-12 during orthogonalisation is
    redrawn from ``rng`` (at most 100 times per column).

    Parameters
    ----------
    p, d : int
        Source and target dimensions, ``1 <= d <= p``.
    rng : numpy.random.Generator
    seed : int, optional
        Recorded on the result for provenance only.
    """
    if p < 1 or d < 1:
        raise UsageError(f"dimensions must be positive, got p={p}, d={d}")
    if d > p:
        raise UsageError(f"target dimension {d} exceeds source dimension {p}")

    R = rng.uniform(-1.0, 1.0, size=(p, d))
    for j in range(d):
        for _ in range(_MAX_REDRAWS + 1):
            v = R[:, j].copy()
            for i in range(j):
                v -= (R[:, i] @ v) * R[:, i]
            norm = np.linalg.norm(v)
            if norm >= _COLLAPSE_TOL:
                R[:, j] = v / norm
                break
            R[:, j] = rng.uniform(-1.0, 1.0, size=p)
        else:
            raise NumericError(f"column {j} collapsed after {_MAX_REDRAWS} redraws")
    return ProjectionMatrix(R, p, d, seed)


def project(data, R):
    """Row-wise projection ``data @ R.entries``."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[None, :]
    if data.shape[1] != R.source_dim:
        raise UsageError(
            f"data has {data.shape[1]} columns but projection expects {R.source_dim}")
    return data @ R.entries
