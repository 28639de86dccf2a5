"""PCA whitening and row-wise l2 normalization of feature matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric_core import ShapeError, eigh_symmetric, matmul


class WhiteningError(ValueError):
    pass


@dataclass
class WhiteningModel:
    mean: np.ndarray        # (d,)
    projection: np.ndarray  # (d, p), columns scaled by (lambda + eps)^-1/2
    eigenvalues: np.ndarray  # (p,)
    epsilon: float

    @property
    def out_dims(self) -> int:
        return self.projection.shape[1]


def default_out_dims(n: int, d: int, ceiling: int = 256) -> int:
    return max(1, min(ceiling, d, n - 1))


def fit_whitening(features, out_dims: int | None = None, epsilon: float = 1e-5) -> WhiteningModel:
    """Fit a PCA whitening transform keeping the ``out_dims`` leading components.

    The covariance uses the population (1/N) normalization.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise WhiteningError("fit_whitening needs a 2-D matrix with at least 2 rows")
    if not np.all(np.isfinite(x)):
        raise WhiteningError("fit_whitening: non-finite feature entries")
    n, d = x.shape
    if out_dims is None:
        out_dims = default_out_dims(n, d)
    if not 1 <= out_dims <= min(d, n - 1):
        raise WhiteningError(f"out_dims={out_dims} outside [1, {min(d, n - 1)}]")
    if epsilon < 0:
        raise WhiteningError("epsilon must be non-negative")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = matmul(xc.T, xc) / n
    cov = 0.5 * (cov + cov.T)
    lam, vecs = eigh_symmetric(cov)
    lam = np.maximum(lam[:out_dims], 0.0)
    vecs = vecs[:, :out_dims]
    damped = lam + epsilon
    if epsilon == 0.0 and np.any(lam <= 1e-12 * float(lam.max())) or np.any(damped == 0.0):
        raise WhiteningError("zero-variance direction with epsilon=0; whitening is singular")
    return WhiteningModel(mean=mean, projection=vecs / np.sqrt(damped), eigenvalues=lam, epsilon=epsilon)


def apply_whitening(model: WhiteningModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ShapeError(f"apply_whitening: expected {model.mean.shape[0]} columns, got {x.shape}")
    return (x - model.mean) @ model.projection


def l2_normalize(features):
    """Scale each nonzero row to unit norm.

    Returns ``(normalized, skipped)`` where ``skipped`` counts all-zero rows,
    which are passed through unchanged.
    """
    x = np.asarray(features, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=1))
    zero = norms == 0.0
    out = x.copy()
    out[~zero] /= norms[~zero, None]
    return out, int(zero.sum())
