"""Random number generation and small dense linear-algebra kernels."""
from __future__ import annotations

import json
import math

import numpy as np


class ShapeError(ValueError):
    pass


class Rng:
    """Seedable generator; a thin handle around numpy's PCG64 uniform stream.

    Normal draws are produced with Box-Muller from the uniform stream so the
    sequence depends only on the base generator state.
    """

    def __init__(self, seed: int = 0):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        return normal_sample(self, n).reshape(shape) if n else np.zeros(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, salt: int) -> "Rng":
        """Independent child stream derived from the current state."""
        seed = int(self._gen.integers(0, 2**63 - 1)) ^ (salt * 0x9E3779B97F4A7C15 % 2**63)
        return Rng(seed)

    def get_state(self) -> str:
        return json.dumps(self._gen.bit_generator.state, sort_keys=True)

    def set_state(self, state: str) -> None:
        self._gen.bit_generator.state = json.loads(state)


def normal_sample(rng: Rng, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("normal_sample: empty request (n must be >= 1)")
    m = (n + 1) // 2
    u = rng.uniform(2 * m).reshape(m, 2)
    # 1 - u lies in (0, 1], keeping the log finite
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated in a fixed order over the inner index.

    Each entry equals ``sum(a[i, k] * b[k, j] for k in range(n))`` evaluated
    left to right, so results are identical to a naive triple loop.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def eigh_symmetric(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted descending
    and eigenvectors stored column-wise.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigh_symmetric: matrix must be square, got {a.shape}")
    n = a.shape[0]
    if n > 4096:
        raise ShapeError("eigh_symmetric: dimension above 4096")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > 1e-9 * scale:
        raise ShapeError("eigh_symmetric: matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    fro = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * max(fro, 1.0) or fro == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                diff = float(a[q, q] - a[p, p])
                if abs(diff) > 1e300 * abs(apq):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate columns then rows: A <- J^T A J
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
