"""One-vs-all linear SVM with the squared hinge loss, trained with L-BFGS."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .numeric_core import ShapeError

log = logging.getLogger(__name__)


@dataclass
class SvmModel:
    weights: np.ndarray  # (C, d + 1); last column multiplies a constant 1
    regularization: float = 1.0

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dims(self) -> int:
        return self.weights.shape[1] - 1


def augment(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def quadratic_hinge_objective(w, features, binary_labels, lam: float, augmented: bool = False):
    """``lam * ||w||^2 + sum_i max(0, 1 - y_i w.x_i)^2`` and its gradient.

    ``features`` are augmented with a trailing 1 unless ``augmented`` is set.
    """
    if lam <= 0:
        raise ValueError("regularization must be > 0")
    xt = np.asarray(features, dtype=np.float64) if augmented else augment(features)
    y = np.asarray(binary_labels, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if xt.shape[1] != w.shape[0] or xt.shape[0] != y.shape[0]:
        raise ShapeError(f"objective: w {w.shape}, features {xt.shape}, labels {y.shape}")
    margin = np.maximum(0.0, 1.0 - y * (xt @ w))
    value = lam * float(w @ w) + float(margin @ margin)
    grad = 2.0 * lam * w - 2.0 * (xt.T @ (y * margin))
    return value, grad


def lbfgs_minimize(objective, w0, max_iters: int = 200, memory: int = 10, step_init: float = 0.1,
                   gtol: float = 1e-6, c1: float = 1e-4, backtrack: float = 0.5,
                   max_backtracks: int = 60, trace: list | None = None):
    """Limited-memory BFGS with an Armijo backtracking line search.

    ``objective(w)`` returns ``(value, gradient)``. The first iteration moves
    along the negative gradient with trial step ``step_init``; later iterations
    try the unit step on the two-loop quasi-Newton direction. Returns
    ``(w, value)``. If ``trace`` is given, every accepted objective value is
    appended to it.
    """
    x = np.array(w0, dtype=np.float64)
    f, g = objective(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    if trace is not None:
        trace.append(f)
    pairs: deque = deque(maxlen=memory)
    for it in range(max_iters):
        if np.max(np.abs(g)) < gtol:
            break
        d = _two_loop(g, pairs)
        gd = float(g @ d)
        if gd >= 0.0:
            pairs.clear()
            d = -g
            gd = -float(g @ g)
        t = step_init if not pairs else 1.0
        accepted = False
        for _ in range(max_backtracks):
            xn = x + t * d
            fn, gn = objective(xn)
            if not np.isfinite(fn) or not np.all(np.isfinite(gn)):
                log.warning("lbfgs: non-finite objective in line search; returning last iterate")
                return x, f
            if fn <= f + c1 * t * gd:
                accepted = True
                break
            t *= backtrack
        if not accepted:
            break
        s = xn - x
        yv = gn - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(yv @ yv):
            pairs.append((s, yv, 1.0 / sy))
        x, f, g = xn, fn, gn
        if trace is not None:
            trace.append(f)
    return x, f


def _two_loop(g, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def fit_one_vs_all(features, labels, num_classes: int, lam: float = 1.0, max_iters: int = 200,
                   memory: int = 10, step_init: float = 0.1) -> SvmModel:
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] < 2 or labels.shape != (x.shape[0],):
        raise ShapeError(f"fit_one_vs_all: features {x.shape}, labels {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    xt = augment(x)
    W = np.zeros((num_classes, xt.shape[1]))
    for c in range(num_classes):
        y = np.where(labels == c, 1.0, -1.0)
        if not np.any(y > 0):
            log.warning("class %d has no training samples; fitting against all-negative data", c)
        obj = lambda w, y=y: quadratic_hinge_objective(w, xt, y, lam, augmented=True)
        W[c], _ = lbfgs_minimize(obj, np.zeros(xt.shape[1]), max_iters, memory, step_init)
    return SvmModel(W, lam)


def decision_scores(model: SvmModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dims:
        raise ShapeError(f"decision_scores: features {x.shape} vs model dims {model.dims}")
    return augment(x) @ model.weights.T


def predict_from_scores(scores) -> np.ndarray:
    return np.argmax(np.asarray(scores), axis=1)


def predict(model: SvmModel, features) -> np.ndarray:
    """Arg-max class per row; ties go to the lowest class index."""
    return predict_from_scores(decision_scores(model, features))
