"""Built-in numerical self-checks run by ``deepkmeans selfcheck``."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import gradcheck, network
from .kmeans import fit_kmeans
from .network import Layer, NetworkSpec
from .numeric_core import Rng
from .preprocess import apply_whitening, fit_whitening, l2_normalize
from .svm import lbfgs_minimize, quadratic_hinge_objective


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def strided_spec() -> NetworkSpec:
    layers = [Layer("conv", out=3, kernel=3, stride=2, pad=1), Layer("relu"),
              Layer("maxpool", kernel=2, stride=2), Layer("flatten"),
              Layer("fc", out=6), Layer("relu"), Layer("dropout", rate=0.3), Layer("fc", out=4)]
    return NetworkSpec("strided", (2, 7, 7), layers, 6, 4)


def check_gradients(seeds=(0, 1), tol: float = 1e-5) -> CheckResult:
    worst = 0.0
    for spec in (gradcheck.tiny_anet(), strided_spec()):
        for s in seeds:
            res = gradcheck.network_gradient_check(spec, s, backward_fn=network.backward)
            worst = max(worst, res["max_rel_error"])
    return CheckResult("gradient", worst < tol, f"max relative error {worst:.2e} (tol {tol:g})")


def check_whitening(tol: float = 1e-6) -> CheckResult:
    rng = Rng(3)
    mix = rng.normal((32, 32))
    x = rng.normal((1000, 32)) @ mix + 5.0
    z = apply_whitening(fit_whitening(x, 16, 0.0), x)
    cov = (z - z.mean(axis=0)).T @ (z - z.mean(axis=0)) / len(z)
    err = float(np.abs(cov - np.eye(16)).max())
    return CheckResult("whitening", err < tol, f"max |cov - I| {err:.2e} (tol {tol:g})")


def exhaustive_kmeans_optimum(f: np.ndarray, k: int):
    """Minimum reconstruction error over every labeling, via per-cluster top eigenvalues."""
    n = len(f)
    labelings = np.array(list(itertools.product(range(k), repeat=n)))
    onehot = (labelings[:, :, None] == np.arange(k)).astype(np.float64)
    scatter = np.einsum("mnk,nd,ne->mkde", onehot, f, f)
    top = np.linalg.eigvalsh(scatter)[..., -1]
    obj = float(np.sum(f * f)) - top.sum(axis=1)
    best = int(np.argmin(obj))
    return float(obj[best]), labelings[best]


def check_kmeans(instances: int = 40, slack: float = 1e-9) -> CheckResult:
    rng = Rng(5)
    worst_rise, worst_gap = 0.0, 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(1, 4))
        k = int(rng.integers(1, 3))
        f, _ = l2_normalize(rng.normal((n, d)))
        res = fit_kmeans(f, k, 50, 0.0, Rng(int(rng.integers(0, 1 << 30))))
        h = np.asarray(res.objective_history)
        if len(h) > 1:
            worst_rise = max(worst_rise, float(np.max(np.diff(h))))
        opt, labels = exhaustive_kmeans_optimum(f, k)
        warm = fit_kmeans(f, k, 1000, 0.0, Rng(1), init_labels=labels)
        worst_gap = max(worst_gap, abs(warm.codes.objective - opt))
    ok = worst_rise <= slack and worst_gap <= slack
    return CheckResult("kmeans", ok, f"max objective rise {worst_rise:.1e}, max gap to exhaustive optimum "
                                     f"{worst_gap:.1e} (slack {slack:g})")


def gradient_descent_oracle(xt: np.ndarray, y: np.ndarray, lam: float, steps: int) -> np.ndarray:
    """Plain gradient descent with step 1/L on the squared-hinge objective.

    ``xt`` is (B, N, D) for B independent problems, ``y`` is (B, N).
    """
    lips = 2.0 * lam + 2.0 * np.linalg.norm(xt, ord=2, axis=(1, 2)) ** 2
    w = np.zeros((xt.shape[0], xt.shape[2]))
    step = (1.0 / lips)[:, None]
    for _ in range(steps):
        m = np.maximum(0.0, 1.0 - y * np.einsum("bnd,bd->bn", xt, w))
        g = 2.0 * lam * w - 2.0 * np.einsum("bnd,bn->bd", xt, y * m)
        w -= step * g
    m = np.maximum(0.0, 1.0 - y * np.einsum("bnd,bd->bn", xt, w))
    return lam * np.sum(w * w, axis=1) + np.sum(m * m, axis=1)


def random_hinge_instances(count: int, n: int, d: int, seed: int):
    rng = Rng(seed)
    x = rng.normal((count, n, d))
    y = np.where(rng.uniform((count, n)) < 0.5, 1.0, -1.0)
    xt = np.concatenate([x, np.ones((count, n, 1))], axis=2)
    return x, xt, y


def check_lbfgs(instances: int = 5, steps: int = 20000, tol: float = 1e-4) -> CheckResult:
    x, xt, y = random_hinge_instances(instances, 20, 4, 11)
    oracle = gradient_descent_oracle(xt, y, 1.0, steps)
    worst = 0.0
    for b in range(instances):
        obj = lambda w, b=b: quadratic_hinge_objective(w, x[b], y[b], 1.0)
        _, val = lbfgs_minimize(obj, np.zeros(5))
        worst = max(worst, abs(val - oracle[b]) / abs(oracle[b]))
    return CheckResult("lbfgs", worst < tol, f"max relative gap to gradient descent {worst:.1e} (tol {tol:g})")


CHECKS = [check_gradients, check_whitening, check_kmeans, check_lbfgs]


def run_all(checks=None, out=print) -> bool:
    ok = True
    for check in checks or CHECKS:
        t0 = time.time()
        res = check()
        ok &= res.passed
        out(f"{res.name}={'pass' if res.passed else 'FAIL'} {res.detail} ({time.time() - t0:.1f}s)")
    return ok
