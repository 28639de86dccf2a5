"""Central finite-difference checks for the network's backward pass."""
from __future__ import annotations

import numpy as np

from .network import NetworkSpec, anet_mini, backward, build_network, forward, softmax_cross_entropy
from .numeric_core import Rng

# Relative error is |a - b| / max(|a|, |b|, REL_FLOOR). Central differences with
# h = 1e-5 on an O(1) loss carry ~2e-11 absolute round-off, so gradients below
# the floor are judged on an absolute 1e-5 * REL_FLOOR = 1e-10 scale instead.
REL_FLOOR = 1e-5


def tiny_anet(input_size: int = 8, classes: int = 5) -> NetworkSpec:
    """anet-mini layout at gradient-check scale (about 1.5k parameters)."""
    return anet_mini((1, input_size, input_size), classes, feature_dim=16, channels=(4, 8))


def relative_error(a, b, floor: float = REL_FLOOR):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def network_gradient_check(spec: NetworkSpec, seed: int, batch: int = 3, h: float = 1e-5,
                           backward_fn=backward) -> dict:
    """Compare backprop against central differences for every parameter.

    Runs in train mode with a fixed dropout mask (the mask rng is re-seeded for
    every loss evaluation). Returns summary statistics.
    """
    rng = Rng(seed)
    params = build_network(spec, rng)
    for p in params.weights:
        if p is not None:
            p["b"][:] = 0.1 * rng.normal(p["b"].shape)
    x = rng.uniform((batch,) + spec.input_shape)
    y = rng.integers(0, spec.num_outputs, batch)
    mask_seed = seed + 7919

    def loss_at():
        logits, _ = forward(params, x, "train", Rng(mask_seed))
        return softmax_cross_entropy(logits, y)[0]

    logits, cache = forward(params, x, "train", Rng(mask_seed))
    _, g = softmax_cross_entropy(logits, y)
    grads = backward_fn(params, cache, g)
    worst = 0.0
    count = 0
    for i, p in enumerate(params.weights):
        if p is None:
            continue
        for key in ("W", "b"):
            flat = p[key].reshape(-1)
            analytic = grads[i][key].reshape(-1)
            numeric = np.empty_like(flat)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp = loss_at()
                flat[j] = orig - h
                lm = loss_at()
                flat[j] = orig
                numeric[j] = (lp - lm) / (2.0 * h)
            err = relative_error(analytic, numeric)
            worst = max(worst, float(err.max()))
            count += flat.size
    return {"seed": seed, "params": count, "max_rel_error": worst}
