import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepkmeans import gradcheck, network
from deepkmeans.network import (GradientError, Layer, NetworkSpec, SpecError, anet_mini, augment_batch,
                                backward, build_network, extract_features, forward, make_spec, softmax,
                                softmax_cross_entropy, sgd_momentum_step, vnet_mini)
from deepkmeans.numeric_core import Rng
from deepkmeans.selfcheck import strided_spec


def zero_params(params):
    for p in params.weights:
        if p is not None:
            p["W"][:] = 0
            p["b"][:] = 0
    return params


def test_build_deterministic():
    a = build_network(anet_mini(), Rng(1))
    b = build_network(anet_mini(), Rng(1))
    for p, q in zip(a.weights, b.weights):
        if p is not None:
            assert np.array_equal(p["W"], q["W"]) and np.array_equal(p["b"], q["b"])


@pytest.mark.parametrize("preset", ["anet-mini", "vnet-mini"])
def test_forward_shape_finite(preset):
    params = build_network(make_spec(preset, num_outputs=10), Rng(0))
    logits, _ = forward(params, Rng(1).uniform((5, 1, 16, 16)))
    assert logits.shape == (5, 10) and np.all(np.isfinite(logits))


def test_init_variance_he():
    params = build_network(anet_mini(), Rng(0))
    convs = [i for i, l in enumerate(params.spec.layers) if l.kind == "conv"]
    i = convs[-1]
    w = params.weights[i]["W"]
    fan_in = w.shape[1] * w.shape[2] * w.shape[3]
    assert abs(w.var() / (2.0 / fan_in) - 1) < 0.2


def test_inconsistent_spec_rejected():
    with pytest.raises(SpecError):
        NetworkSpec("bad", (1, 4, 4), [Layer("fc", out=3)], 3, 3)
    with pytest.raises(SpecError):
        NetworkSpec("bad", (1, 4, 4), [Layer("conv", out=2, kernel=7), Layer("flatten"),
                                       Layer("fc", out=3), Layer("relu"), Layer("fc", out=2)], 3, 2)
    with pytest.raises(SpecError):
        make_spec("resnet")


def test_spec_json_roundtrip():
    s = vnet_mini()
    t = NetworkSpec.from_json(s.to_json())
    assert t.to_json() == s.to_json() and t.shapes == s.shapes


def test_zero_weights_zero_logits_and_features():
    params = zero_params(build_network(anet_mini(), Rng(0)))
    x = Rng(2).uniform((3, 1, 16, 16))
    assert np.array_equal(forward(params, x)[0], np.zeros((3, 10)))
    assert np.array_equal(extract_features(params, x), np.zeros((3, 64)))


def test_eval_deterministic():
    params = build_network(vnet_mini(), Rng(0))
    x = Rng(2).uniform((4, 1, 16, 16))
    assert np.array_equal(forward(params, x)[0], forward(params, x)[0])


def test_hand_convolution():
    spec = NetworkSpec("c", (1, 3, 3), [Layer("conv", out=1, kernel=3), Layer("flatten"),
                                        Layer("fc", out=1), Layer("relu"), Layer("fc", out=1)], 1, 1)
    params = build_network(spec, Rng(0))
    params.weights[0]["W"][:] = 1.0
    out, _ = network._conv_forward(np.ones((1, 1, 3, 3)), params.weights[0]["W"], np.zeros(1), 1, 0)
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9.0


def test_conv_matches_direct_loops():
    r = np.random.default_rng(0)
    x = r.normal(size=(2, 3, 6, 6))
    W = r.normal(size=(4, 3, 3, 3))
    b = r.normal(size=4)
    out, _ = network._conv_forward(x, W, b, 2, 1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * W[o]) + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_loss_examples():
    assert softmax_cross_entropy(np.zeros((1, 4)), [2])[0] == pytest.approx(np.log(4))
    loss, grad = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), [0])
    assert loss == pytest.approx(0.0, abs=1e-12) and np.all(np.isfinite(grad))


def test_loss_gradient_finite_differences():
    r = np.random.default_rng(0)
    z = r.normal(size=(3, 5))
    y = [0, 3, 4]
    _, g = softmax_cross_entropy(z, y)
    h = 1e-6
    num = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        e = np.zeros_like(z)
        e[idx] = h
        num[idx] = (softmax_cross_entropy(z + e, y)[0] - softmax_cross_entropy(z - e, y)[0]) / (2 * h)
    assert np.max(gradcheck.relative_error(g, num, 1e-4)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_softmax_rows_sum_to_one(seed):
    z = np.random.default_rng(seed).normal(size=(4, 6)) * 50
    assert np.abs(softmax(z).sum(axis=1) - 1).max() <= 1e-12


def test_backward_zero_grad():
    params = build_network(gradcheck.tiny_anet(), Rng(0))
    _, cache = forward(params, Rng(1).uniform((2, 1, 8, 8)), "train", Rng(3))
    for g in backward(params, cache, np.zeros((2, 5))):
        if g is not None:
            assert not np.any(g["W"]) and not np.any(g["b"])


@pytest.mark.parametrize("spec_fn", [gradcheck.tiny_anet, strided_spec,
                                     lambda: vnet_mini((1, 8, 8), 3, feature_dim=6, channels=(2, 3, 4))])
def test_gradient_check_every_layer_type(spec_fn):
    res = gradcheck.network_gradient_check(spec_fn(), seed=11)
    assert res["max_rel_error"] < 1e-5


def test_relative_error_floor_only_affects_tiny_gradients():
    assert gradcheck.relative_error(1.0, 1.0 + 1e-6)[()] == pytest.approx(1e-6, rel=1e-4)
    assert gradcheck.relative_error(0.0, 2e-11)[()] == pytest.approx(2e-6)


def test_duplicated_sample_doubles_gradient():
    params = build_network(gradcheck.tiny_anet(), Rng(0))
    x = Rng(1).uniform((1, 1, 8, 8))
    g = Rng(2).normal((1, 5))
    _, c1 = forward(params, x)
    single = backward(params, c1, g)
    _, c2 = forward(params, np.concatenate([x, x]))
    double = backward(params, c2, np.concatenate([g, g]))
    for s, d in zip(single, double):
        if s is not None:
            for key in ("W", "b"):
                assert np.allclose(d[key], 2 * s[key], rtol=1e-12, atol=1e-15)


def test_stale_cache_rejected():
    params = build_network(gradcheck.tiny_anet(), Rng(0))
    _, cache = forward(params, Rng(1).uniform((2, 1, 8, 8)))
    grads = backward(params, cache, np.ones((2, 5)))
    sgd_momentum_step(params, grads, 0.1, 0.0)
    with pytest.raises(ValueError, match="stale"):
        backward(params, cache, np.ones((2, 5)))


def scalar_params(w=0.0):
    spec = NetworkSpec("s", (1, 1, 1), [Layer("flatten"), Layer("fc", out=1), Layer("relu"),
                                        Layer("fc", out=1)], 1, 1)
    params = build_network(spec, Rng(0))
    params.weights[1]["W"][:] = w
    return params


def unit_grad(params, gw=1.0):
    return [None, {"W": np.full((1, 1), gw), "b": np.zeros(1)}, None,
            {"W": np.zeros((1, 1)), "b": np.zeros(1)}]


def test_sgd_examples():
    p = scalar_params(1.0)
    sgd_momentum_step(p, unit_grad(p), 0.1, 0.0, 0.0)
    assert p.weights[1]["W"][0, 0] == pytest.approx(0.9)
    p = scalar_params(0.0)
    sgd_momentum_step(p, unit_grad(p), 0.1, 0.9, 0.0)
    assert p.weights[1]["W"][0, 0] == pytest.approx(-0.1)
    sgd_momentum_step(p, unit_grad(p), 0.1, 0.9, 0.0)
    assert p.weights[1]["W"][0, 0] == pytest.approx(-0.29)
    p = scalar_params(0.7)
    sgd_momentum_step(p, unit_grad(p, 0.0), 0.1, 0.9, 0.0)
    assert p.weights[1]["W"][0, 0] == 0.7


def test_sgd_rejects_nonfinite():
    p = scalar_params(1.0)
    with pytest.raises(GradientError):
        sgd_momentum_step(p, unit_grad(p, np.nan), 0.1, 0.0)
    assert p.weights[1]["W"][0, 0] == 1.0


def test_one_step_lowers_loss_most_seeds():
    wins = 0
    for seed in range(20):
        params = build_network(gradcheck.tiny_anet(), Rng(seed))
        rng = Rng(seed + 100)
        x = rng.uniform((8, 1, 8, 8))
        y = rng.integers(0, 5, 8)
        logits, cache = forward(params, x)
        before, g = softmax_cross_entropy(logits, y)
        sgd_momentum_step(params, backward(params, cache, g), 1e-3, 0.0)
        after, _ = softmax_cross_entropy(forward(params, x)[0], y)
        wins += after < before
    assert wins >= 19


def test_dropout_expectation_matches_eval():
    spec = anet_mini((1, 8, 8), 4, feature_dim=32, channels=(4, 8))
    params = build_network(spec, Rng(0))
    d_idx = [i for i, l in enumerate(spec.layers) if l.kind == "dropout"][0]
    x = Rng(1).uniform((1, 1, 8, 8))
    eval_act, _ = network._run(params, x, False, None, stop=d_idx)
    rng = Rng(2)
    acc = np.zeros_like(eval_act)
    for _ in range(10_000):
        acc += network._run(params, x, True, rng, stop=d_idx)[0]
    mean = acc / 10_000
    assert np.linalg.norm(mean - eval_act) / np.linalg.norm(eval_act) < 0.02


def test_extract_features_shape_and_determinism():
    params = build_network(anet_mini(), Rng(0))
    x = Rng(3).uniform((100, 1, 16, 16))
    a = extract_features(params, x, batch_size=32)
    assert a.shape == (100, 64) and np.all(np.isfinite(a))
    assert np.array_equal(a, extract_features(params, x, batch_size=32))


def test_augment_identity_and_flip_involution():
    x = Rng(0).uniform((3, 1, 6, 6))
    assert np.array_equal(augment_batch(x, Rng(1), flip=False, crop_pad=0), x)
    flipped = x[..., ::-1]
    assert np.array_equal(flipped[..., ::-1], x)


def test_augment_offsets_uniform():
    n, size, p = 10_000, 16, 2
    img = (np.arange(size * size, dtype=np.float64).reshape(1, 1, size, size) + 1) / 1000.0
    out = augment_batch(np.repeat(img, n, axis=0), Rng(5), flip=False, crop_pad=p)
    assert out.shape == (n, 1, size, size)
    src = np.rint(out[:, 0, 8, 8] * 1000.0).astype(int) - 1
    oy, ox = src // size - 8 + p, src % size - 8 + p
    counts = np.zeros((2 * p + 1, 2 * p + 1))
    np.add.at(counts, (oy, ox), 1)
    expected = n / 25
    assert counts.sum() == n
    assert np.abs(counts - expected).max() < 5 * np.sqrt(expected)
