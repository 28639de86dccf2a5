"""Small convolutional networks with hand-written backpropagation.

Two presets follow the conv-stages -> fully connected feature layer ->
classifier head pattern: ``anet-mini`` (few stages, 5x5 kernels) and
``vnet-mini`` (stacked 3x3 pairs). Everything runs in float64 on numpy.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numeric_core import Rng, ShapeError


class SpecError(ValueError):
    pass


class GradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Layer:
    kind: str  # conv | relu | maxpool | flatten | fc | dropout
    out: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    rate: float = 0.0


@dataclass
class NetworkSpec:
    name: str
    input_shape: tuple
    layers: list
    feature_dim: int
    num_outputs: int

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.layers = [lay if isinstance(lay, Layer) else Layer(**lay) for lay in self.layers]
        self.shapes = _infer_shapes(self)
        self.feature_index = _feature_index(self)

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name, "input_shape": list(self.input_shape),
            "layers": [asdict(lay) for lay in self.layers],
            "feature_dim": self.feature_dim, "num_outputs": self.num_outputs,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        d = json.loads(text)
        return cls(d["name"], tuple(d["input_shape"]), d["layers"], d["feature_dim"], d["num_outputs"])


def _infer_shapes(spec: NetworkSpec) -> list:
    """Output shape after each layer; raises SpecError if the chain is inconsistent."""
    shape = spec.input_shape
    if len(shape) != 3 or min(shape) < 1:
        raise SpecError(f"input shape must be (C, H, W), got {shape}")
    shapes = []
    for i, lay in enumerate(spec.layers):
        if lay.kind == "conv":
            if len(shape) != 3:
                raise SpecError(f"layer {i}: conv after flatten")
            c, h, w = shape
            ho = (h + 2 * lay.pad - lay.kernel) // lay.stride + 1
            wo = (w + 2 * lay.pad - lay.kernel) // lay.stride + 1
            if lay.kernel < 1 or lay.stride < 1 or lay.out < 1 or ho < 1 or wo < 1:
                raise SpecError(f"layer {i}: invalid conv geometry for input {shape}")
            shape = (lay.out, ho, wo)
        elif lay.kind == "maxpool":
            if len(shape) != 3:
                raise SpecError(f"layer {i}: maxpool after flatten")
            if lay.kernel != lay.stride:
                raise SpecError(f"layer {i}: only non-overlapping pooling (size == stride) is supported")
            c, h, w = shape
            if h < lay.kernel or w < lay.kernel:
                raise SpecError(f"layer {i}: pooling window larger than input {shape}")
            shape = (c, h // lay.kernel, w // lay.kernel)
        elif lay.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif lay.kind == "fc":
            if len(shape) != 1:
                raise SpecError(f"layer {i}: fc needs a flattened input")
            if lay.out < 1:
                raise SpecError(f"layer {i}: fc width must be positive")
            shape = (lay.out,)
        elif lay.kind in ("relu", "dropout"):
            if lay.kind == "dropout" and not 0.0 <= lay.rate < 1.0:
                raise SpecError(f"layer {i}: dropout rate must lie in [0, 1)")
        else:
            raise SpecError(f"layer {i}: unknown layer kind {lay.kind!r}")
        shapes.append(shape)
    if not spec.layers or spec.layers[-1].kind != "fc" or shapes[-1] != (spec.num_outputs,):
        raise SpecError("network must end in a fc head with num_outputs units")
    return shapes


def _feature_index(spec: NetworkSpec) -> int:
    """Index of the layer whose output is the feature vector.

    That is the last fc before the head, or the relu directly following it.
    """
    fcs = [i for i, lay in enumerate(spec.layers) if lay.kind == "fc"]
    if len(fcs) < 2:
        raise SpecError("network needs a fc feature layer before the head")
    idx = fcs[-2]
    if spec.shapes[idx] != (spec.feature_dim,):
        raise SpecError(f"feature layer width {spec.shapes[idx]} != feature_dim {spec.feature_dim}")
    if idx + 1 < len(spec.layers) and spec.layers[idx + 1].kind == "relu":
        idx += 1
    return idx


def anet_mini(input_shape=(1, 16, 16), num_outputs=10, feature_dim=64, channels=(16, 32),
              dropout=0.5) -> NetworkSpec:
    c1, c2 = channels
    layers = [
        Layer("conv", out=c1, kernel=5, pad=2), Layer("relu"), Layer("maxpool", kernel=2, stride=2),
        Layer("conv", out=c2, kernel=5, pad=2), Layer("relu"), Layer("maxpool", kernel=2, stride=2),
        Layer("flatten"),
        Layer("fc", out=feature_dim), Layer("relu"), Layer("dropout", rate=dropout),
        Layer("fc", out=num_outputs),
    ]
    return NetworkSpec("anet-mini", input_shape, layers, feature_dim, num_outputs)


def vnet_mini(input_shape=(1, 16, 16), num_outputs=10, feature_dim=64, channels=(8, 16, 32),
              dropout=0.5) -> NetworkSpec:
    layers = []
    for c in channels:
        layers += [Layer("conv", out=c, kernel=3, pad=1), Layer("relu"),
                   Layer("conv", out=c, kernel=3, pad=1), Layer("relu"),
                   Layer("maxpool", kernel=2, stride=2)]
    layers += [Layer("flatten"), Layer("fc", out=feature_dim), Layer("relu"),
               Layer("dropout", rate=dropout), Layer("fc", out=num_outputs)]
    return NetworkSpec("vnet-mini", input_shape, layers, feature_dim, num_outputs)


PRESETS = {"anet-mini": anet_mini, "vnet-mini": vnet_mini}


def make_spec(preset: str, **kwargs) -> NetworkSpec:
    try:
        return PRESETS[preset](**kwargs)
    except KeyError:
        raise SpecError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class NetworkParams:
    spec: NetworkSpec
    weights: list   # per layer: {"W": ..., "b": ...} or None
    velocity: list
    version: int = 0

    def count(self) -> int:
        return sum(p["W"].size + p["b"].size for p in self.weights if p is not None)

    def copy(self) -> "NetworkParams":
        dup = lambda ps: [None if p is None else {k: v.copy() for k, v in p.items()} for p in ps]
        return NetworkParams(self.spec, dup(self.weights), dup(self.velocity), self.version)


def _fan_in(spec: NetworkSpec, i: int) -> int:
    prev = spec.input_shape if i == 0 else spec.shapes[i - 1]
    lay = spec.layers[i]
    if lay.kind == "conv":
        return prev[0] * lay.kernel * lay.kernel
    return prev[0]


def _init_layer(spec: NetworkSpec, i: int, rng: Rng) -> dict:
    lay = spec.layers[i]
    prev = spec.input_shape if i == 0 else spec.shapes[i - 1]
    fan_in = _fan_in(spec, i)
    head = i == len(spec.layers) - 1
    std = np.sqrt((1.0 if head else 2.0) / fan_in)
    if lay.kind == "conv":
        shape = (lay.out, prev[0], lay.kernel, lay.kernel)
    else:
        shape = (lay.out, prev[0])
    return {"W": std * rng.normal(shape), "b": np.zeros(lay.out)}


def build_network(spec: NetworkSpec, rng: Rng) -> NetworkParams:
    weights, velocity = [], []
    for i, lay in enumerate(spec.layers):
        if lay.kind in ("conv", "fc"):
            p = _init_layer(spec, i, rng)
            weights.append(p)
            velocity.append({k: np.zeros_like(v) for k, v in p.items()})
        else:
            weights.append(None)
            velocity.append(None)
    return NetworkParams(spec, weights, velocity)


def reinit_head(params: NetworkParams, rng: Rng) -> None:
    """Fresh classifier head (weights and velocity), in place."""
    i = len(params.spec.layers) - 1
    params.weights[i] = _init_layer(params.spec, i, rng)
    params.velocity[i] = {k: np.zeros_like(v) for k, v in params.weights[i].items()}
    params.version += 1


# ---------------------------------------------------------------- layer kernels

def _conv_forward(x, W, b, stride, pad):
    n, c = x.shape[:2]
    f, _, k, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ W.reshape(f, -1).T + b
    return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2), (cols, xp.shape)


def _conv_backward(dout, W, cache, stride, pad):
    cols, xp_shape = cache
    n, f, ho, wo = dout.shape
    c, k = W.shape[1], W.shape[2]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dW = (dmat.T @ cols).reshape(W.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ W.reshape(f, -1)).reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if pad:
        dxp = dxp[:, :, pad:xp_shape[2] - pad, pad:xp_shape[3] - pad]
    return np.ascontiguousarray(dxp), dW, db


def _pool_forward(x, s):
    n, c, h, w = x.shape
    ho, wo = h // s, w // s
    r = x[:, :, :ho * s, :wo * s].reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5)
    r = r.reshape(n, c, ho, wo, s * s)
    arg = np.argmax(r, axis=-1)
    out = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def _pool_backward(dout, s, cache):
    arg, shape = cache
    n, c, h, w = shape
    ho, wo = dout.shape[2], dout.shape[3]
    dr = np.zeros((n, c, ho, wo, s * s))
    np.put_along_axis(dr, arg[..., None], dout[..., None], axis=-1)
    dr = dr.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
    dx = np.zeros(shape)
    dx[:, :, :ho * s, :wo * s] = dr
    return dx


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardCache:
    train: bool
    version: int
    inputs: list = field(default_factory=list)
    aux: list = field(default_factory=list)


def _run(params: NetworkParams, x, train: bool, rng: Rng | None, stop: int | None = None):
    spec = params.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match input {spec.input_shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("forward: non-finite input")
    if train and rng is None and any(l.kind == "dropout" and l.rate > 0 for l in spec.layers):
        raise ValueError("forward: train mode needs an rng for dropout masks")
    cache = ForwardCache(train, params.version)
    last = len(spec.layers) - 1 if stop is None else stop
    for i, lay in enumerate(spec.layers[:last + 1]):
        cache.inputs.append(x)
        aux = None
        if lay.kind == "conv":
            p = params.weights[i]
            x, aux = _conv_forward(x, p["W"], p["b"], lay.stride, lay.pad)
        elif lay.kind == "relu":
            aux = x > 0
            x = x * aux
        elif lay.kind == "maxpool":
            x, aux = _pool_forward(x, lay.kernel)
        elif lay.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif lay.kind == "fc":
            p = params.weights[i]
            x = x @ p["W"].T + p["b"]
        elif lay.kind == "dropout":
            if train and lay.rate > 0:
                keep = 1.0 - lay.rate
                aux = (rng.uniform(x.shape) < keep) / keep
                x = x * aux
        cache.aux.append(aux)
    return x, cache


def forward(params: NetworkParams, batch, mode: str = "eval", rng: Rng | None = None):
    """Logits for a batch; ``mode`` is ``"train"`` (dropout active) or ``"eval"``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return _run(params, batch, mode == "train", rng)


def backward(params: NetworkParams, cache: ForwardCache, grad_logits) -> list:
    """Gradients of the loss w.r.t. every parameter, given d(loss)/d(logits)."""
    spec = params.spec
    if cache.version != params.version or len(cache.inputs) != len(spec.layers):
        raise ValueError("backward: stale or mismatched forward cache")
    g = np.asarray(grad_logits, dtype=np.float64)
    n = cache.inputs[0].shape[0]
    if g.shape != (n, spec.num_outputs):
        raise ShapeError(f"grad_logits shape {g.shape} != {(n, spec.num_outputs)}")
    grads = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        lay = spec.layers[i]
        x = cache.inputs[i]
        aux = cache.aux[i]
        if lay.kind == "conv":
            p = params.weights[i]
            g, dW, db = _conv_backward(g, p["W"], aux, lay.stride, lay.pad)
            grads[i] = {"W": dW, "b": db}
        elif lay.kind == "relu":
            g = g * aux
        elif lay.kind == "maxpool":
            g = _pool_backward(g, lay.kernel, aux)
        elif lay.kind == "flatten":
            g = g.reshape(x.shape)
        elif lay.kind == "fc":
            p = params.weights[i]
            grads[i] = {"W": g.T @ x, "b": g.sum(axis=0)}
            g = g @ p["W"]
        elif lay.kind == "dropout":
            if aux is not None:
                g = g * aux
    return grads


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    n, k = z.shape
    if y.shape != (n,) or np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must be {n} integers in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsum - shifted[np.arange(n), y]))
    grad = softmax(z)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def sgd_momentum_step(params: NetworkParams, grads: list, lr: float, momentum: float,
                      weight_decay: float = 0.0) -> NetworkParams:
    """In-place momentum update; weight decay applies to weights, not biases."""
    for g in grads:
        if g is not None and not all(np.all(np.isfinite(v)) for v in g.values()):
            raise GradientError("non-finite gradient; update rejected")
    for p, v, g in zip(params.weights, params.velocity, grads):
        if p is None:
            continue
        v["W"] *= momentum
        v["W"] += g["W"] + weight_decay * p["W"]
        p["W"] -= lr * v["W"]
        v["b"] *= momentum
        v["b"] += g["b"]
        p["b"] -= lr * v["b"]
    params.version += 1
    return params


def extract_features(params: NetworkParams, images, batch_size: int = 256) -> np.ndarray:
    """Eval-mode output of the feature layer for every image."""
    images = np.asarray(images)
    spec = params.spec
    if images.ndim != 4 or images.shape[1:] != spec.input_shape:
        raise ShapeError(f"images shape {images.shape} does not match input {spec.input_shape}")
    out = np.empty((images.shape[0], spec.feature_dim))
    for s in range(0, images.shape[0], batch_size):
        feats, _ = _run(params, images[s:s + batch_size], False, None, stop=spec.feature_index)
        out[s:s + batch_size] = feats
    return out


def augment_batch(images, rng: Rng, flip: bool = True, crop_pad: int = 2) -> np.ndarray:
    """Random horizontal flips and zero-padded random crops, per image."""
    if crop_pad < 0:
        raise ValueError("crop_pad must be >= 0")
    x = np.array(images, dtype=np.float64)
    n, _, h, w = x.shape
    if flip:
        mask = rng.uniform(n) < 0.5
        x[mask] = x[mask][..., ::-1]
    if crop_pad > 0:
        p = crop_pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        offs = rng.integers(0, 2 * p + 1, size=(n, 2))
        for i in range(n):
            oy, ox = offs[i]
            x[i] = xp[i, :, oy:oy + h, ox:ox + w]
    return x
