"""Alternating clustering / surrogate-label training loop.

Each epoch extracts features with the current network, whitens and
l2-normalizes them, clusters them with dictionary K-means, and then trains the
network for one pass with the cluster indices as class labels.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import dataio
from .config import TrainConfig, dump_config, parse_config_text
from .kmeans import Dictionary, fit_kmeans
from .network import (NetworkParams, NetworkSpec, augment_batch, backward, build_network,
                      extract_features, forward, make_spec, reinit_head, sgd_momentum_step,
                      softmax_cross_entropy)
from .numeric_core import Rng
from .preprocess import WhiteningModel, apply_whitening, default_out_dims, fit_whitening, l2_normalize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    kmeans_objective: float
    nmi_prev: float | None
    min_cluster: int
    max_cluster: int
    reseeds: int

    def as_row(self) -> dict:
        return asdict(self)


@dataclass
class ClusterStep:
    labels: np.ndarray
    kmeans_objective: float
    min_cluster: int
    max_cluster: int
    reseeds: int
    whitening: WhiteningModel
    dictionary: Dictionary


def nmi(a, b) -> float:
    """Normalized mutual information ``I(a;b) / sqrt(H(a) H(b))``.

    Two single-cluster partitions score 1; a single-cluster partition against a
    non-trivial one scores 0.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"nmi: label vectors differ in shape {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("nmi: empty label vectors")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    ka, kb = ia.max() + 1, ib.max() + 1
    if ka == 1 and kb == 1:
        return 1.0
    if ka == 1 or kb == 1:
        return 0.0
    n = a.size
    joint = np.bincount(ia * kb + ib, minlength=ka * kb).reshape(ka, kb) / n
    pa = np.bincount(ia) / n
    pb = np.bincount(ib) / n
    ha = -np.sum(pa * np.log(pa))
    hb = -np.sum(pb * np.log(pb))
    nz = joint > 0
    mi = np.sum(joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz]))
    return float(min(max(mi / np.sqrt(ha * hb), 0.0), 1.0))


def cluster_features(features, config: TrainConfig, rng: Rng, whitening: WhiteningModel | None = None,
                     init_labels=None):
    f = np.asarray(features, dtype=np.float64)
    if np.all(np.ptp(f, axis=0) == 0.0):
        raise TrainingError("clustering failed: features are identical for every image "
                            "(dead network or constant input), nothing to whiten or cluster")
    if whitening is None:
        dims = min(config.pca_dims, default_out_dims(f.shape[0], f.shape[1]))
        whitening = fit_whitening(f, dims, config.pca_eps)
    z, _ = l2_normalize(apply_whitening(whitening, f))
    res = fit_kmeans(z, config.k, config.kmeans_iters, config.kmeans_tol, rng,
                     mode=config.kmeans_mode, init_labels=init_labels, ensure_nonempty=True)
    counts = np.bincount(res.codes.labels, minlength=config.k)
    return ClusterStep(res.codes.labels, res.codes.objective, int(counts.min()), int(counts.max()),
                       res.reseeds, whitening, res.dictionary)


def cluster_step(params: NetworkParams, images, config: TrainConfig, rng: Rng,
                 whitening: WhiteningModel | None = None, prev_labels=None) -> ClusterStep:
    """Surrogate labels for every image from the current network's features.

    With ``config.kmeans_warm_start`` the K-means run starts from
    ``prev_labels`` rather than from normally distributed centroids.
    """
    feats = extract_features(params, images, max(config.batch_size, 256))
    init = prev_labels if config.kmeans_warm_start else None
    return cluster_features(feats, config, rng, whitening, init)


def train_epoch(params: NetworkParams, images, labels, config: TrainConfig, rng: Rng):
    """One shuffled pass of SGD with momentum; returns ``(params, mean_batch_loss)``."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    n = len(images)
    order = rng.permutation(n)
    losses = []
    for s in range(0, n, config.batch_size):
        idx = order[s:s + config.batch_size]
        xb = augment_batch(images[idx], rng, config.flip, config.crop_pad)
        logits, cache = forward(params, xb, "train", rng)
        loss, grad = softmax_cross_entropy(logits, labels[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at batch starting {s} (lr={config.lr}); "
                                "reduce the learning rate")
        grads = backward(params, cache, grad)
        sgd_momentum_step(params, grads, config.lr, config.momentum, config.weight_decay)
        losses.append(loss)
    return params, float(np.mean(losses))


def is_stable(history: list, config: TrainConfig) -> bool:
    w = config.stability_window
    if len(history) < w:
        return False
    recent = history[-w:]
    if any(r.nmi_prev is None or r.nmi_prev < config.stability_nmi for r in recent):
        return False
    first, last = recent[0].loss, recent[-1].loss
    return abs(last - first) < config.stability_loss * max(abs(first), 1e-12)


# ---------------------------------------------------------------- checkpoint glue

def params_to_checkpoint(params: NetworkParams, ck: dataio.Checkpoint) -> None:
    ck.texts["network_spec"] = params.spec.to_json()
    for i, (p, v) in enumerate(zip(params.weights, params.velocity)):
        if p is None:
            continue
        for key in ("W", "b"):
            ck.tensors[f"layer{i:02d}.{key}"] = p[key]
            ck.tensors[f"layer{i:02d}.v{key}"] = v[key]


def params_from_checkpoint(ck: dataio.Checkpoint) -> NetworkParams:
    spec = NetworkSpec.from_json(ck.texts["network_spec"])
    params = build_network(spec, Rng(0))
    for i, p in enumerate(params.weights):
        if p is None:
            continue
        for key in ("W", "b"):
            w = ck.tensors[f"layer{i:02d}.{key}"]
            if w.shape != p[key].shape:
                raise dataio.FormatError(f"layer {i} {key}: shape {w.shape} != spec {p[key].shape}")
            p[key] = w.copy()
            params.velocity[i][key] = ck.tensors[f"layer{i:02d}.v{key}"].copy()
    return params


def make_checkpoint(params, config, epoch, rng, history, labels=None, cluster=None) -> dataio.Checkpoint:
    ck = dataio.Checkpoint()
    params_to_checkpoint(params, ck)
    ck.texts["config"] = dump_config(config)
    ck.texts["state"] = json.dumps({"epoch": epoch, "rng": rng.get_state(),
                                    "history": [r.as_row() for r in history]}, sort_keys=True)
    if labels is not None:
        ck.tensors["labels"] = np.asarray(labels, dtype=np.float64)
    if cluster is not None:
        ck.tensors["whitening.mean"] = cluster.whitening.mean
        ck.tensors["whitening.projection"] = cluster.whitening.projection
        ck.tensors["whitening.eigenvalues"] = cluster.whitening.eigenvalues
        ck.texts["whitening.epsilon"] = repr(cluster.whitening.epsilon)
        ck.tensors["dictionary"] = cluster.dictionary.columns
    return ck


def whitening_from_checkpoint(ck: dataio.Checkpoint) -> WhiteningModel | None:
    if "whitening.mean" not in ck.tensors:
        return None
    return WhiteningModel(ck.tensors["whitening.mean"], ck.tensors["whitening.projection"],
                          ck.tensors["whitening.eigenvalues"], float(ck.texts["whitening.epsilon"]))


def config_from_checkpoint(ck: dataio.Checkpoint) -> TrainConfig:
    return parse_config_text(ck.texts["config"])


# ---------------------------------------------------------------- pipeline

def spec_for(config: TrainConfig, input_shape) -> NetworkSpec:
    return make_spec(config.preset, input_shape=tuple(input_shape), num_outputs=config.k,
                     feature_dim=config.feature_dim, dropout=config.dropout)


def run_pipeline(images, config: TrainConfig, spec: NetworkSpec | None = None,
                 checkpoint_path=None, metrics_path=None, resume: dataio.Checkpoint | None = None,
                 recluster: bool = True, stop_after: int | None = None, callback=None):
    """Train one network end to end.

    Returns ``(params, history)``. ``recluster=False`` freezes the epoch-0 labels,
    reducing the loop to plain supervised training on them. ``stop_after``
    halts after that many epochs (the checkpoint still records the position, so
    a later ``resume`` continues the identical trajectory).
    """
    images = np.asarray(images)
    if len(images) == 0:
        raise TrainingError("empty dataset")
    if spec is None:
        spec = spec_for(config, images.shape[1:])
    rng = Rng(config.seed)
    history: list = []
    labels = None
    whitening = None
    start = 0
    if resume is not None:
        params = params_from_checkpoint(resume)
        state = json.loads(resume.texts["state"])
        rng.set_state(state["rng"])
        history = [EpochRecord(**r) for r in state["history"]]
        start = state["epoch"]
        if "labels" in resume.tensors:
            labels = resume.tensors["labels"].astype(np.int64)
        if not config.refit_whitening:
            whitening = whitening_from_checkpoint(resume)
    else:
        params = build_network(spec, rng)
    cluster = None
    epoch = start
    try:
        for epoch in range(start, config.epochs):
            if stop_after is not None and epoch - start >= stop_after:
                break
            if recluster or labels is None:
                cluster = cluster_step(params, images, config, rng,
                                       None if config.refit_whitening else whitening, labels)
                whitening = cluster.whitening
                prev = labels
                labels = cluster.labels
                nmi_prev = None if prev is None else nmi(prev, labels)
                if config.reinit_head:
                    reinit_head(params, rng)
            else:
                nmi_prev = 1.0
            params, loss = train_epoch(params, images, labels, config, rng)
            if cluster is not None:
                stats = (cluster.kmeans_objective, cluster.min_cluster, cluster.max_cluster, cluster.reseeds)
            else:
                last = history[-1]
                stats = (last.kmeans_objective, last.min_cluster, last.max_cluster, last.reseeds)
            rec = EpochRecord(epoch, loss, stats[0], nmi_prev, stats[1], stats[2], stats[3])
            history.append(rec)
            log.info("epoch %d loss %.4f objective %.4f nmi_prev %s", epoch, loss,
                     rec.kmeans_objective, nmi_prev)
            if metrics_path is not None:
                dataio.append_metrics(rec, metrics_path)
            if callback is not None:
                callback(params, rec, labels)
            epoch += 1
            if recluster and is_stable(history, config):
                log.info("clustering and loss stable after epoch %d", epoch - 1)
                break
    except Exception as exc:
        if isinstance(exc, TrainingError):
            exc.history = history
            raise
        raise TrainingError(f"pipeline aborted at epoch {epoch}: {exc}", history) from exc
    if checkpoint_path is not None:
        ck = make_checkpoint(params, config, epoch, rng, history, labels, cluster)
        dataio.save_checkpoint(ck, checkpoint_path)
    return params, history
