import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import normalized_mutual_info_score

from deepkmeans import dataio
from deepkmeans.config import TrainConfig
from deepkmeans.network import build_network
from deepkmeans.numeric_core import Rng
from deepkmeans.trainer import (TrainingError, cluster_features, cluster_step, nmi, run_pipeline, spec_for,
                                train_epoch)

SMALL = TrainConfig(epochs=3, batch_size=16, k=4, feature_dim=16, seed=1, lr=0.01)


@pytest.fixture(scope="module")
def small_data():
    return dataio.synth_dataset(4, 20, 8, 0.1, Rng(7))


def same_params(a, b):
    return all(p is None or (np.array_equal(p["W"], q["W"]) and np.array_equal(p["b"], q["b"]))
               for p, q in zip(a.weights, b.weights))


def test_nmi_examples():
    a = np.array([0, 0, 1, 1, 2, 2])
    assert nmi(a, a) == pytest.approx(1.0)
    assert nmi(a, np.array([2, 2, 0, 0, 1, 1])) == pytest.approx(1.0)
    assert nmi(np.zeros(4), np.zeros(4)) == 1.0
    assert nmi(np.zeros(4), np.array([0, 1, 0, 1])) == 0.0


def test_nmi_random_labelings_small():
    r = np.random.default_rng(0)
    for _ in range(20):
        assert nmi(r.integers(0, 10, 1000), r.integers(0, 10, 1000)) < 0.2


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_nmi_properties_and_sklearn_oracle(n, ka, kb, seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, ka, n), r.integers(0, kb, n)
    v = nmi(a, b)
    assert 0.0 <= v <= 1.0
    assert abs(v - nmi(b, a)) <= 1e-12
    perm = r.permutation(ka)
    assert abs(v - nmi(perm[a], b)) <= 1e-12
    if len(set(a)) > 1 and len(set(b)) > 1:
        ref = normalized_mutual_info_score(a, b, average_method="geometric")
        assert v == pytest.approx(ref, abs=1e-10)


def test_cluster_step_contract_and_determinism():
    images = Rng(0).uniform((120, 1, 16, 16))
    cfg = TrainConfig(k=10)
    params = build_network(spec_for(cfg, images.shape[1:]), Rng(1))
    a = cluster_step(params, images, cfg, Rng(2))
    b = cluster_step(params, images, cfg, Rng(2))
    assert a.labels.min() >= 0 and a.labels.max() < 10
    assert np.bincount(a.labels, minlength=10).min() >= 1 and a.min_cluster >= 1
    assert np.array_equal(a.labels, b.labels)


def test_cluster_constant_features_named_error():
    with pytest.raises(TrainingError, match="identical"):
        cluster_features(np.ones((10, 4)), SMALL, Rng(0))


def test_train_epoch_zero_lr_keeps_params(small_data):
    cfg = SMALL.with_overrides(lr=0.0)
    params = build_network(spec_for(cfg, small_data.images.shape[1:]), Rng(0))
    before = params.copy()
    _, loss = train_epoch(params, small_data.images, small_data.labels, cfg, Rng(1))
    assert np.isfinite(loss)
    assert same_params(before, params)


def test_train_epoch_deterministic(small_data):
    out = []
    for _ in range(2):
        params = build_network(spec_for(SMALL, small_data.images.shape[1:]), Rng(0))
        train_epoch(params, small_data.images, small_data.labels, SMALL, Rng(1))
        out.append(params)
    assert same_params(*out)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_epoch_nonfinite_loss_aborts(small_data):
    params = build_network(spec_for(SMALL, small_data.images.shape[1:]), Rng(0))
    params.weights[-1]["W"][:] = np.inf
    with pytest.raises(TrainingError, match="non-finite loss"):
        train_epoch(params, small_data.images, small_data.labels, SMALL, Rng(1))


def test_fixed_labels_loss_decreases(small_data):
    cfg = SMALL.with_overrides(lr=0.02)
    params = build_network(spec_for(cfg, small_data.images.shape[1:]), Rng(0))
    rng = Rng(1)
    losses = [train_epoch(params, small_data.images, small_data.labels, cfg, rng)[1] for _ in range(20)]
    assert losses[-1] < losses[0]


def test_frozen_pipeline_loss_trend(small_data):
    cfg = SMALL.with_overrides(epochs=20, lr=0.02)
    _, hist = run_pipeline(small_data.images, cfg, recluster=False)
    losses = np.array([h.loss for h in hist])
    slope = np.polyfit(np.arange(len(losses)), losses, 1)[0]
    assert len(hist) == 20 and slope < 0


def test_pipeline_one_epoch_contract(small_data, tmp_path):
    ck = tmp_path / "m.ufkm"
    met = tmp_path / "m.csv"
    _, hist = run_pipeline(small_data.images, SMALL.with_overrides(epochs=1), checkpoint_path=ck,
                           metrics_path=met)
    assert len(hist) == 1 and hist[0].nmi_prev is None
    assert "layer00.W" in dataio.load_checkpoint(ck).tensors
    assert len(dataio.read_metrics(met)) == 1


def test_pipeline_deterministic_and_labels_valid(small_data):
    seen = []
    cb = lambda p, rec, labels: seen.append(labels.copy())
    _, h1 = run_pipeline(small_data.images, SMALL, callback=cb)
    _, h2 = run_pipeline(small_data.images, SMALL)
    assert h1 == h2
    for labels in seen:
        assert labels.min() >= 0 and labels.max() < SMALL.k
        assert np.bincount(labels, minlength=SMALL.k).min() >= 1


def test_resume_matches_uninterrupted(small_data, tmp_path):
    cfg = SMALL.with_overrides(epochs=4)
    full_params, full = run_pipeline(small_data.images, cfg)
    ck = tmp_path / "half.ufkm"
    run_pipeline(small_data.images, cfg, checkpoint_path=ck, stop_after=2)
    params, resumed = run_pipeline(small_data.images, cfg, resume=dataio.load_checkpoint(ck))
    assert resumed == full
    assert same_params(params, full_params)
