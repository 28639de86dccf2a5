"""Run configuration and its ``key=value`` text format.

Optimizer, PCA and SVM defaults are lr 0.05, momentum 0.9, 256 PCA dimensions
and SVM regularization 1. Run length is desk-scale: 30 epochs, batch 64, k = 10.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "anet-mini"
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    dropout: float = 0.5
    k: int = 10
    pca_dims: int = 256          # ceiling; clipped to min(d, N - 1)
    pca_eps: float = 1e-5
    svm_lambda: float = 1.0
    seed: int = 0
    flip: bool = True
    crop_pad: int = 2
    stability_nmi: float = 0.95
    stability_window: int = 3
    stability_loss: float = 0.01
    feature_dim: int = 64
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-6
    kmeans_mode: str = "spherical"
    kmeans_warm_start: bool = False
    reinit_head: bool = True
    refit_whitening: bool = True
    svm_whiten: bool = False     # whiten SVM inputs with a model fit on the training features

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.k < 1 or self.pca_dims < 1:
            raise ConfigError("epochs, batch_size, k and pca_dims must be positive")
        if self.crop_pad < 0 or self.weight_decay < 0 or self.pca_eps < 0:
            raise ConfigError("crop_pad, weight_decay and pca_eps must be non-negative")
        if self.svm_lambda <= 0:
            raise ConfigError("svm_lambda must be > 0")
        if self.kmeans_mode not in ("spherical", "euclidean"):
            raise ConfigError("kmeans_mode must be 'spherical' or 'euclidean'")
        if self.stability_window < 1:
            raise ConfigError("stability_window must be >= 1")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


_TYPES = {f.name: {"int": int, "float": float, "str": str, "bool": bool}[f.type] for f in fields(TrainConfig)}


def parse_overrides(pairs: dict) -> dict:
    out = {}
    for key, raw in pairs.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, _TYPES[key], str(raw))
    return out


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return (base or TrainConfig()).with_overrides(**parse_overrides(pairs))


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(TrainConfig))
