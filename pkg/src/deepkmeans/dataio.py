"""Datasets, synthetic image generation, tensor files, checkpoints and metrics CSV.

File formats (all little-endian):

``.uft``       b"UFT1", u32 rank, rank x u32 dims, float32 values (row-major).
checkpoint     b"UFKM", u32 version, u32 section count, then per section:
               u32 name length, UTF-8 name, u8 kind (0 = float64 tensor,
               1 = UTF-8 text), u64 payload length, payload. A float64 tensor
               payload is b"UFD1", u32 rank, dims, float64 values.
labels.csv     header ``index,label``, zero-based rows.
"""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .numeric_core import Rng

UFT_MAGIC = b"UFT1"
UFD_MAGIC = b"UFD1"
CKPT_MAGIC = b"UFKM"
CKPT_VERSION = 1
METRICS_HEADER = ["epoch", "loss", "kmeans_objective", "nmi_prev", "min_cluster", "max_cluster", "reseeds"]
ARCHETYPES = ["hstripes", "vstripes", "disk", "checker", "diagbar", "ring", "corner", "dots"]


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray                 # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray | None = None
    class_count: int | None = None

    def __post_init__(self):
        if self.images.ndim != 4:
            raise FormatError(f"images must be N x C x H x W, got shape {self.images.shape}")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise FormatError("pixel values outside [0, 1]")
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise FormatError(f"label count {len(self.labels)} != image count {len(self.images)}")
            if self.class_count is None:
                self.class_count = int(self.labels.max()) + 1 if len(self.labels) else 0
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
                raise FormatError("labels outside [0, class_count)")

    def __len__(self):
        return len(self.images)


# ---------------------------------------------------------------- tensors

def _encode_tensor(arr: np.ndarray, magic: bytes, dtype: str) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=dtype)
    head = magic + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _decode_tensor(buf: bytes, magic: bytes, dtype: str, what: str) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != magic:
        raise FormatError(f"{what}: bad magic {buf[:4]!r}, expected {magic!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + 4 * rank:
        raise FormatError(f"{what}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    item = np.dtype(dtype).itemsize
    expected = 8 + 4 * rank + item * int(np.prod(dims, dtype=np.int64))
    if len(buf) != expected:
        raise FormatError(f"{what}: expected {expected} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype=dtype, offset=8 + 4 * rank).reshape(dims).copy()


def encode_uft(arr) -> bytes:
    return _encode_tensor(arr, UFT_MAGIC, "<f4")


def decode_uft(buf: bytes, what: str = "uft") -> np.ndarray:
    return _decode_tensor(buf, UFT_MAGIC, "<f4", what)


def save_uft(arr, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_uft(arr))


def load_uft(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_uft(fh.read(), str(path))


def save_labels(labels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i},{int(lab)}\n")


def load_labels(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["index", "label"]:
        raise FormatError(f"{path}: header must be 'index,label'")
    out = []
    for n, row in enumerate(rows[1:]):
        if not row:
            continue
        try:
            idx, lab = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise FormatError(f"{path}: malformed row {n + 2}: {row!r}") from None
        if idx != len(out):
            raise FormatError(f"{path}: row {n + 2} has index {idx}, expected {len(out)}")
        out.append(lab)
    return np.asarray(out, dtype=np.int64)


def save_dataset(ds: Dataset, dir_path) -> None:
    os.makedirs(dir_path, exist_ok=True)
    save_uft(ds.images, os.path.join(dir_path, "images.uft"))
    if ds.labels is not None:
        save_labels(ds.labels, os.path.join(dir_path, "labels.csv"))


def load_dataset(dir_path) -> Dataset:
    img_path = os.path.join(dir_path, "images.uft")
    if not os.path.exists(img_path):
        raise FormatError(f"{dir_path}: missing images.uft")
    images = load_uft(img_path)
    if images.ndim != 4:
        raise FormatError(f"{img_path}: expected rank 4 (N, C, H, W), got rank {images.ndim}")
    if images.size and (images.min() < 0 or images.max() > 1 or not np.all(np.isfinite(images))):
        raise FormatError(f"{img_path}: pixel values outside [0, 1]")
    labels = None
    lab_path = os.path.join(dir_path, "labels.csv")
    if os.path.exists(lab_path):
        labels = load_labels(lab_path)
        if len(labels) != len(images):
            raise FormatError(f"{lab_path}: label count {len(labels)} != image count {len(images)}")
        if len(labels) and labels.min() < 0:
            raise FormatError(f"{lab_path}: negative label")
    return Dataset(images, labels)


# ---------------------------------------------------------------- synthetic data

def _archetype(name: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    period = max(4, size // 4)
    if name == "hstripes":
        img = (yy % period) < period / 2
    elif name == "vstripes":
        img = (xx % period) < period / 2
    elif name == "disk":
        img = (yy - c) ** 2 + (xx - c) ** 2 <= (size * 0.28) ** 2
    elif name == "checker":
        img = ((yy // (period / 2)) + (xx // (period / 2))) % 2 == 0
    elif name == "diagbar":
        img = np.abs(yy - xx) <= size * 0.12
    elif name == "ring":
        r = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
        img = np.abs(r - size * 0.32) <= size * 0.08
    elif name == "corner":
        return (yy + xx) / (2.0 * (size - 1))
    elif name == "dots":
        # fixed dot layout so the class is a stable pattern
        rs = np.random.default_rng(12345)
        img = np.zeros((size, size), dtype=bool)
        pts = rs.integers(1, size - 1, size=(max(6, size // 2), 2))
        img[pts[:, 0], pts[:, 1]] = True
    else:
        raise ValueError(name)
    return img.astype(np.float64)


def synth_dataset(classes: int, per_class: int, size: int = 16, noise: float = 0.1,
                  rng: Rng | None = None, shift: int = 2) -> Dataset:
    """Balanced grayscale dataset built from distinct geometric archetypes.

    Each image is its class archetype translated by up to ``shift`` pixels in each
    direction (zero fill), plus Gaussian noise of std ``noise``, clipped to [0, 1].
    """
    if classes > len(ARCHETYPES):
        raise ValueError(f"unsupported archetype count {classes}: at most {len(ARCHETYPES)} classes")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if size < 8:
        raise ValueError("image size must be >= 8")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = rng or Rng(0)
    bases = [_archetype(name, size) for name in ARCHETYPES[:classes]]
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    shifts = rng.integers(-shift, shift + 1, size=(n, 2))
    images = np.zeros((n, 1, size, size))
    for i in range(n):
        dy, dx = shifts[i]
        src = bases[labels[i]]
        canvas = np.zeros((size + 2 * shift, size + 2 * shift))
        canvas[shift + dy:shift + dy + size, shift + dx:shift + dx + size] = src
        images[i, 0] = canvas[shift:shift + size, shift:shift + size]
    if noise > 0:
        images += noise * rng.normal(images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return Dataset(images, labels.astype(np.int64), classes)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)  # name -> float64 ndarray
    texts: dict = field(default_factory=dict)    # name -> str
    version: int = CKPT_VERSION


def encode_checkpoint(ck: Checkpoint) -> bytes:
    out = io.BytesIO()
    names = sorted(ck.tensors) + sorted(ck.texts)
    out.write(CKPT_MAGIC + struct.pack("<II", ck.version, len(names)))
    for name in sorted(ck.tensors):
        payload = _encode_tensor(ck.tensors[name], UFD_MAGIC, "<f8")
        _write_section(out, name, 0, payload)
    for name in sorted(ck.texts):
        _write_section(out, name, 1, ck.texts[name].encode("utf-8"))
    return out.getvalue()


def _write_section(out, name: str, kind: int, payload: bytes) -> None:
    raw = name.encode("utf-8")
    out.write(struct.pack("<I", len(raw)) + raw + struct.pack("<BQ", kind, len(payload)) + payload)


def decode_checkpoint(buf: bytes, what: str = "checkpoint") -> Checkpoint:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{what}: bad magic {buf[:4]!r}, expected {CKPT_MAGIC!r}")
    if len(buf) < 12:
        raise FormatError(f"{what}: truncated header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{what}: unsupported version {version} (expected {CKPT_VERSION})")
    ck = Checkpoint(version=version)
    pos = 12
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            kind, plen = struct.unpack_from("<BQ", buf, pos)
            pos += 9
        except struct.error:
            raise FormatError(f"{what}: corrupt section header at byte {pos}") from None
        payload = buf[pos:pos + plen]
        if len(payload) != plen:
            raise FormatError(f"{what}: section {name!r} declares {plen} bytes, {len(payload)} available")
        pos += plen
        if kind == 0:
            ck.tensors[name] = _decode_tensor(payload, UFD_MAGIC, "<f8", f"{what}:{name}")
        elif kind == 1:
            ck.texts[name] = payload.decode("utf-8")
        else:
            raise FormatError(f"{what}: section {name!r} has unknown kind {kind}")
    if pos != len(buf):
        raise FormatError(f"{what}: {len(buf) - pos} trailing bytes")
    return ck


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), str(path))


# ---------------------------------------------------------------- metrics

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_metrics(record, path) -> None:
    """Append one row; writes the header first when the file is new."""
    row = record if isinstance(record, dict) else record.as_row()
    if os.path.exists(path) and os.path.getsize(path) > 0:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header != METRICS_HEADER:
            raise FormatError(f"{path}: header {header} does not match {METRICS_HEADER}")
        prefix = ""
    else:
        prefix = ",".join(METRICS_HEADER) + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(prefix + ",".join(_fmt(row[c]) for c in METRICS_HEADER) + "\n")


def read_metrics(path) -> list:
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({
                "epoch": int(r["epoch"]), "loss": float(r["loss"]),
                "kmeans_objective": float(r["kmeans_objective"]),
                "nmi_prev": float(r["nmi_prev"]) if r["nmi_prev"] else None,
                "min_cluster": int(r["min_cluster"]), "max_cluster": int(r["max_cluster"]),
                "reseeds": int(r["reseeds"]),
            })
    return rows
