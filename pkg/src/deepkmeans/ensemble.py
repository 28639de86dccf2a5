"""Score fusion across ensemble members and Top-1 accuracy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreSet:
    member: str
    scores: np.ndarray  # (N, C)


def fuse_scores(members: list) -> np.ndarray:
    """Element-wise mean of the members' score matrices.

    Accumulated as a running mean in member-id order, so identical members
    reproduce their common matrix bit for bit.
    """
    if not members:
        raise ValueError("fuse_scores: no members")
    ordered = sorted(members, key=lambda m: m.member)
    shape = np.shape(ordered[0].scores)
    if len(shape) != 2:
        raise ValueError(f"scores must be 2-D, got shape {shape}")
    mean = np.zeros(shape)
    for i, m in enumerate(ordered, 1):
        if np.shape(m.scores) != shape:
            raise ValueError(f"member {m.member!r} has scores {np.shape(m.scores)}, expected {shape}")
        mean += (np.asarray(m.scores, dtype=np.float64) - mean) / i
    return mean


def top1_accuracy(predicted, truth) -> float:
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"top1_accuracy: shapes differ {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("top1_accuracy: empty input")
    return 100.0 * float(np.count_nonzero(p == t)) / p.size
