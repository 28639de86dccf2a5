"""Dictionary K-means with unit-norm centroids and one-nonzero codes.

Minimizes ``sum_i ||D s_i - f_i||^2`` subject to each code ``s_i`` having at
most one nonzero entry and each dictionary column having unit l2 norm. The
cluster index of the nonzero entry is the surrogate label of sample ``i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numeric_core import Rng, ShapeError, eigh_symmetric

log = logging.getLogger(__name__)

SPHERICAL = "spherical"
EUCLIDEAN = "euclidean"


class KMeansError(ValueError):
    pass


@dataclass
class Dictionary:
    columns: np.ndarray  # (d, k)

    @property
    def dims(self) -> int:
        return self.columns.shape[0]

    @property
    def clusters(self) -> int:
        return self.columns.shape[1]


@dataclass
class CodeAssignment:
    labels: np.ndarray
    coefficients: np.ndarray
    objective: float

    def dense_codes(self, k: int) -> np.ndarray:
        """Materialize the sparse codes as an ``(N, k)`` matrix."""
        s = np.zeros((len(self.labels), k))
        s[np.arange(len(self.labels)), self.labels] = self.coefficients
        return s


@dataclass
class KMeansResult:
    dictionary: Dictionary
    codes: CodeAssignment
    objective_history: list = field(default_factory=list)
    reseeds: int = 0


def init_centroids(d: int, k: int, rng: Rng) -> Dictionary:
    if d < 1 or k < 1:
        raise KMeansError(f"init_centroids needs d >= 1 and k >= 1 (got d={d}, k={k})")
    cols = rng.normal((d, k))
    norms = np.sqrt(np.sum(cols * cols, axis=0))
    # a zero column has probability zero but would break the unit-norm contract
    while np.any(norms == 0.0):
        bad = norms == 0.0
        cols[:, bad] = rng.normal((d, int(bad.sum())))
        norms = np.sqrt(np.sum(cols * cols, axis=0))
    return Dictionary(cols / norms)


def reconstruction_objective(features, labels, coefficients, dictionary: Dictionary) -> float:
    f = np.asarray(features, dtype=np.float64)
    recon = dictionary.columns[:, labels].T * coefficients[:, None]
    return float(np.sum((recon - f) ** 2))


def assign_codes(features, dictionary: Dictionary, mode: str = SPHERICAL) -> CodeAssignment:
    """Optimal one-nonzero code per sample for a fixed dictionary.

    Spherical mode picks ``argmax_j |D_j . f|`` (lowest index on ties) with the
    coefficient ``D_j . f``. Euclidean mode picks the nearest centroid with a
    unit coefficient.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != dictionary.dims:
        raise ShapeError(f"assign_codes: features {f.shape} vs dictionary dims {dictionary.dims}")
    D = dictionary.columns
    if mode == SPHERICAL:
        dots = f @ D
        labels = np.argmax(np.abs(dots), axis=1)
        coef = dots[np.arange(len(f)), labels]
        sq = np.sum(f * f, axis=1)
        objective = float(np.sum(np.maximum(sq - coef * coef, 0.0)))
    elif mode == EUCLIDEAN:
        dist = np.sum(f * f, axis=1)[:, None] - 2.0 * f @ D + np.sum(D * D, axis=0)[None, :]
        labels = np.argmin(dist, axis=1)
        coef = np.ones(len(f))
        objective = reconstruction_objective(f, labels, coef, dictionary)
    else:
        raise KMeansError(f"unknown k-means mode {mode!r}")
    return CodeAssignment(labels=labels.astype(np.int64), coefficients=coef, objective=objective)


def update_dictionary(features, codes: CodeAssignment, dictionary: Dictionary, rng: Rng,
                      mode: str = SPHERICAL):
    """Closed-form column update for fixed codes.

    Returns ``(dictionary, reseeds)``. A column whose weighted member sum is zero,
    or which has no members, is replaced by a randomly chosen feature row.
    """
    f = np.asarray(features, dtype=np.float64)
    n, d = f.shape
    if d != dictionary.dims or len(codes.labels) != n:
        raise ShapeError("update_dictionary: inconsistent shapes")
    row_norms = np.sqrt(np.sum(f * f, axis=1))
    nonzero_rows = np.flatnonzero(row_norms > 0.0)
    if nonzero_rows.size == 0:
        raise KMeansError("update_dictionary: all feature rows are zero (degenerate data)")
    k = dictionary.clusters
    weighted = f * codes.coefficients[:, None]
    sums = np.zeros((d, k))
    np.add.at(sums.T, codes.labels, weighted)
    counts = np.bincount(codes.labels, minlength=k)
    if mode == EUCLIDEAN:
        sums = sums / np.maximum(counts, 1)
    norms = np.sqrt(np.sum(sums * sums, axis=0))
    cols = dictionary.columns.copy()
    reseeds = 0
    for j in range(k):
        if counts[j] == 0 or (mode == SPHERICAL and norms[j] == 0.0):
            i = nonzero_rows[int(rng.integers(0, nonzero_rows.size))]
            cols[:, j] = f[i] / row_norms[i]
            reseeds += 1
        elif mode == SPHERICAL:
            cols[:, j] = sums[:, j] / norms[j]
        else:
            cols[:, j] = sums[:, j]
    return Dictionary(cols), reseeds


def dictionary_from_labels(features, labels, k: int, rng: Rng, mode: str = SPHERICAL):
    """Best dictionary for a fixed partition; returns ``(dictionary, reseeds)``.

    In spherical mode each column is the leading eigenvector of its cluster's
    scatter matrix ``sum f f^T`` (the exact minimizer over unit vectors), signed
    to agree with the cluster sum. Empty clusters are reseeded from data rows.
    """
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if mode != SPHERICAL:
        codes = CodeAssignment(labels, np.ones(len(f)), 0.0)
        return update_dictionary(f, codes, Dictionary(np.zeros((f.shape[1], k))), rng, mode=mode)
    cols = np.zeros((f.shape[1], k))
    empty = []
    for j in range(k):
        members = f[labels == j]
        if len(members) == 0 or not np.any(members):
            empty.append(j)
            continue
        _, vecs = eigh_symmetric(members.T @ members)
        v = vecs[:, 0]
        if v @ members.sum(axis=0) < 0:
            v = -v
        cols[:, j] = v / np.linalg.norm(v)
    if empty:
        row_norms = np.sqrt(np.sum(f * f, axis=1))
        nonzero_rows = np.flatnonzero(row_norms > 0.0)
        if nonzero_rows.size == 0:
            raise KMeansError("dictionary_from_labels: all feature rows are zero (degenerate data)")
        for j in empty:
            i = nonzero_rows[int(rng.integers(0, nonzero_rows.size))]
            cols[:, j] = f[i] / row_norms[i]
    return Dictionary(cols), len(empty)


def fill_empty_clusters(features, codes: CodeAssignment, dictionary: Dictionary, rng: Rng):
    """Move one random sample into each empty cluster, re-centring the column on it.

    Donors come from clusters holding at least two samples. Returns
    ``(codes, dictionary, moves)``.
    """
    f = np.asarray(features, dtype=np.float64)
    k = dictionary.clusters
    labels = codes.labels.copy()
    coef = codes.coefficients.copy()
    cols = dictionary.columns.copy()
    moves = 0
    norms = np.sqrt(np.sum(f * f, axis=1))
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        donors = np.flatnonzero((counts[labels] > 1) & (norms > 0.0))
        if donors.size == 0:
            break
        i = donors[int(rng.integers(0, donors.size))]
        cols[:, j] = f[i] / norms[i]
        labels[i] = j
        coef[i] = norms[i]
        moves += 1
    out = Dictionary(cols)
    objective = reconstruction_objective(f, labels, coef, out)
    return CodeAssignment(labels, coef, objective), out, moves


def fit_kmeans(features, k: int, max_iters: int = 100, tol: float = 1e-6, rng: Rng | None = None,
               mode: str = SPHERICAL, init_labels=None, ensure_nonempty: bool = False) -> KMeansResult:
    """Alternate code assignment and dictionary updates.

    Stops when the relative objective improvement falls below ``tol`` or after
    ``max_iters`` assignments. The returned codes always correspond to the
    returned dictionary. ``init_labels`` starts from a given partition instead
    of normally distributed centroids.
    """
    f = np.asarray(features, dtype=np.float64)
    if max_iters < 1:
        raise KMeansError("max_iters must be >= 1")
    if rng is None:
        rng = Rng(0)
    n, d = f.shape
    if n < k:
        log.warning("fit_kmeans: fewer samples (%d) than clusters (%d)", n, k)
    reseeds = 0
    if init_labels is not None:
        dictionary, reseeds = dictionary_from_labels(f, init_labels, k, rng, mode=mode)
    else:
        dictionary = init_centroids(d, k, rng)
    history = []
    codes = None
    for it in range(max_iters):
        codes = assign_codes(f, dictionary, mode=mode)
        history.append(codes.objective)
        if it > 0 and history[-2] - history[-1] <= tol * abs(history[-2]):
            break
        if it == max_iters - 1:
            break
        dictionary, r = update_dictionary(f, codes, dictionary, rng, mode=mode)
        reseeds += r
    if ensure_nonempty and mode == SPHERICAL and np.bincount(codes.labels, minlength=k).min() == 0:
        codes, dictionary, moves = fill_empty_clusters(f, codes, dictionary, rng)
        reseeds += moves
    return KMeansResult(dictionary=dictionary, codes=codes, objective_history=history, reseeds=reseeds)
