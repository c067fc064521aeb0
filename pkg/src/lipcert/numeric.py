"""Array primitives shared by every other module.

Everything here works on float64 numpy arrays. Sorting is descending and
stable (ties keep the lower original index first), which is what the
SortNet neuron and the Bernoulli estimator assume.
"""
from __future__ import annotations

import os

import numpy as np

__all__ = [
    "RandomSource",
    "sort_desc",
    "top_k",
    "topk_rows",
    "bernoulli_mask",
    "norms",
    "matvec",
    "worker_count",
]


def _as_finite_vector(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def sort_desc(x):
    """Stable descending sort.

    Returns
    -------
    sorted : ndarray
        Non-increasing permutation of ``x``.
    perm : ndarray of int
        ``sorted[i] == x[perm[i]]``; ties keep the lower index first.
    """
    x = _as_finite_vector(x)
    perm = np.argsort(-x, kind="stable")
    return x[perm], perm


def top_k(x, k):
    """The ``k`` largest entries of ``x`` in non-increasing order and their indices."""
    x = _as_finite_vector(x)
    k = int(k)
    if not 1 <= k <= x.size:
        raise ValueError(f"k must lie in [1, {x.size}], got {k}")
    if k == x.size:
        return sort_desc(x)
    # partition then stable-sort the candidates; ties at the cut go to lower indices
    kth = np.partition(-x, k - 1)[k - 1]
    cand = np.flatnonzero(-x <= kth)
    order = np.argsort(-x[cand], kind="stable")
    idx = cand[order][:k]
    return x[idx], idx


def topk_rows(a, k):
    """Row-wise top-k values (descending) along the last axis of ``a``.

    Batch helper for truncated SortNet inference; only values are returned,
    so tie-breaking is irrelevant.
    """
    a = np.asarray(a)
    n = a.shape[-1]
    if k >= n:
        return -np.sort(-a, axis=-1)
    part = -np.partition(-a, k - 1, axis=-1)[..., :k]
    return -np.sort(-part, axis=-1)


class RandomSource:
    """Counter-addressed random streams.

    The stream for ``(epoch, sample, purpose)`` depends only on those integers
    and the seed, so masks come out identical no matter how a batch is split
    or in which order samples are processed.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._counter = 0

    def stream(self, epoch: int = 0, sample: int = 0, purpose: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(purpose), int(epoch), int(sample)))
        return np.random.Generator(np.random.Philox(ss))

    def next_stream(self) -> np.random.Generator:
        """Sequential stream for code that has no natural (epoch, sample) address."""
        g = self.stream(epoch=-1, sample=self._counter, purpose=99)
        self._counter += 1
        return g

    def __repr__(self):
        return f"RandomSource(seed={self.seed})"


def bernoulli_mask(rng: RandomSource, d: int, keep_prob: float, epoch: int = 0, sample: int = 0):
    """Boolean mask of length ``d`` with independent entries equal to 1 w.p. ``keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in [0, 1], got {keep_prob}")
    return rng.stream(epoch, sample).random(int(d)) < keep_prob


def norms(x):
    """(l1, linf) norms of a vector."""
    x = _as_finite_vector(x)
    if x.size == 0:
        return 0.0, 0.0
    a = np.abs(x)
    return float(a.sum()), float(a.max())


def matvec(W, x):
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: W {W.shape} vs x {x.shape}")
    return W @ x


def worker_count() -> int:
    """Worker cap from ``LIPCERT_THREADS`` (defaults to the CPU count)."""
    env = os.environ.get("LIPCERT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1
