"""Losses with hand-written gradients. Batch losses are averaged over samples."""
from __future__ import annotations

import math

import numpy as np

from ..layers import _relaxed_max


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(z, y):
    """Per-sample CE and its gradient w.r.t. z."""
    z = np.atleast_2d(z)
    n = len(y)
    shift = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - shift).sum(axis=1)) + shift[:, 0]
    val = lse - z[np.arange(n), y]
    g = _softmax(z)
    g[np.arange(n), y] -= 1.0
    return val, g


def hinge(z, y):
    """max(max_{j != y} z_j - z_y + 1, 0) per sample, with gradient."""
    z = np.atleast_2d(z)
    n = len(y)
    other = z.copy()
    other[np.arange(n), y] = -np.inf
    j = other.argmax(axis=1)
    raw = z[np.arange(n), j] - z[np.arange(n), y] + 1.0
    val = np.maximum(raw, 0.0)
    g = np.zeros_like(z)
    act = raw > 0
    g[np.flatnonzero(act), j[act]] = 1.0
    g[np.flatnonzero(act), y[act]] -= 1.0
    return val, g


def _check(y, n):
    y = np.asarray(y).astype(int).reshape(-1)
    if len(y) != n:
        raise ValueError("labels do not match the batch")
    return y


def loss_margin(logits, y, lam, s, theta):
    """lambda * CE(s * z, y) + [argmax z == y] * hinge(z / theta, y).

    The indicator is a constant per sample (no gradient through it).
    Returns ``(value, dvalue/dlogits, dvalue/ds)``.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    n = z.shape[0]
    y = _check(y, n)
    ce, gce = cross_entropy(s * z, y)
    gate = (np.argmax(z, axis=1) == y).astype(np.float64)
    h, gh = hinge(z / theta, y)
    val = (lam * ce + gate * h).mean()
    dz = (lam * s * gce + gate[:, None] * gh / theta) / n
    ds = lam * float((gce * z).sum()) / n
    return float(val), dz, ds


def loss_ibp(margins, logits, y, lam, s):
    """lambda * CE(s * z, y) + [argmax z == y] * max(1 - min_j m_j, 0).

    ``margins`` are worst-case lower bounds on z_y - z_j (the label column is
    ignored). Returns ``(value, d/dlogits, d/dmargins, d/ds)``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    m = np.array(margins, dtype=np.float64)
    n = z.shape[0]
    y = _check(y, n)
    m[np.arange(n), y] = np.inf
    ce, gce = cross_entropy(s * z, y)
    gate = (np.argmax(z, axis=1) == y).astype(np.float64)
    j = m.argmin(axis=1)
    raw = 1.0 - m[np.arange(n), j]
    h = np.maximum(raw, 0.0)
    val = (lam * ce + gate * h).mean()
    dm = np.zeros_like(m)
    act = (raw > 0) & (gate > 0)
    dm[np.flatnonzero(act), j[act]] = -1.0 / n
    dz = lam * s * gce / n
    ds = lam * float((gce * z).sum()) / n
    return float(val), dz, dm, ds


def mse_loss(out, target):
    """Mean squared error; ``target`` has the output's shape (or is a vector for 1 output)."""
    out = np.atleast_2d(out)
    t = np.asarray(target, dtype=np.float64).reshape(out.shape)
    r = out - t
    return float((r**2).mean()), 2.0 * r / r.size


def lp_relaxed_max(x, p):
    """(sum x_i^p)^(1/p) for non-negative x, evaluated without overflow; returns (value, gradient)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("lp relaxation needs non-negative entries")
    if not (p >= 1 or math.isinf(p)):
        raise ValueError("p must be >= 1")
    z, g = _relaxed_max(x, None, p)
    return (float(z) if np.ndim(z) == 0 else z), g
