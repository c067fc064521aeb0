"""Layer kinds for the four Lipschitz architecture families.

Every layer maps a batch ``X`` of shape ``(n, d_in)`` to ``(n, d_out)``.
``forward`` returns the output and a cache; ``backward`` takes that cache and
the output gradient and returns ``(dX, {param_name: grad})``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import topk_rows

# Rough cap on the size of the (n, d_out, d_in) temporaries built by the
# max/sort neurons; batches are processed in sample chunks below it.
CHUNK_ELEMENTS = 1 << 22

ACTIVATIONS = ("identity", "relu", "abs", "tanh")


@dataclass
class ForwardContext:
    mode: str = "exact"              # "exact" | "stochastic"
    p: float = math.inf              # l_p relaxation for the max neurons
    k_trunc: int | None = None       # top-k truncation for geometric SortNet layers
    masks: dict = field(default_factory=dict)   # layer index -> (n, d_in) bool
    train: bool = False              # batch statistics in MeanShiftBN
    track_error: bool = False        # accumulate truncation error bounds


def _act(kind, z):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "abs":
        return np.abs(z)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(kind, z, out=None):
    # abs'(0) = 0 and relu'(0) = 0 by convention
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "abs":
        return np.sign(z)
    if kind == "tanh":
        t = np.tanh(z) if out is None else out
        return 1.0 - t * t
    raise ValueError(f"unknown activation {kind!r}")


def _chunks(n, per_sample):
    step = max(1, CHUNK_ELEMENTS // max(1, per_sample))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


class Layer:
    kind = "layer"
    #: parameters that receive decoupled weight decay during training
    decay = True

    def params(self) -> dict:
        return {}

    def out_dim(self, in_dim: int) -> int:
        return in_dim

    def lipschitz(self) -> float:
        return 1.0

    def forward(self, X, ctx, index=0):
        raise NotImplementedError

    def backward(self, cache, G):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Affine(Layer):
    """``y = scale * W x + b``.

    With ``constrained=True`` every row of the effective matrix ``scale * W``
    is kept inside the unit l1 ball, which makes the map 1-Lipschitz in l_inf.
    """

    kind = "affine"

    def __init__(self, W, b=None, constrained=False, scale=1.0):
        self.W = np.array(W, dtype=np.float64, ndmin=2)
        self.b = np.zeros(self.W.shape[0]) if b is None else np.array(b, dtype=np.float64).reshape(-1)
        if self.b.shape[0] != self.W.shape[0]:
            raise ValueError("bias length does not match W rows")
        self.constrained = bool(constrained)
        self.scale = float(scale)

    @property
    def weight(self):
        return self.scale * self.W

    def params(self):
        return {"W": self.W, "b": self.b}

    def out_dim(self, in_dim):
        if in_dim != self.W.shape[1]:
            raise ValueError(f"affine layer expects {self.W.shape[1]} inputs, got {in_dim}")
        return self.W.shape[0]

    def lipschitz(self):
        if self.W.size == 0:
            return 0.0
        row = np.abs(self.weight).sum(axis=1).max()
        return 1.0 if self.constrained and row <= 1.0 + 1e-12 else float(row)

    def project(self):
        """Rescale rows whose effective l1 norm exceeds 1; feasible rows are untouched."""
        if not self.constrained:
            return
        l1 = np.abs(self.weight).sum(axis=1)
        over = l1 > 1.0
        if np.any(over):
            self.W[over] /= l1[over, None]

    def forward(self, X, ctx, index=0):
        return X @ self.weight.T + self.b, X

    def backward(self, cache, G):
        X = cache
        return G @ self.weight, {"W": self.scale * (G.T @ X), "b": G.sum(axis=0)}

    def __repr__(self):
        return f"Affine({self.W.shape[1]}->{self.W.shape[0]}, constrained={self.constrained})"


class Activation(Layer):
    kind = "activation"

    def __init__(self, kind="relu"):
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.act = kind

    def forward(self, X, ctx, index=0):
        Y = _act(self.act, X)
        return Y, (X, Y)

    def backward(self, cache, G):
        X, Y = cache
        return G * _act_grad(self.act, X, Y if self.act == "tanh" else None), {}

    def __repr__(self):
        return f"Activation({self.act})"


class PiecewiseLinear(Layer):
    """Elementwise continuous piecewise-linear activation, constant outside the knots."""

    kind = "pwl"

    def __init__(self, knots, values):
        self.knots = np.asarray(knots, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape or self.knots.size < 2:
            raise ValueError("knots and values must be equal-length vectors (>= 2 points)")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.slopes = np.diff(self.values) / np.diff(self.knots)

    def lipschitz(self):
        return float(np.abs(self.slopes).max())

    def forward(self, X, ctx, index=0):
        return np.interp(X, self.knots, self.values), X

    def backward(self, cache, G):
        X = cache
        seg = np.searchsorted(self.knots, X, side="right") - 1
        inside = (seg >= 0) & (seg < self.slopes.size)
        slope = np.where(inside, self.slopes[np.clip(seg, 0, self.slopes.size - 1)], 0.0)
        return G * slope, {}


class MaxMin(Layer):
    """GroupSort: sort each consecutive group of ``group_size`` units in descending order."""

    kind = "maxmin"

    def __init__(self, group_size=2):
        self.group_size = int(group_size)
        if self.group_size < 1:
            raise ValueError("group size must be positive")

    def out_dim(self, in_dim):
        if in_dim % self.group_size:
            raise ValueError(f"width {in_dim} not divisible by group size {self.group_size}")
        return in_dim

    def forward(self, X, ctx, index=0):
        n, d = X.shape
        self.out_dim(d)
        Xr = X.reshape(n, d // self.group_size, self.group_size)
        perm = np.argsort(-Xr, axis=-1, kind="stable")
        return np.take_along_axis(Xr, perm, axis=-1).reshape(n, d), perm

    def backward(self, cache, G):
        perm = cache
        n = G.shape[0]
        dX = np.zeros(perm.shape)
        np.put_along_axis(dX, perm, G.reshape(perm.shape), axis=-1)
        return dX.reshape(n, -1), {}

    def __repr__(self):
        return f"MaxMin(G={self.group_size})"


def _relaxed_max(V, keep, p):
    """Max (or l_p norm) of non-negative ``V`` over ``keep`` along the last axis.

    Returns the value and the weights ``dZ/dV``. An empty kept set yields 0.
    """
    if keep is not None:
        V = np.where(keep, V, 0.0)
    if math.isinf(p):
        idx = np.argmax(V, axis=-1)
        Z = np.take_along_axis(V, idx[..., None], axis=-1)[..., 0]
        W = np.zeros_like(V)
        np.put_along_axis(W, idx[..., None], 1.0, axis=-1)
        if keep is not None:
            W *= keep
        return Z, W
    m = V.max(axis=-1)
    safe = np.where(m > 0, m, 1.0)
    R = V / safe[..., None]
    Rp1 = R ** (p - 1.0)
    S = (Rp1 * R).sum(axis=-1)
    Z = np.where(m > 0, safe * S ** (1.0 / p), 0.0)
    W = Rp1 / np.where(m > 0, S ** ((p - 1.0) / p), 1.0)[..., None]
    W = np.where((m > 0)[..., None], W, 0.0)
    if keep is not None:
        W *= keep
    return Z, W


class LinfDist(Layer):
    """``y_k = ||x - w_k||_inf + b_k``; uses the l_p relaxation when ``ctx.p`` is finite."""

    kind = "linfdist"

    def __init__(self, W, b=None):
        self.W = np.array(W, dtype=np.float64, ndmin=2)
        self.b = np.zeros(self.W.shape[0]) if b is None else np.array(b, dtype=np.float64).reshape(-1)

    def params(self):
        return {"W": self.W, "b": self.b}

    def out_dim(self, in_dim):
        if in_dim != self.W.shape[1]:
            raise ValueError(f"linf-dist layer expects {self.W.shape[1]} inputs, got {in_dim}")
        return self.W.shape[0]

    def forward(self, X, ctx, index=0):
        n = X.shape[0]
        Z = np.empty((n, self.W.shape[0]))
        for sl in _chunks(n, self.W.size):
            D = np.abs(X[sl, None, :] - self.W[None])
            Z[sl], _ = _relaxed_max(D, None, ctx.p)
        return Z + self.b, (X, ctx.p)

    def backward(self, cache, G):
        X, p = cache
        n = X.shape[0]
        dX = np.zeros_like(X)
        dW = np.zeros_like(self.W)
        for sl in _chunks(n, self.W.size):
            diff = X[sl, None, :] - self.W[None]
            _, Wt = _relaxed_max(np.abs(diff), None, p)
            T = G[sl, :, None] * Wt * np.sign(diff)
            dX[sl] = T.sum(axis=1)
            dW -= T.sum(axis=0)
        return dX, {"W": dW, "b": G.sum(axis=0)}

    def __repr__(self):
        return f"LinfDist({self.W.shape[1]}->{self.W.shape[0]})"


def geometric_weights(rho, d):
    """``w_i = (1 - rho) rho^(i-1)`` for i = 1..d."""
    i = np.arange(d, dtype=np.float64)
    w = (1.0 - rho) * np.power(rho, i)
    if rho == 0.0:
        w[0] = 1.0
    return w


class SortNet(Layer):
    """SortNet layer: ``y_k = w_k^T sort(sigma(x + B_k)) + c_k``.

    With ``weights=None`` the weights are the fixed geometric series in
    ``rho``; stochastic mode then replaces the sort by a max over a Bernoulli
    subset of the inputs (keep probability ``1 - rho``), which matches the
    exact output in expectation for non-negative activations. Explicit
    ``weights`` (one row per neuron, l1 norm at most 1) give the general
    neuron, evaluated by a full sort.
    """

    kind = "sortnet"
    decay = False

    def __init__(self, B, rho=0.0, activation="abs", bias_out=None, weights=None):
        self.B = np.array(B, dtype=np.float64, ndmin=2)
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {rho}")
        if activation not in ("identity", "relu", "abs"):
            raise ValueError(f"unsupported SortNet activation {activation!r}")
        self.rho = float(rho)
        self.act = activation
        out, d = self.B.shape
        self.bias_out = np.zeros(out) if bias_out is None else np.array(bias_out, dtype=np.float64).reshape(-1)
        if weights is not None:
            weights = np.array(weights, dtype=np.float64, ndmin=2)
            if weights.shape != self.B.shape:
                raise ValueError("explicit weights must have the same shape as B")
            if np.abs(weights).sum(axis=1).max() > 1.0 + 1e-12:
                raise ValueError("SortNet weight rows must have l1 norm <= 1")
        self.weights = weights

    @property
    def geometric(self):
        return self.weights is None

    def neuron_weights(self):
        """Weight matrix applied to the sorted vectors, shape (d_out, d_in)."""
        if self.weights is not None:
            return self.weights
        return np.broadcast_to(geometric_weights(self.rho, self.B.shape[1]), self.B.shape)

    def params(self):
        return {"B": self.B, "bias_out": self.bias_out}

    def out_dim(self, in_dim):
        if in_dim != self.B.shape[1]:
            raise ValueError(f"SortNet layer expects {self.B.shape[1]} inputs, got {in_dim}")
        return self.B.shape[0]

    def lipschitz(self):
        return 1.0

    def truncation_bound(self, k):
        return self.rho ** k if self.geometric else 0.0

    # -- forward ---------------------------------------------------------
    def forward(self, X, ctx, index=0):
        if ctx.mode == "stochastic" and self.geometric:
            return self._forward_stochastic(X, ctx.masks.get(index), ctx.p)
        return self._forward_exact(X, ctx.k_trunc if self.geometric else None)

    def _forward_exact(self, X, k):
        n, d = X.shape
        out = self.B.shape[0]
        Z = np.empty((n, out))
        vmax = np.zeros(n)
        if self.geometric:
            w = geometric_weights(self.rho, d)
            kk = d if k is None else min(int(k), d)
            for sl in _chunks(n, self.B.size):
                V = _act(self.act, X[sl, None, :] + self.B[None])
                top = topk_rows(V, kk)
                Z[sl] = top @ w[:kk]
                vmax[sl] = V.max(axis=(1, 2)) if V.size else 0.0
        else:
            kk = d
            W = self.weights
            for sl in _chunks(n, self.B.size):
                V = _act(self.act, X[sl, None, :] + self.B[None])
                Z[sl] = (-np.sort(-V, axis=-1) * W[None]).sum(axis=-1)
        return Z + self.bias_out, ("exact", X, kk, vmax)

    def _forward_stochastic(self, X, mask, p):
        n, d = X.shape
        if mask is not None and mask.shape != (n, d):
            raise ValueError(f"mask shape {mask.shape} does not match input {X.shape}")
        Z = np.empty((n, self.B.shape[0]))
        for sl in _chunks(n, self.B.size):
            V = _act(self.act, X[sl, None, :] + self.B[None])
            keep = None if mask is None else mask[sl, None, :]
            if self.act == "identity":
                kept = V if keep is None else np.where(keep, V, 0.0)
                if np.any(kept < 0):
                    raise ValueError("stochastic SortNet mode needs non-negative pre-sort values")
            Z[sl], _ = _relaxed_max(V, keep, p)
        return Z + self.bias_out, ("stochastic", X, mask, p)

    # -- backward --------------------------------------------------------
    def backward(self, cache, G):
        tag, X = cache[0], cache[1]
        n, d = X.shape
        dX = np.zeros_like(X)
        dB = np.zeros_like(self.B)
        for sl in _chunks(n, self.B.size):
            pre = X[sl, None, :] + self.B[None]
            V = _act(self.act, pre)
            if tag == "stochastic":
                mask, p = cache[2], cache[3]
                keep = None if mask is None else mask[sl, None, :]
                _, Wt = _relaxed_max(V, keep, p)
            else:
                kk = cache[2]
                perm = np.argsort(-V, axis=-1, kind="stable")[..., :kk]
                Wn = self.neuron_weights()[:, :kk]
                Wt = np.zeros_like(V)
                np.put_along_axis(Wt, perm, np.broadcast_to(Wn[None], perm.shape), axis=-1)
            T = G[sl, :, None] * Wt * _act_grad(self.act, pre)
            dX[sl] = T.sum(axis=1)
            dB += T.sum(axis=0)
        return dX, {"B": dB, "bias_out": G.sum(axis=0)}

    def __repr__(self):
        w = "geometric" if self.geometric else "explicit"
        return f"SortNet({self.B.shape[1]}->{self.B.shape[0]}, rho={self.rho}, {self.act}, {w})"


class Standardize(Layer):
    """Fixed input normalization ``(x - mean) / std``; Lipschitz constant 1 / min(std)."""

    kind = "standardize"

    def __init__(self, mean, std):
        self.mean = np.array(mean, dtype=np.float64).reshape(-1)
        self.std = np.array(std, dtype=np.float64).reshape(-1)
        if self.mean.size != self.std.size:
            raise ValueError("mean and std must have equal length")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")

    def lipschitz(self):
        return float(1.0 / self.std.min())

    def forward(self, X, ctx, index=0):
        return (X - self.mean) / self.std, None

    def backward(self, cache, G):
        return G / self.std, {}

    def __repr__(self):
        return f"Standardize({self.mean.size})"


class MeanShiftBN(Layer):
    """Mean-only batch normalization (no scaling, so the map stays 1-Lipschitz)."""

    kind = "meanshift_bn"

    def __init__(self, dim, running_mean=None):
        self.dim = int(dim)
        self.running_mean = None if running_mean is None else np.array(running_mean, dtype=np.float64).reshape(-1)

    def forward(self, X, ctx, index=0):
        if ctx.train:
            mu = X.mean(axis=0)
            return X - mu, "batch"
        if self.running_mean is None:
            raise RuntimeError("MeanShiftBN has no running mean; call finalize_running_mean first")
        return X - self.running_mean, "fixed"

    def backward(self, cache, G):
        if cache == "batch":
            return G - G.mean(axis=0), {}
        return G, {}

    def __repr__(self):
        return f"MeanShiftBN({self.dim})"
