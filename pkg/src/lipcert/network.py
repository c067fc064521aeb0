"""Network container: forward/backward through a layer list, projection, masks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    Activation,
    Affine,
    ForwardContext,
    Layer,
    LinfDist,
    MaxMin,
    MeanShiftBN,
    PiecewiseLinear,
    SortNet,
    Standardize,
)
from .numeric import RandomSource


class StaleCacheError(RuntimeError):
    """Raised when backward() gets a cache recorded before the parameters changed."""


@dataclass
class ForwardCache:
    layer_caches: list
    version: int
    input_shape: tuple
    # per-sample l_inf bound on |exact - truncated| outputs (exact mode only)
    trunc_error: np.ndarray | None = None


@dataclass
class GradientBundle:
    """Parameter gradients, one dict per layer, plus the input gradient."""

    params: list
    input: np.ndarray

    def flat(self):
        return [(i, name, g) for i, d in enumerate(self.params) for name, g in d.items()]


@dataclass
class Network:
    input_dim: int
    layers: list = field(default_factory=list)
    head_split: int | None = None
    # declared input box (low, high); constructions are only exact inside it
    domain: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._version = 0
        self.training_complete = bool(self.meta.pop("training_complete", False))
        self.output_dim  # validates the widths

    # -- structure -------------------------------------------------------
    @property
    def output_dim(self):
        d = self.input_dim
        for layer in self.layers:
            d = layer.out_dim(d)
        return d

    def widths(self):
        out = [self.input_dim]
        for layer in self.layers:
            out.append(layer.out_dim(out[-1]))
        return out

    @property
    def lipschitz_bound(self) -> float:
        return float(np.prod([layer.lipschitz() for layer in self.layers])) if self.layers else 1.0

    @property
    def backbone(self):
        return self.layers if self.head_split is None else self.layers[: self.head_split]

    @property
    def head(self):
        return [] if self.head_split is None else self.layers[self.head_split :]

    @property
    def backbone_lipschitz(self) -> float:
        return float(np.prod([layer.lipschitz() for layer in self.backbone])) if self.backbone else 1.0

    def bump(self):
        """Mark parameters as modified; caches recorded earlier become stale."""
        self._version += 1

    def parameters(self):
        """(layer index, name, array, decay flag) for every trainable tensor."""
        return [(i, name, arr, layer.decay) for i, layer in enumerate(self.layers) for name, arr in layer.params().items()]

    def in_domain(self, X):
        """Boolean per-row flag: is the input inside the declared box?"""
        X = np.atleast_2d(X)
        if self.domain is None:
            return np.ones(X.shape[0], dtype=bool)
        lo, hi = self.domain
        return np.all((X >= lo) & (X <= hi), axis=1)

    # -- evaluation ------------------------------------------------------
    def forward(self, X, mode="exact", masks=None, p=math.inf, k_trunc=None, train=False,
                layers=None, track_error=False):
        """Run the batch ``X`` through the network.

        ``mode="stochastic"`` replaces geometric SortNet layers by the masked
        max estimator (``masks`` maps layer index to an ``(n, d_in)`` boolean
        array; missing entries keep every input). ``k_trunc`` truncates the
        exact geometric SortNet sum after ``k`` order statistics, and
        ``track_error`` records a per-sample bound on the resulting output
        deviation.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if layers is None and X.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of dimension {self.input_dim}, got {X.shape[1]}")
        if mode not in ("exact", "stochastic"):
            raise ValueError(f"unknown mode {mode!r}")
        ctx = ForwardContext(mode=mode, p=p, k_trunc=k_trunc, masks=masks or {}, train=train)
        layer_list = self.layers if layers is None else layers
        caches = []
        err = np.zeros(X.shape[0]) if track_error and mode == "exact" else None
        H = X
        for i, layer in enumerate(layer_list):
            H, c = layer.forward(H, ctx, i)
            caches.append(c)
            if err is not None:
                err = _propagate_error(layer, err, c, k_trunc)
        cache = ForwardCache(caches, self._version, X.shape, err)
        return (H[0] if single else H), cache

    def __call__(self, X, **kw):
        return self.forward(X, **kw)[0]

    def backward(self, cache: ForwardCache, grad_out, start=0):
        """Reverse pass; ``start`` is the index of the first layer the cache covers."""
        if cache.version != self._version:
            raise StaleCacheError("parameters changed since this forward pass")
        G = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads = [None] * len(cache.layer_caches)
        for i in range(len(cache.layer_caches) - 1, -1, -1):
            G, g = self.layers[start + i].backward(cache.layer_caches[i], G)
            grads[i] = g
        return GradientBundle(grads, G)

    def project_weights(self):
        for layer in self.layers:
            if isinstance(layer, Affine):
                layer.project()
        self.bump()

    # -- stochastic training support -------------------------------------
    def mask_layers(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, SortNet) and l.geometric and l.rho > 0]

    def sample_masks(self, rng: RandomSource, epoch: int, sample_ids):
        """Per-sample Bernoulli(1 - rho) input masks for every geometric SortNet layer.

        Row ``r`` depends only on ``(seed, epoch, sample_ids[r])``.
        """
        idx = self.mask_layers()
        if not idx:
            return {}
        dims = [self.layers[i].B.shape[1] for i in idx]
        keep = [1.0 - self.layers[i].rho for i in idx]
        out = {i: np.empty((len(sample_ids), d), dtype=bool) for i, d in zip(idx, dims)}
        for r, s in enumerate(sample_ids):
            g = rng.stream(epoch, int(s))
            for i, d, kp in zip(idx, dims, keep):
                out[i][r] = g.random(d) < kp
        return out

    def describe(self):
        lines = [f"input_dim {self.input_dim}"]
        for i, layer in enumerate(self.layers):
            tag = " [head]" if self.head_split is not None and i >= self.head_split else ""
            lines.append(f"{i}: {layer!r}{tag}")
        lines.append(f"lipschitz_bound {self.lipschitz_bound:.6g}")
        return "\n".join(lines)


def _propagate_error(layer, err, cache, k):
    if isinstance(layer, SortNet):
        if cache[0] == "exact" and k is not None and layer.geometric:
            vmax = cache[3]
            return err + layer.truncation_bound(k) * (vmax + err)
        return err
    if isinstance(layer, Affine):
        return err * np.abs(layer.weight).sum(axis=1).max() if layer.W.size else err * 0
    if isinstance(layer, PiecewiseLinear):
        return err * layer.lipschitz()
    return err


def with_standardize(net: Network, mean, std) -> Network:
    """Prepend a fixed normalization layer so the model works on raw inputs."""
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (net.input_dim,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (net.input_dim,))
    split = None if net.head_split is None else net.head_split + 1
    out = Network(net.input_dim, [Standardize(mean, std)] + list(net.layers), head_split=split,
                  domain=net.domain, meta=dict(net.meta))
    out.training_complete = net.training_complete
    return out


def is_standard(net: Network) -> bool:
    """Constrained affine layers plus 1-Lipschitz elementwise activations only."""
    for layer in net.layers:
        if isinstance(layer, Affine):
            if not layer.constrained or layer.lipschitz() > 1.0 + 1e-12:
                return False
        elif isinstance(layer, Activation):
            continue
        elif isinstance(layer, PiecewiseLinear):
            if layer.lipschitz() > 1.0 + 1e-12:
                return False
        else:
            return False
    return True


def count_maxmin_depth(net: Network) -> int:
    """Number of layers M of a MaxMin network (affine layers; M - 1 carry MaxMin)."""
    return sum(isinstance(l, Affine) for l in net.layers)


# -- builders ------------------------------------------------------------------

def _gauss(rng, *shape):
    return rng.standard_normal(shape)


def build_sortnet(input_dim, hidden, n_classes, rho=0.3, activation="abs", bn=True, seed=0,
                  head_hidden=None, drop_input=False):
    """Fully connected SortNet classifier with geometric weights.

    The first layer keeps every input (``rho = 0``) unless ``drop_input``;
    later layers use ``rho``. Mean-shift BN follows every hidden SortNet
    layer. ``head_hidden`` appends an affine-tanh-affine head (the
    composite "SortNet+MLP" model), otherwise the last layer is a SortNet
    layer with ``n_classes`` outputs.
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    d = input_dim
    sizes = list(hidden) if head_hidden is not None else list(hidden) + [n_classes]
    for li, h in enumerate(sizes):
        r = rho if (li > 0 or drop_input) else 0.0
        layers.append(SortNet(_gauss(rng, h, d), rho=r, activation=activation))
        last = li == len(sizes) - 1
        if bn and not (last and head_hidden is None):
            layers.append(MeanShiftBN(h))
        d = h
    split = None
    if head_hidden is not None:
        split = len(layers)
        layers.append(Affine(_gauss(rng, head_hidden, d), np.zeros(head_hidden), scale=1.0 / math.sqrt(d)))
        layers.append(Activation("tanh"))
        layers.append(Affine(_gauss(rng, n_classes, head_hidden), np.zeros(n_classes),
                             scale=1.0 / math.sqrt(head_hidden)))
    return Network(input_dim, layers, head_split=split)


def build_standard(input_dim, hidden, n_out, activation="relu", seed=0):
    """Standard Lipschitz network: constrained affine layers and elementwise activations."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    d = input_dim
    for h in list(hidden):
        layers.append(Affine(_gauss(rng, h, d) / d, _gauss(rng, h) * 0.1, constrained=True))
        layers.append(Activation(activation))
        d = h
    layers.append(Affine(_gauss(rng, n_out, d) / d, np.zeros(n_out), constrained=True))
    net = Network(input_dim, layers)
    net.project_weights()
    return net


def build_maxmin(input_dim, hidden, n_out, group_size=2, seed=0):
    """GroupSort network: constrained affine layers separated by GroupSort activations."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    d = input_dim
    for h in list(hidden):
        layers.append(Affine(_gauss(rng, h, d) / d, _gauss(rng, h) * 0.1, constrained=True))
        layers.append(MaxMin(group_size))
        d = h
    layers.append(Affine(_gauss(rng, n_out, d) / d, np.zeros(n_out), constrained=True))
    net = Network(input_dim, layers)
    net.project_weights()
    return net


def build_linf(input_dim, hidden, n_out, seed=0):
    """l_inf-distance network; the output layer is also an l_inf-distance layer."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    d = input_dim
    sizes = list(hidden) + [n_out]
    for li, h in enumerate(sizes):
        layers.append(LinfDist(_gauss(rng, h, d), np.zeros(h)))
        if li < len(sizes) - 1:
            layers.append(MeanShiftBN(h))
        d = h
    return Network(input_dim, layers)
