"""Certification: Lipschitz-margin radii, interval bounds for MLP heads, PGD, reports.

Report CSV columns: index, label, pred, margin, radius, certified, pgd_robust.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .layers import Activation, Affine
from .network import Network


class UncertifiableError(ValueError):
    """The network has neither a usable Lipschitz bound nor an IBP-compatible head."""


class SoundnessError(RuntimeError):
    """certified <= pgd <= clean was violated; indicates a bug."""


def top2_margin(logits):
    """top1 - top2 along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("need at least two logits")
    part = -np.partition(-z, 1, axis=-1)
    return part[..., 0] - part[..., 1]


def margins_for_labels(logits, y):
    """f_y - max_{j != y} f_j per row (negative when misclassified)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.asarray(y).astype(int).reshape(-1)
    fy = z[np.arange(len(y)), y]
    other = z.copy()
    other[np.arange(len(y)), y] = -np.inf
    return fy - other.max(axis=1)


def predict(logits):
    # argmax ties go to the lowest index
    return np.argmax(np.atleast_2d(logits), axis=1)


def certified_radius(logits, L: float = 1.0, p: float = math.inf):
    """Largest l_p perturbation that cannot change the prediction: c_p * margin / L, c_p = 2^(1/p) / 2."""
    if not L > 0:
        raise ValueError(f"Lipschitz bound must be positive, got {L}")
    c = 0.5 if math.isinf(p) else 2.0 ** (1.0 / p) / 2.0
    r = c * top2_margin(logits) / L
    return float(r) if np.ndim(r) == 0 else r


# -- interval bound propagation --------------------------------------------------

@dataclass
class Interval:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper shapes differ")
        if np.any(self.lower > self.upper):
            raise ValueError("interval has lower > upper")

    @classmethod
    def ball(cls, center, radius):
        c = np.asarray(center, dtype=np.float64)
        r = np.broadcast_to(np.asarray(radius, dtype=np.float64), c.shape) if np.ndim(radius) == 0 else \
            np.asarray(radius, dtype=np.float64).reshape(c.shape[:-1] + (1,)) * np.ones_like(c)
        return cls(c - r, c + r)

    @property
    def center(self):
        return (self.upper + self.lower) / 2

    @property
    def radius(self):
        return (self.upper - self.lower) / 2

    def contains(self, x, tol=0.0):
        return bool(np.all((x >= self.lower - tol) & (x <= self.upper + tol)))


_MONOTONE = ("identity", "relu", "tanh")


def _check_head(layers):
    for layer in layers:
        if isinstance(layer, Affine):
            continue
        if isinstance(layer, Activation) and layer.act in _MONOTONE:
            continue
        raise UncertifiableError(f"IBP head supports affine and monotone activations only, found {layer!r}")


def _act(kind, z):
    return Activation(kind).forward(z, None)[0]


def ibp_forward(layers, interval: Interval) -> Interval:
    """Propagate an input box through affine / monotone-activation layers."""
    if isinstance(layers, Network):
        layers = layers.layers
    _check_head(layers)
    c, r = interval.center, interval.radius
    for layer in layers:
        if isinstance(layer, Affine):
            W = layer.weight
            c, r = c @ W.T + layer.b, r @ np.abs(W).T
        else:
            lo, hi = _act(layer.act, c - r), _act(layer.act, c + r)
            c, r = (hi + lo) / 2, (hi - lo) / 2
    return Interval(c - r, c + r)


@dataclass
class IBPCache:
    steps: list
    y: np.ndarray
    diff: np.ndarray
    c_last: np.ndarray
    r_last: np.ndarray


def ibp_margin_from_features(head, z, y, radius):
    """Lower bounds m_j on f_y - f_j over the box z +/- radius (m_y = +inf).

    The last affine layer is handled through the row differences W_y - W_j
    rather than separately bounding each logit.
    Returns ``(margins, cache)``; pass the cache to :func:`ibp_margin_backward`.
    """
    _check_head(head)
    if not head or not isinstance(head[-1], Affine):
        raise UncertifiableError("IBP head must end with an affine layer")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y).astype(int).reshape(-1)
    c = z
    r = np.broadcast_to(np.asarray(radius, dtype=np.float64).reshape(-1, 1), z.shape).copy()
    steps = []
    for layer in head[:-1]:
        if isinstance(layer, Affine):
            steps.append(("affine", layer, c, r))
            W = layer.weight
            c, r = c @ W.T + layer.b, r @ np.abs(W).T
        else:
            lo, hi = _act(layer.act, c - r), _act(layer.act, c + r)
            steps.append(("act", layer, c - r, c + r, lo, hi))
            c, r = (hi + lo) / 2, (hi - lo) / 2
    last = head[-1]
    W = last.weight
    n = len(y)
    diff = W[y][:, None, :] - W[None, :, :]                 # (n, C, h)
    m = np.einsum("nch,nh->nc", diff, c) - np.einsum("nch,nh->nc", np.abs(diff), r)
    m += last.b[y][:, None] - last.b[None, :]
    m[np.arange(n), y] = np.inf
    return m, IBPCache(steps, y, diff, c, r)


def ibp_margin_backward(head, cache: IBPCache, G):
    """Gradients of sum(G * m) w.r.t. the head parameters and the feature centre z.

    Entries of ``G`` at the label column are ignored.
    """
    y = cache.y
    n = len(y)
    G = np.array(G, dtype=np.float64)
    G[np.arange(n), y] = 0.0
    last = head[-1]
    diff, c, r = cache.diff, cache.c_last, cache.r_last
    sgn = np.sign(diff)
    dc = np.einsum("nc,nch->nh", G, diff)
    dr = -np.einsum("nc,nch->nh", G, np.abs(diff))
    # dm_j / d(W_y - W_j) = c - sign(diff) * r
    V = G[:, :, None] * (c[:, None, :] - sgn * r[:, None, :])
    dW = -V.sum(axis=0)
    np.add.at(dW, y, V.sum(axis=1))
    db = -G.sum(axis=0)
    np.add.at(db, y, G.sum(axis=1))
    grads = [None] * len(head)
    grads[-1] = {"W": last.scale * dW, "b": db}
    for idx in range(len(cache.steps) - 1, -1, -1):
        step = cache.steps[idx]
        if step[0] == "affine":
            layer, c_in, r_in = step[1], step[2], step[3]
            W = layer.weight
            grads[idx] = {"W": layer.scale * (dc.T @ c_in + np.sign(W) * (dr.T @ r_in)), "b": dc.sum(axis=0)}
            dc, dr = dc @ W, dr @ np.abs(W)
        else:
            layer, a, b, lo, hi = step[1:]
            dlo, dhi = (dc - dr) / 2, (dc + dr) / 2
            ga = dlo * Activation(layer.act).backward((a, lo), np.ones_like(a))[0]
            gb = dhi * Activation(layer.act).backward((b, hi), np.ones_like(b))[0]
            dc, dr = ga + gb, gb - ga
            grads[idx] = {}
    return grads, dc


def ibp_margin(net: Network, X, y, eps, k_trunc=None):
    """Worst-case margins of a backbone + head model under ||delta||_inf <= eps."""
    if net.head_split is None:
        raise UncertifiableError("network has no IBP head")
    z, cache = net.forward(X, layers=net.backbone, k_trunc=k_trunc, track_error=k_trunc is not None)
    slack = 0.0 if cache.trunc_error is None else cache.trunc_error
    m, _ = ibp_margin_from_features(net.head, z, y, eps * net.backbone_lipschitz + slack)
    return m


# -- nearest neighbour -----------------------------------------------------------

def nn_classifier(X_train, y_train, X):
    """f_c(x) = -min ||x - x_i||_inf over training points of class c."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train).astype(int)
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    n_classes = max(2, int(y_train.max()) + 1)
    out = np.empty((X.shape[0], n_classes))
    D = np.abs(X[:, None, :] - X_train[None]).max(axis=2)
    for c in range(n_classes):
        sel = y_train == c
        if not np.any(sel):
            raise ValueError(f"class {c} is absent from the dataset")
        out[:, c] = -D[:, sel].min(axis=1)
    return out[0] if single else out


# -- PGD ---------------------------------------------------------------------------

def _margin_loss_grad(net, X, y, k_trunc):
    out, cache = net.forward(X, k_trunc=k_trunc)
    n = len(y)
    other = out.copy()
    other[np.arange(n), y] = -np.inf
    j = other.argmax(axis=1)
    G = np.zeros_like(out)
    G[np.arange(n), j] = 1.0
    G[np.arange(n), y] -= 1.0
    return out, net.backward(cache, G).input


def pgd_attack(net, X, y, eps, steps=100, step_size=None, restarts=1, seed=0, box=None, k_trunc=None):
    """l_inf PGD on the margin loss max_{j != y} f_j - f_y with signed steps.

    Returns ``(X_adv, success)``. A sample counts as broken as soon as any
    iterate is misclassified; that iterate is returned.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y).astype(int).reshape(-1)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if box is None:
        box = net.domain
    lo = -np.inf if box is None else box[0]
    hi = np.inf if box is None else box[1]
    best = X.copy()
    success = predict(net(X, k_trunc=k_trunc)) != y
    if eps == 0 or steps == 0:
        return best, success
    step_size = eps / 25.0 if step_size is None else step_size
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        todo = ~success
        if not np.any(todo):
            break
        X0, yt = X[todo], y[todo]
        Xa = np.clip(X0 + rng.uniform(-eps, eps, X0.shape), lo, hi)
        found = np.zeros(len(yt), dtype=bool)
        found_x = Xa.copy()
        for _ in range(steps):
            out, g = _margin_loss_grad(net, Xa, yt, k_trunc)
            hit = (predict(out) != yt) & ~found
            found_x[hit] = Xa[hit]
            found |= hit
            Xa = np.clip(np.clip(Xa + step_size * np.sign(g), X0 - eps, X0 + eps), lo, hi)
        hit = (predict(net(Xa, k_trunc=k_trunc)) != yt) & ~found
        found_x[hit] = Xa[hit]
        found |= hit
        idx = np.flatnonzero(todo)
        best[idx] = np.where(found[:, None], found_x, Xa)
        success[idx[found]] = True
    return best, success


# -- reports -----------------------------------------------------------------------

@dataclass
class CertificationReport:
    labels: np.ndarray
    pred: np.ndarray
    margin: np.ndarray
    radius: np.ndarray
    certified: np.ndarray
    pgd_robust: np.ndarray
    eps: float
    meta: dict = field(default_factory=dict)

    @property
    def clean_accuracy(self):
        return float(np.mean(self.pred == self.labels))

    @property
    def pgd_accuracy(self):
        return float(np.mean(self.pgd_robust))

    @property
    def certified_accuracy(self):
        return float(np.mean(self.certified))

    def summary(self):
        return f"clean={self.clean_accuracy:.4f} pgd={self.pgd_accuracy:.4f} certified={self.certified_accuracy:.4f}"

    def check_ordering(self):
        correct = self.pred == self.labels
        if np.any(self.certified & ~self.pgd_robust) or np.any(self.pgd_robust & ~correct):
            raise SoundnessError("per-sample ordering certified <= pgd <= clean violated")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "label", "pred", "margin", "radius", "certified", "pgd_robust"])
            for i in range(len(self.labels)):
                w.writerow([i, int(self.labels[i]), int(self.pred[i]), repr(float(self.margin[i])),
                            repr(float(self.radius[i])), int(self.certified[i]), int(self.pgd_robust[i])])
            fh.write("# " + self.summary() + "\n")


def evaluate(net: Network, X, y, eps: float, k_trunc=10, pgd_steps=100, pgd_step_size=None,
             pgd_restarts=1, seed=0, box=None, attack=True, batch_size=1000):
    """Clean, PGD and certified accuracy of ``net`` at radius ``eps``.

    Lipschitz models certify with radius = (margin - 2 * truncation slack) / 2L
    and require radius > eps. Models with an MLP head certify through
    IBP worst-case margins (``radius`` is then NaN).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y).astype(int).reshape(-1)
    if len(y) == 0:
        raise ValueError("empty dataset")
    L = net.lipschitz_bound
    if net.head_split is not None:
        _check_head(net.head)
    elif not (np.isfinite(L) and L > 0):
        raise UncertifiableError("network has no finite Lipschitz bound and no IBP head")
    pred = np.empty(len(y), dtype=int)
    margin = np.empty(len(y))
    radius = np.full(len(y), np.nan)
    certified = np.zeros(len(y), dtype=bool)
    for s in range(0, len(y), batch_size):
        sl = slice(s, s + batch_size)
        out, cache = net.forward(X[sl], k_trunc=k_trunc, track_error=k_trunc is not None)
        slack = np.zeros(out.shape[0]) if cache.trunc_error is None else cache.trunc_error
        pred[sl] = predict(out)
        margin[sl] = top2_margin(out)
        correct = pred[sl] == y[sl]
        if net.head_split is None:
            radius[sl] = np.maximum(margin[sl] - 2.0 * slack, 0.0) / (2.0 * L)
            certified[sl] = correct & (radius[sl] > eps)
        else:
            m = ibp_margin(net, X[sl], y[sl], eps, k_trunc=k_trunc)
            certified[sl] = correct & (m.min(axis=1) > 0)
    if attack:
        _, broken = pgd_attack(net, X, y, eps, steps=pgd_steps, step_size=pgd_step_size,
                               restarts=pgd_restarts, seed=seed, box=box, k_trunc=k_trunc)
        pgd_robust = (pred == y) & ~broken
    else:
        pgd_robust = pred == y
    rep = CertificationReport(y, pred, margin, radius, certified, pgd_robust, float(eps),
                              {"lipschitz": L, "k_trunc": k_trunc})
    rep.check_ordering()
    return rep
