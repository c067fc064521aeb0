"""Standard Lipschitz networks: the tight constructions and the impossibility checks.

"Standard" means constrained affine layers (row l1 norms <= 1) composed
with 1-Lipschitz elementwise activations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from ..layers import Affine, MaxMin, PiecewiseLinear
from ..network import Network, count_maxmin_depth, is_standard
from .boolean import BooleanFunction, SymmetricBooleanFunction, boolean_cube


def level_set(d: int, k: int) -> np.ndarray:
    """All Boolean vectors with exactly k ones, in lexicographic order."""
    rows = []
    for S in combinations(range(d), k):
        x = np.zeros(d)
        x[list(S)] = 1.0
        rows.append(x)
    rows.sort(key=tuple)
    return np.array(rows).reshape(-1, d)


def _symmetric(g) -> SymmetricBooleanFunction:
    if isinstance(g, SymmetricBooleanFunction):
        return g
    if isinstance(g, BooleanFunction):
        return g.to_symmetric()
    raise TypeError("expected a symmetric Boolean function")


def tight_symmetric_net(g) -> Network:
    """One constrained affine layer and an odd piecewise-linear activation.

    Classifies every point of {0,1}^d by the symmetric function ``g`` with
    output margin exactly 1/d.
    """
    g = _symmetric(g)
    if g.is_constant:
        raise ValueError("constant function: nothing to classify")
    d = g.d
    W = np.vstack([-np.ones(d) / d, np.ones(d) / d])
    b = np.array([-1.0 / d, 1.0 / d])
    # sigma(j/d) = (2 g_{j-1} - 1) / 2d for j >= 1, sigma(0) = 0, odd, flat beyond (d+1)/d
    j = np.arange(1, d + 2)
    pos = (2.0 * g.g[j - 1] - 1.0) / (2 * d)
    knots = np.concatenate([-j[::-1] / d, [0.0], j / d])
    values = np.concatenate([-pos[::-1], [0.0], pos])
    net = Network(d, [Affine(W, b, constrained=True), PiecewiseLinear(knots, values)], domain=(0.0, 1.0))
    net.meta["construction"] = "tight symmetric"
    return net


def tight_linear_orderstat(d: int, k: int) -> Network:
    """f(x) = 1/2 + (sum_i x_i - k + 1/2) / d, the best standard approximation of x_(k)."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    aff = Affine(np.ones((1, d)) / d, [0.5 + (0.5 - k) / d], constrained=True)
    return Network(d, [aff], domain=(0.0, 1.0))


def separating_levels(g) -> tuple[int, int]:
    """Adjacent levels (p, q), p = q + 1, with g_p != g_q; the lowest such q."""
    g = _symmetric(g)
    if g.is_constant:
        raise ValueError("constant function has no separating levels")
    for q in range(g.d):
        if g.g[q] != g.g[q + 1]:
            return q + 1, q
    raise AssertionError("unreachable")


@dataclass
class PairSet:
    u: np.ndarray
    v: np.ndarray
    d: int
    levels: tuple = field(default=(None, None))

    def __len__(self):
        return self.u.shape[0]

    def __iter__(self):
        return iter(zip(self.u, self.v))

    def diff_sum_norm(self) -> float:
        """||sum_{(u,v)} |u - v| ||_inf"""
        return float(np.abs(self.u - self.v).sum(axis=0).max()) if len(self) else 0.0


def build_pair_set(d: int, p: int, q: int) -> PairSet:
    """All (u, v) with u in S_p, v in S_q and ||u - v||_1 = 1."""
    if p != q + 1 or not 0 <= q < d:
        raise ValueError("need p = q + 1 with 0 <= q < d")
    U, V = [], []
    for u in level_set(d, p):
        for i in np.flatnonzero(u):
            v = u.copy()
            v[i] = 0.0
            U.append(u)
            V.append(v)
    return PairSet(np.array(U), np.array(V), d, (p, q))


def compact_pair_set(d: int, p: int, q: int) -> PairSet:
    """At most d pairs sharing one anchor (lexicographically smallest valid choice)."""
    full = build_pair_set(d, p, q)
    if p >= -(-d // 2):
        anchor = level_set(d, p)[0]
        keep = np.all(full.u == anchor, axis=1)
    else:
        anchor = level_set(d, q)[0]
        keep = np.all(full.v == anchor, axis=1)
    return PairSet(full.u[keep], full.v[keep], d, (p, q))


def impossibility_dataset(g, compact: bool = False):
    """(X, y, pairs): the Boolean dataset S_p u S_q (or its compact subset) labelled by g."""
    g = _symmetric(g)
    p, q = separating_levels(g)
    pairs = compact_pair_set(g.d, p, q) if compact else build_pair_set(g.d, p, q)
    if compact:
        X = np.unique(np.vstack([pairs.u, pairs.v]), axis=0)
    else:
        X = np.vstack([level_set(g.d, q), level_set(g.d, p)])
    return X, g(X).astype(int), pairs


def verify_sum_inequality(net: Network, pairs: PairSet, tol: float = 1e-9) -> bool:
    """||sum |f(u) - f(v)| ||_inf <= ||sum |u - v| ||_inf for a standard network."""
    if not is_standard(net):
        raise TypeError("sum inequality applies to standard Lipschitz networks only")
    if len(pairs) == 0:
        return True
    lhs = np.abs(net(pairs.u) - net(pairs.v)).sum(axis=0).max()
    return bool(lhs <= pairs.diff_sum_norm() + tol)


@dataclass
class Witness:
    point: np.ndarray
    value: float         # observed gap (orderstat) or certified radius (boolean)
    bound: float
    holds: bool
    family: str
    detail: dict = field(default_factory=dict)


def _family(net):
    if is_standard(net):
        return "standard"
    if all(isinstance(l, (Affine, MaxMin)) for l in net.layers) and all(
        l.lipschitz() <= 1 + 1e-12 for l in net.layers if isinstance(l, Affine)
    ):
        return "maxmin"
    raise TypeError("witness search needs a standard or MaxMin network")


def impossibility_witness(net: Network, kind: str = "orderstat", k: int = 1, g=None, tol: float = 1e-9) -> Witness:
    """Search {0,1}^d for a point where the network must fall short.

    ``kind="orderstat"``: a corner where |f(x) - x_(k)| reaches the floor,
    1/2 - 1/2d for standard nets or 1/2 - 2^(M-2)/d for M-layer MaxMin nets.
    ``kind="boolean"``: for a two-output classifier and symmetric ``g``, the
    point of the impossibility dataset with the smallest certified radius,
    which must be at most 1/2d (standard nets only).
    """
    d = net.input_dim
    if d < 2:
        raise ValueError("witness search needs d >= 2")
    family = _family(net)
    if kind == "orderstat":
        X = boolean_cube(d)
        target = -np.sort(-X, axis=1)[:, k - 1]
        err = np.abs(net(X)[:, 0] - target)
        i = int(np.argmax(err))
        if family == "standard":
            bound = 0.5 - 0.5 / d
        else:
            M = count_maxmin_depth(net)
            bound = 0.5 - 2.0 ** (M - 2) / d
        return Witness(X[i], float(err[i]), bound, bool(err[i] >= bound - tol), family,
                       {"k": k, "depth": count_maxmin_depth(net)})
    if kind == "boolean":
        if family != "standard":
            raise TypeError("the Boolean radius bound is stated for standard networks")
        if g is None:
            raise ValueError("kind='boolean' needs the symmetric function g")
        X, y, _ = impossibility_dataset(g)
        out = net(X)
        from ..certify import margins_for_labels
        m = margins_for_labels(out, y)
        radius = np.maximum(m, 0.0) / (2.0 * net.lipschitz_bound)
        i = int(np.argmin(radius))
        bound = 0.5 / d
        return Witness(X[i], float(radius[i]), bound, bool(radius[i] <= bound + tol), family,
                       {"n_points": len(y)})
    raise ValueError(f"unknown witness kind {kind!r}")


def pair_set_size(d, p):
    return comb(d, p) * p
