"""MaxMin (GroupSort, G=2) networks built from comparator schedules.

A comparator on wires (i, j) is one MaxMin pair fed by the affine rows
e_i and e_j. Wires not touched in a layer are paired with a constant
sentinel neuron (zero row, bias below the input box) so they pass through
the max side unchanged.
"""
from __future__ import annotations

import math

import numpy as np

from ..layers import Affine, MaxMin
from ..network import Network
from .boolean import BooleanFunction, boolean_cube


def batcher_comparators(d: int):
    """Batcher odd-even mergesort comparators (i, j), i < j, grouped into parallel layers.

    Applying every comparator as "min to i, max to j" sorts ascending.
    """
    if d < 1:
        raise ValueError("d must be positive")
    layers = []
    p = 1
    while p < d:
        k = p
        while k >= 1:
            layer = []
            for j in range(k % p, d - k, 2 * k):
                for i in range(min(k - 1, d - j - k - 1) + 1):
                    if (i + j) // (2 * p) == (i + j + k) // (2 * p):
                        layer.append((i + j, i + j + k))
            if layer:
                layers.append(layer)
            k //= 2
        p *= 2
    return layers


def apply_comparators(layers, X):
    """Run a comparator schedule on the rows of ``X`` (ascending result)."""
    Y = np.array(X, dtype=np.float64, copy=True)
    for layer in layers:
        for i, j in layer:
            lo = np.minimum(Y[:, i], Y[:, j])
            Y[:, j] = np.maximum(Y[:, i], Y[:, j])
            Y[:, i] = lo
    return Y


def zero_one_check(layers, d) -> bool:
    """0-1 principle: the schedule sorts everything iff it sorts every binary vector."""
    B = boolean_cube(d)
    Y = apply_comparators(layers, B)
    return bool(np.all(np.diff(Y, axis=1) >= 0))


def _select(width, positions, bias=None):
    W = np.zeros((len(positions), width))
    for r, pos in enumerate(positions):
        if pos is not None:
            W[r, pos] = 1.0
    b = np.zeros(len(positions)) if bias is None else np.asarray(bias, dtype=np.float64)
    return W, b


def maxmin_sorting_net(d: int, domain=(0.0, 1.0)) -> Network:
    """MaxMin network whose output is the descending sort of its input on ``domain``.

    ``net.meta["permutation"][r]`` is the comparator wire feeding output r, and
    ``net.meta["comparators"]`` the schedule. Outputs are undefined for inputs
    outside the box (see ``Network.in_domain``).
    """
    if d < 2:
        raise ValueError("sorting network needs d >= 2")
    lo, hi = float(domain[0]), float(domain[1])
    sentinel = lo - 1.0
    schedule = batcher_comparators(d)
    layers = []
    where = list(range(d))      # wire -> position in the current representation
    width = d
    for comps in schedule:
        touched = {w for c in comps for w in c}
        positions, bias, new_where = [], [], [None] * d
        for i, j in comps:
            # pair = (max, min): wire j takes the max, wire i the min
            positions += [where[i], where[j]]
            bias += [0.0, 0.0]
            new_where[j], new_where[i] = len(positions) - 2, len(positions) - 1
        for w in range(d):
            if w not in touched:
                positions += [where[w], None]
                bias += [0.0, sentinel]
                new_where[w] = len(positions) - 2
        W, b = _select(width, positions, bias)
        layers += [Affine(W, b, constrained=True), MaxMin(2)]
        where, width = new_where, len(positions)
    perm = [d - 1 - r for r in range(d)]   # descending output r <- ascending wire d-1-r
    W, b = _select(width, [where[w] for w in perm])
    layers.append(Affine(W, b, constrained=True))
    net = Network(d, layers, domain=(lo, hi))
    net.meta.update(comparators=schedule, permutation=perm,
                    depth=len(schedule), n_comparators=sum(map(len, schedule)))
    return net


def maxmin_order_statistic_net(d: int, k: int, domain=(0.0, 1.0)) -> Network:
    """MaxMin network computing x_(k), the k-th largest coordinate."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    net = maxmin_sorting_net(d, domain)
    last = net.layers[-1]
    net.layers[-1] = Affine(last.W[k - 1 : k], last.b[k - 1 : k], constrained=True)
    net.meta["order_statistic"] = k
    return net


def _tree_stage(groups, op, width):
    """One reduction level: pair up the values of every group.

    ``groups`` holds lists of affine expressions ``(coef dict, bias)`` over
    the current representation. Returns the affine layer rows and the
    groups after the MaxMin layer.
    """
    pad = 2.0 if op == "min" else -1.0
    rows, out = [], []
    for g in groups:
        items = list(g)
        if len(items) % 2:
            items.append(({}, pad))
        new = []
        for a, b in zip(items[::2], items[1::2]):
            rows += [a, b]
            pos = len(rows) - 2 if op == "max" else len(rows) - 1
            new.append(({pos: 1.0}, 0.0))
        out.append(new)
    W = np.zeros((len(rows), width))
    bias = np.zeros(len(rows))
    for r, (coef, c) in enumerate(rows):
        for j, v in coef.items():
            W[r, j] = v
        bias[r] = c
    return Affine(W, bias, constrained=True), out


def maxmin_boolean_net(f: BooleanFunction) -> Network:
    """MaxMin DNF network: literals, a min tree per minterm, then a max tree.

    Exact on {0,1}^d; at most d + ceil(log2 d) + 1 affine layers.
    """
    d = f.d
    terms = f.minterms()
    if terms.shape[0] == 0:
        return Network(d, [Affine(np.zeros((1, d)), [0.0], constrained=True)], domain=(0.0, 1.0))
    groups = []
    for a in terms:
        groups.append([({i: 1.0}, 0.0) if a[i] else ({i: -1.0}, 1.0) for i in range(d)])
    layers = []
    width = d
    for op in ("min", "max"):
        while max(len(g) for g in groups) > 1:
            aff, groups = _tree_stage(groups, op, width)
            layers += [aff, MaxMin(2)]
            width = aff.W.shape[0]
        if op == "min":
            groups = [[g[0] for g in groups]]
    (coef, c), = groups[0]
    W = np.zeros((1, width))
    for j, v in coef.items():
        W[0, j] = v
    layers.append(Affine(W, [c], constrained=True))
    net = Network(d, layers, domain=(0.0, 1.0))
    net.meta["construction"] = f"maxmin dnf, {terms.shape[0]} minterms"
    return net


def maxmin_depth_bound(d: int) -> int:
    return d + math.ceil(math.log2(d)) + 1 if d > 1 else 2
