"""Two-layer l_inf-distance networks that represent Boolean functions and order statistics exactly."""
from __future__ import annotations

from itertools import combinations

import numpy as np

from ..layers import LinfDist
from ..network import Network
from .boolean import BooleanFunction

# Weights of a literal-disjunction neuron ||x - w||_inf - 1 on {0,1}^d.
POSITIVE_LITERAL_WEIGHT = -1.0
NEGATED_LITERAL_WEIGHT = 2.0
UNUSED_WEIGHT = 0.5
DISJUNCTION_BIAS = -1.0


def literal_disjunction_neuron(d, positive=(), negated=()):
    """(w, b) of a neuron computing OR of x_i (i in positive) and not x_j (j in negated).

    Indices are 0-based. On Boolean inputs the output is exactly 0 or 1.
    """
    positive, negated = set(positive), set(negated)
    if positive & negated:
        raise ValueError("a variable cannot appear both plain and negated")
    if not positive and not negated:
        raise ValueError("empty clause")
    w = np.full(d, UNUSED_WEIGHT)
    w[list(positive)] = POSITIVE_LITERAL_WEIGHT
    w[list(negated)] = NEGATED_LITERAL_WEIGHT
    return w, DISJUNCTION_BIAS


def _constant_zero_net(d):
    # ||(||x||, ||x - 1||)|| - 1 vanishes on the whole cube
    first = LinfDist(np.stack([np.zeros(d), np.ones(d)]), np.zeros(2))
    second = LinfDist(np.zeros((1, 2)), np.array([-1.0]))
    return Network(d, [first, second], domain=(0.0, 1.0))


def boolean_to_linf_net(f: BooleanFunction) -> Network:
    """Exact two-layer l_inf-distance net for ``f`` on {0,1}^d.

    Each minterm ``a`` gets a hidden neuron for the clause "x differs from a"
    (1 everywhere except at a); the output neuron ORs the negated clauses.
    """
    d = f.d
    terms = f.minterms()
    if terms.shape[0] == 0:
        return _constant_zero_net(d)
    W1 = np.empty((terms.shape[0], d))
    b1 = np.empty(terms.shape[0])
    for r, a in enumerate(terms):
        on = np.flatnonzero(a == 1)
        off = np.flatnonzero(a == 0)
        W1[r], b1[r] = literal_disjunction_neuron(d, positive=off, negated=on)
    w2, b2 = literal_disjunction_neuron(terms.shape[0], negated=range(terms.shape[0]))
    net = Network(d, [LinfDist(W1, b1), LinfDist(w2[None], [b2])], domain=(0.0, 1.0))
    net.meta["construction"] = f"boolean dnf, {terms.shape[0]} minterms"
    return net


def linf_max_neuron(d, c=10.0):
    """Single l_inf-distance neuron equal to max_i x_i whenever every x_i >= -c."""
    return LinfDist(np.full((1, d), -float(c)), [-float(c)])


def linf_min_neuron(d, c=10.0):
    """Single neuron equal to min_i x_i whenever every x_i <= c."""
    return LinfDist(np.full((1, d), float(c)), [-float(c)])


def order_statistic_linf_net(d: int, k: int, bound: float = 1.0) -> Network:
    """Two-layer net equal to the k-th largest coordinate on [-bound, bound]^d.

    Hidden unit S (one per k-subset) outputs -min_{i in S} x_i; the output
    unit returns -min_S of those, i.e. max_S min_{i in S} x_i.
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    if bound <= 0:
        raise ValueError("bound must be positive")
    C = 2.0 * bound + 1.0
    subsets = list(combinations(range(d), k))
    W1 = np.zeros((len(subsets), d))
    for r, S in enumerate(subsets):
        W1[r, list(S)] = C
    first = LinfDist(W1, np.full(len(subsets), -C))
    second = LinfDist(np.full((1, len(subsets)), C), [-C])
    net = Network(d, [first, second], domain=(-float(bound), float(bound)))
    net.meta["construction"] = f"order statistic k={k}"
    return net


def nn_classifier_net(X, y) -> Network:
    """Nearest-neighbour classifier f_c(x) = -min over class-c points of ||x - x_i||_inf.

    Exact for inputs in [0, 1]^d, where every distance lies in [0, 1].
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("nearest-neighbour classifier needs at least two classes")
    n_classes = int(classes.max()) + 1
    C = 3.0
    W2 = np.zeros((n_classes, X.shape[0]))
    for c in range(n_classes):
        if not np.any(y == c):
            raise ValueError(f"class {c} has no points")
        W2[c, y == c] = C
    return Network(X.shape[1], [LinfDist(X, np.zeros(X.shape[0])), LinfDist(W2, np.full(n_classes, -C))],
                   domain=(0.0, 1.0))
