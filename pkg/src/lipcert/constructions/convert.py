"""Rewrite GroupSort and l_inf-distance networks as SortNets computing the same function."""
from __future__ import annotations

import numpy as np

from ..layers import Affine, LinfDist, MaxMin, MeanShiftBN, SortNet
from ..network import Network


def _split_groupsort(net):
    affines, groups = [], []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Affine):
            affines.append(layer)
        elif isinstance(layer, MaxMin):
            if not affines or len(groups) != len(affines) - 1 or not isinstance(net.layers[i - 1], Affine):
                raise TypeError("expected alternating affine / GroupSort layers")
            groups.append(layer.group_size)
        else:
            raise TypeError(f"not a GroupSort network: found {layer!r}")
    if not affines or len(groups) != len(affines) - 1:
        raise TypeError("a GroupSort network must start and end with affine layers")
    return affines, groups


def groupsort_bias_constant(net, bound):
    """Offset C that keeps GroupSort groups apart after sorting.

    4 * R + 1, with R a bound on every coordinate fed to a sort: the input
    box radius and the propagated pre-activation magnitudes.
    """
    affines, _ = _split_groupsort(net)
    R = r = float(bound)
    for aff in affines[:-1]:
        r = np.abs(aff.weight).sum(axis=1).max() * r + np.abs(aff.b).max(initial=0.0)
        R = max(R, r)
    return 4.0 * R + 1.0


def groupsort_to_sortnet(net: Network, bound: float | None = None) -> Network:
    """SortNet (identity activation, explicit weights) equal to ``net`` on [-bound, bound]^d.

    ``bound`` defaults to the larger endpoint magnitude of ``net.domain``.
    """
    if bound is None:
        if net.domain is None:
            raise ValueError("GroupSort conversion needs a bounded input box")
        bound = max(abs(net.domain[0]), abs(net.domain[1]))
    affines, groups = _split_groupsort(net)
    C = groupsort_bias_constant(net, bound)
    d_in = net.input_dim
    # beta: the offset each SortNet layer adds before sorting, relative to the source
    beta = -C * np.arange(1, d_in + 1, dtype=np.float64)
    shift = beta
    layers = []
    for l, aff in enumerate(affines):
        W = aff.weight
        if l == 0:
            B_row = beta
        else:
            prev = affines[l - 1]
            width = prev.W.shape[0]
            g = -C * (np.arange(width) // groups[l - 1]).astype(np.float64)
            B_row = g + prev.b - prev.weight @ shift
            shift = g
        bias_out = None if l < len(affines) - 1 else aff.b - W @ shift
        layers.append(SortNet(np.tile(B_row, (W.shape[0], 1)), activation="identity",
                              bias_out=bias_out, weights=W.copy()))
    out = Network(d_in, layers, domain=(-float(bound), float(bound)) if net.domain is None else net.domain)
    out.meta.update(source="groupsort", C=C)
    return out


def linfnet_to_sortnet(net: Network) -> Network:
    """SortNet with weights e_1 and |.| activation equal to an l_inf-distance net.

    Mean-shift BN layers between distance layers are folded into the biases
    (they need a running mean).
    """
    dist = []
    for layer in net.layers:
        if isinstance(layer, LinfDist):
            dist.append([layer.W, layer.b.copy()])
        elif isinstance(layer, MeanShiftBN):
            if not dist:
                raise TypeError("BN before the first distance layer")
            if layer.running_mean is None:
                raise RuntimeError("BN layer has no running mean; finalize it first")
            dist[-1][1] = dist[-1][1] - layer.running_mean
        else:
            raise TypeError(f"not an l_inf-distance network: found {layer!r}")
    if not dist:
        raise TypeError("no distance layers")
    layers = []
    for l, (W, b) in enumerate(dist):
        B = -W if l == 0 else dist[l - 1][1][None, :] - W
        bias_out = dist[-1][1] if l == len(dist) - 1 else None
        layers.append(SortNet(B, rho=0.0, activation="abs", bias_out=bias_out))
    out = Network(net.input_dim, layers, domain=net.domain)
    out.meta["source"] = "linf"
    return out
