import math

import numpy as np
import pytest

from gradcheck import TOL, check_network, probe
from lipcert.layers import (Activation, Affine, LinfDist, MaxMin, MeanShiftBN, PiecewiseLinear, SortNet,
                            Standardize, geometric_weights)
from lipcert.network import Network, build_linf, build_maxmin, build_sortnet, build_standard
from lipcert.training.losses import loss_ibp, loss_margin, lp_relaxed_max, mse_loss
from lipcert import certify


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def single(layer, d):
    return Network(d, [layer])


def test_geometric_weights():
    w = geometric_weights(0.3, 5)
    assert np.isclose(w[0], 0.7) and np.isclose(w[1] / w[0], 0.3)
    assert w.sum() <= 1.0
    assert geometric_weights(0.0, 3).tolist() == [1.0, 0.0, 0.0]


def test_sortnet_rho_zero_is_max(rng):
    X = rng.normal(size=(10, 4))
    B = rng.normal(size=(3, 4))
    out = single(SortNet(B, rho=0.0), 4)(X)
    assert np.allclose(out, np.abs(X[:, None] + B[None]).max(axis=2))


def test_sortnet_explicit_weights_l1():
    with pytest.raises(ValueError):
        SortNet(np.zeros((1, 2)), weights=[[0.8, 0.4]])


def test_maxmin_sorts_groups():
    out = single(MaxMin(2), 4)(np.array([[1.0, 2.0, 5.0, 3.0]]))
    assert out.tolist() == [[2.0, 1.0, 5.0, 3.0]]
    with pytest.raises(ValueError):
        single(MaxMin(3), 4)


def test_affine_projection():
    a = Affine([[2.0, 2.0], [0.1, 0.2]], constrained=True)
    a.project()
    assert np.allclose(np.abs(a.W).sum(axis=1), [1.0, 0.3])
    assert a.lipschitz() == 1.0


def test_meanshift_requires_running_mean():
    with pytest.raises(RuntimeError):
        single(MeanShiftBN(2), 2)(np.zeros((1, 2)))


def test_standardize_lipschitz():
    s = Standardize([0.5, 0.5], [0.25, 0.5])
    assert s.lipschitz() == 4.0
    assert np.allclose(single(s, 2)(np.array([[1.0, 1.0]])), [[2.0, 1.0]])


# -- finite-difference checks ---------------------------------------------------------

@pytest.mark.parametrize("act", ["relu", "abs", "tanh", "identity"])
def test_grad_affine_activation(rng, act):
    net = Network(5, [Affine(rng.normal(size=(4, 5)), rng.normal(size=4), scale=0.7), Activation(act),
                      Affine(rng.normal(size=(3, 4)), rng.normal(size=3))])
    assert check_network(net, rng.normal(size=(6, 5)), rng) <= TOL


def test_grad_pwl(rng):
    net = Network(3, [PiecewiseLinear([-1.0, 0.0, 0.5, 2.0], [0.3, 0.0, 0.4, -0.1]),
                      Affine(rng.normal(size=(2, 3)))])
    assert check_network(net, rng.uniform(-1.5, 2.5, (6, 3)), rng) <= TOL


def test_grad_maxmin(rng):
    net = build_maxmin(4, [6, 6], 3, group_size=3, seed=1)
    assert check_network(net, rng.normal(size=(5, 4)), rng) <= TOL


@pytest.mark.parametrize("p", [8.0, math.inf])
def test_grad_linfdist(rng, p):
    net = Network(4, [LinfDist(rng.normal(size=(5, 4)), rng.normal(size=5)), MeanShiftBN(5),
                      LinfDist(rng.normal(size=(2, 5)))])
    assert check_network(net, rng.normal(size=(6, 4)), rng, p=p, train=True) <= TOL


@pytest.mark.parametrize("act", ["abs", "relu"])
def test_grad_sortnet_exact(rng, act):
    net = Network(6, [SortNet(rng.normal(size=(5, 6)), rho=0.3, activation=act, bias_out=rng.normal(size=5)),
                      MeanShiftBN(5), SortNet(rng.normal(size=(3, 5)), rho=0.4, activation=act)])
    assert check_network(net, rng.normal(size=(6, 6)), rng, train=True) <= TOL
    assert check_network(net, rng.normal(size=(6, 6)), rng, train=True, k_trunc=2) <= TOL


def test_grad_sortnet_explicit_weights(rng):
    W = rng.uniform(-1, 1, (3, 4))
    W /= np.abs(W).sum(axis=1, keepdims=True)
    net = single(SortNet(rng.normal(size=(3, 4)), weights=W, activation="abs"), 4)
    assert check_network(net, rng.normal(size=(6, 4)), rng) <= TOL


@pytest.mark.parametrize("p", [8.0, math.inf])
def test_grad_sortnet_stochastic(rng, p):
    net = build_sortnet(6, [8], 3, rho=0.3, seed=2)
    X = rng.normal(size=(6, 6))
    masks = {i: rng.random((6, net.layers[i].B.shape[1])) < 0.7 for i in net.mask_layers()}
    assert check_network(net, X, rng, mode="stochastic", masks=masks, p=p, train=True) <= TOL


def test_grad_sortnet_with_head(rng):
    net = build_sortnet(5, [6, 6], 3, rho=0.3, seed=3, head_hidden=7)
    assert check_network(net, rng.normal(size=(5, 5)), rng, train=True, k_trunc=3) <= TOL


def test_grad_standard_and_standardize(rng):
    net = build_standard(4, [6], 2, activation="tanh", seed=1)
    net.layers.insert(0, Standardize(rng.uniform(0, 1, 4), rng.uniform(0.5, 2, 4)))
    assert check_network(net, rng.normal(size=(5, 4)), rng) <= TOL


def test_grad_linf_builder(rng):
    net = build_linf(4, [6], 3, seed=0)
    assert check_network(net, rng.normal(size=(5, 4)), rng, p=8.0, train=True) <= TOL


# -- losses --------------------------------------------------------------------------

def _loss_probe(rng, f, arrays, grads):
    return probe(list(zip(arrays, grads)), f, rng)


def test_grad_loss_margin(rng):
    z = rng.normal(size=(8, 4))
    y = rng.integers(0, 4, 8)
    y[:4] = z[:4].argmax(axis=1)  # some gated samples
    s = np.array([1.7])
    _, dz, ds = loss_margin(z, y, 0.3, s[0], 0.6)
    err = _loss_probe(rng, lambda: loss_margin(z, y, 0.3, s[0], 0.6)[0], [z, s], [dz, np.array([ds])])
    assert err <= TOL


def test_grad_loss_ibp(rng):
    z = rng.normal(size=(8, 3))
    y = z.argmax(axis=1)
    y[-2:] = (y[-2:] + 1) % 3
    m = rng.uniform(-1, 1.5, (8, 3))
    s = np.array([0.8])
    _, dz, dm, ds = loss_ibp(m, z, y, 0.5, s[0])
    dm[np.arange(8), y] = 0.0
    f = lambda: loss_ibp(m, z, y, 0.5, s[0])[0]
    assert _loss_probe(rng, f, [z, m, s], [dz, dm, np.array([ds])]) <= TOL


def test_grad_mse(rng):
    out = rng.normal(size=(6, 2))
    t = rng.normal(size=(6, 2))
    _, g = mse_loss(out, t)
    assert _loss_probe(rng, lambda: mse_loss(out, t)[0], [out], [g]) <= TOL


def test_grad_lp_relaxed_max(rng):
    x = rng.uniform(0.1, 2.0, 7)
    _, g = lp_relaxed_max(x, 8.0)
    assert _loss_probe(rng, lambda: lp_relaxed_max(x, 8.0)[0], [x], [g]) <= TOL
    # huge entries stay finite
    v, _ = lp_relaxed_max(np.array([1e300, 1e300]), 1000.0)
    assert np.isfinite(v) and v >= 1e300
    with pytest.raises(ValueError):
        lp_relaxed_max(np.array([-1.0]), 8.0)
    with pytest.raises(ValueError):
        lp_relaxed_max(np.array([1.0]), 0.5)


def test_grad_ibp_margin_head(rng):
    net = build_sortnet(4, [5], 3, seed=4, head_hidden=6)
    head = net.head
    z = rng.normal(size=(5, 5))
    y = rng.integers(0, 3, 5)
    radius = rng.uniform(0.01, 0.2, 5)
    m, cache = certify.ibp_margin_from_features(head, z, y, radius)
    G = rng.normal(size=m.shape)
    grads, dz = certify.ibp_margin_backward(head, cache, G)
    G[np.arange(5), y] = 0.0
    targets = [(z, dz)]
    for layer, g in zip(head, grads):
        for name, arr in layer.params().items():
            targets.append((arr, g[name]))

    def J():
        mm, _ = certify.ibp_margin_from_features(head, z, y, radius)
        mm[np.arange(5), y] = 0.0
        return float((mm * G).sum())

    assert probe(targets, J, rng) <= TOL
