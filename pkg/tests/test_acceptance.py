"""Acceptance criteria 1-11, one test each, at the required tolerances.

Every test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (and directly when this file is run as a script).
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from gradcheck import TOL, check_network, probe
from lipcert import certify, verify
from lipcert.constructions import (BooleanFunction, boolean_cube, boolean_to_linf_net, builtin, nn_classifier_net,
                                   random_function, tight_symmetric_net)
from lipcert.constructions.maxmin import batcher_comparators, maxmin_order_statistic_net, maxmin_sorting_net, zero_one_check
from lipcert.constructions.linf_nets import order_statistic_linf_net
from lipcert.layers import (Activation, Affine, LinfDist, MaxMin, MeanShiftBN, PiecewiseLinear, SortNet,
                            Standardize, geometric_weights)
from lipcert.network import Network, build_linf, build_maxmin, build_sortnet, build_standard, with_standardize
from lipcert.numeric import sort_desc
from lipcert.training import TrainConfig, fit
from lipcert.training.losses import loss_ibp, loss_margin, lp_relaxed_max, mse_loss

SEED = 20240


def rng_for(n):
    return np.random.default_rng([SEED, n])


def desc(X):
    return -np.sort(-X, axis=1)


# 1 ----------------------------------------------------------------------------------

def test_c01_estimator_unbiasedness():
    rng = rng_for(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        d = int(rng.integers(1, 11))
        rho = float(rng.uniform(0.0, 0.9))
        x = rng.exponential(1.0, d)
        exact = verify.mask_expectation(x, rho)
        s, _ = sort_desc(x)
        target = float(geometric_weights(rho, d) @ s)
        worst = max(worst, abs(exact - target) / abs(target))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 30
    assert record(1, ok, f"max rel error {worst:.2e} over 500 cases (<= 1e-9), {secs:.1f}s (< 30s)")


# 2 ----------------------------------------------------------------------------------

def test_c02_truncation_bound():
    rng = rng_for(2)
    bad, worst_ratio = 0, 0.0
    for _ in range(10_000):
        d = int(rng.integers(1, 60))
        k = int(rng.integers(1, d + 1))
        rho = float(rng.uniform(0.0, 0.95))
        s, _ = sort_desc(rng.exponential(1.0, d))
        w = geometric_weights(rho, d)
        # the deficit is the dropped tail; summing it directly avoids cancellation
        deficit = w[k:] @ s[k:]
        bad += not (0.0 <= deficit <= rho**k * s[0] * (1 + 1e-12))
        worst_ratio = max(worst_ratio, deficit / (rho**k * s[0]) if rho > 0 else 0.0)
    # the concrete setting: k = 10, rho = 0.3
    w = geometric_weights(0.3, 100)
    worst10 = 0.0
    for _ in range(10_000):
        d = int(rng.integers(11, 101))
        s, _ = sort_desc(rng.uniform(0, 1, d))
        worst10 = max(worst10, (w[10:d] @ s[10:]) / s[0])
    ok = bad == 0 and worst10 <= 5.9e-6
    assert record(2, ok, f"{bad} violations of 0 <= deficit <= rho^k||x|| in 1e4 cases; "
                         f"k=10, rho=0.3: max deficit/||x|| = {worst10:.3e} (<= 5.9e-6)")


# 3 ----------------------------------------------------------------------------------

def test_c03_boolean_representation():
    rng = rng_for(3)
    t0 = time.perf_counter()
    mism = 0
    for t in range(256):
        f = BooleanFunction(3, [(t >> i) & 1 for i in range(8)])
        mism += int(np.count_nonzero(boolean_to_linf_net(f)(f.inputs())[:, 0] != f.table))
    X8 = boolean_cube(8)
    for _ in range(1000):
        f = random_function(8, rng)
        mism += int(np.count_nonzero(boolean_to_linf_net(f)(X8)[:, 0] != f.table))
    secs = time.perf_counter() - t0
    ok = mism == 0 and secs < 120
    assert record(3, ok, f"{mism} mismatches over all 256 d=3 and 1000 random d=8 functions, {secs:.1f}s (< 120s)")


# 4 ----------------------------------------------------------------------------------

def test_c04_order_statistics():
    rng = rng_for(4)
    issues = []
    for d in range(2, 11):
        B = boolean_cube(d)
        T = desc(B)
        if not zero_one_check(batcher_comparators(d), d) or not np.array_equal(maxmin_sorting_net(d)(B), T):
            issues.append(f"maxmin sort d={d}")
        for k in range(1, d + 1):
            if not np.array_equal(order_statistic_linf_net(d, k)(B)[:, 0], T[:, k - 1]):
                issues.append(f"linf binary d={d} k={k}")
            if not np.array_equal(maxmin_order_statistic_net(d, k)(B)[:, 0], T[:, k - 1]):
                issues.append(f"maxmin binary d={d} k={k}")
    linf_err = 0.0
    for d in range(1, 7):
        X = rng.uniform(-1, 1, (10_000, d))
        T = desc(X)
        if d >= 2 and not np.array_equal(maxmin_sorting_net(d, (-1, 1))(X), T):
            issues.append(f"maxmin sort real d={d}")
        for k in range(1, d + 1):
            if d >= 2 and not np.array_equal(maxmin_order_statistic_net(d, k, (-1, 1))(X)[:, 0], T[:, k - 1]):
                issues.append(f"maxmin real d={d} k={k}")
            linf_err = max(linf_err, np.abs(order_statistic_linf_net(d, k, 1.0)(X)[:, 0] - T[:, k - 1]).max())
    # the l_inf construction adds and removes an offset C = 3 on real inputs; one rounding at that scale
    tol = 2 * np.spacing(3.0)
    if linf_err > tol:
        issues.append(f"linf real error {linf_err:.1e}")
    ok = not issues
    assert record(4, ok, (f"binary d<=10 exact for both families; real d<=6 MaxMin exact, l_inf max error "
                          f"{linf_err:.1e} (<= {tol:.1e})") if ok else "; ".join(issues[:4]))


# 5 ----------------------------------------------------------------------------------

def test_c05_tightness_pair():
    worst = 0.0
    for d in range(2, 9):
        for name in ("or", "and", "majority", "parity", "threshold-2"):
            g = builtin(name, d)
            out = tight_symmetric_net(g)(g.inputs())
            m = (out[:, 1] - out[:, 0]) * (2.0 * g.table - 1.0)
            worst = max(worst, np.abs(m - 1.0 / d).max())
    ceiling_ok, detail = verify.check_radius_ceiling(rng_for(5), d=4, seeds=(0, 1, 2), epochs=500)
    ok = worst <= 1e-12 and ceiling_ok
    assert record(5, ok, f"tight margin |m - 1/d| <= {worst:.1e} for d=2..8; trained standard nets: {detail}")


# 6 ----------------------------------------------------------------------------------

def test_c06_approximation_floor():
    ok_lin, d_lin = verify.check_tight_linear(rng_for(6))
    ok_tr, d_tr = verify.check_approximation_floor(rng_for(6), seeds=(0, 1, 2), epochs=300)
    ok = ok_lin and ok_tr
    assert record(6, ok, f"tight linear: {d_lin}; trained (standard d=4 k=1 x3, MaxMin M=2 d=8 x3): {d_tr}")


# 7 ----------------------------------------------------------------------------------

def test_c07_sum_inequality():
    ok, detail = verify.check_sum_inequality(rng_for(7), trials=1000)
    assert record(7, ok, detail)


# 8 ----------------------------------------------------------------------------------

def _gradient_cases(rng):
    def mbn(d):
        return MeanShiftBN(d)

    W = rng.uniform(-1, 1, (3, 4))
    W /= np.abs(W).sum(axis=1, keepdims=True)
    nets = {
        "affine+relu": (Network(4, [Affine(rng.normal(size=(5, 4)), rng.normal(size=5)), Activation("relu"),
                                    Affine(rng.normal(size=(2, 5)))]), {}),
        "affine+tanh": (Network(4, [Affine(rng.normal(size=(5, 4)), scale=0.5), Activation("tanh")]), {}),
        "affine+abs": (Network(4, [Affine(rng.normal(size=(5, 4))), Activation("abs")]), {}),
        "pwl": (Network(3, [PiecewiseLinear([-1, 0, 1, 2], [0.5, 0, 0.3, -0.2]), Affine(rng.normal(size=(2, 3)))]), {}),
        "maxmin": (build_maxmin(4, [6], 2, group_size=2, seed=1), {}),
        "linfdist p=8": (Network(4, [LinfDist(rng.normal(size=(5, 4))), mbn(5), LinfDist(rng.normal(size=(2, 5)))]),
                         {"p": 8.0, "train": True}),
        "sortnet exact": (Network(5, [SortNet(rng.normal(size=(6, 5)), 0.3), mbn(6), SortNet(rng.normal(size=(2, 6)), 0.3)]),
                          {"train": True}),
        "sortnet truncated": (Network(5, [SortNet(rng.normal(size=(6, 5)), 0.3)]), {"k_trunc": 2}),
        "sortnet explicit": (Network(4, [SortNet(rng.normal(size=(3, 4)), weights=W)]), {}),
        "standardize": (Network(3, [Standardize([0.1, 0.2, 0.3], [0.5, 1.0, 2.0]), Affine(rng.normal(size=(2, 3)))]), {}),
        "sortnet+head": (build_sortnet(4, [6], 3, seed=2, head_hidden=5), {"train": True}),
    }
    sn = build_sortnet(5, [6], 3, rho=0.3, seed=3)
    masks = {i: rng.random((4, sn.layers[i].B.shape[1])) < 0.7 for i in sn.mask_layers()}
    nets["sortnet stochastic p=8"] = (sn, {"mode": "stochastic", "masks": masks, "p": 8.0, "train": True})
    return nets


def test_c08_gradient_checks():
    rng = rng_for(8)
    errs = {}
    for name, (net, kw) in _gradient_cases(rng).items():
        errs[name] = check_network(net, rng.normal(size=(4, net.input_dim)), rng, **kw)
    z = rng.normal(size=(6, 3))
    y = z.argmax(axis=1)
    y[-2:] = (y[-2:] + 1) % 3
    s = np.array([1.3])
    _, dz, ds = loss_margin(z, y, 0.2, s[0], 0.6)
    errs["loss_margin"] = probe([(z, dz), (s, np.array([ds]))], lambda: loss_margin(z, y, 0.2, s[0], 0.6)[0], rng)
    m = rng.uniform(-1, 2, (6, 3))
    _, dz, dm, ds = loss_ibp(m, z, y, 0.2, s[0])
    dm[np.arange(6), y] = 0
    errs["loss_ibp"] = probe([(z, dz), (m, dm), (s, np.array([ds]))], lambda: loss_ibp(m, z, y, 0.2, s[0])[0], rng)
    t = rng.normal(size=z.shape)
    _, g = mse_loss(z, t)
    errs["mse"] = probe([(z, g)], lambda: mse_loss(z, t)[0], rng)
    x = rng.uniform(0.1, 1, 6)
    _, g = lp_relaxed_max(x, 8.0)
    errs["lp max p=8"] = probe([(x, g)], lambda: lp_relaxed_max(x, 8.0)[0], rng)
    head = build_sortnet(3, [4], 3, seed=4, head_hidden=5).head
    feat = rng.normal(size=(5, 4))
    yy = rng.integers(0, 3, 5)
    mm, cache = certify.ibp_margin_from_features(head, feat, yy, 0.1)
    G = rng.normal(size=mm.shape)
    grads, dfeat = certify.ibp_margin_backward(head, cache, G)
    G[np.arange(5), yy] = 0

    def J():
        v, _ = certify.ibp_margin_from_features(head, feat, yy, 0.1)
        v[np.arange(5), yy] = 0
        return float((v * G).sum())

    targets = [(feat, dfeat)] + [(a, g[n]) for l, g in zip(head, grads) for n, a in l.params().items()]
    errs["ibp margin"] = probe(targets, J, rng)
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= TOL
    assert record(8, ok, f"{len(errs)} layer/loss checks x 100 probes; worst {worst}: {errs[worst]:.1e} (<= 1e-4)")


# 9 ----------------------------------------------------------------------------------

def test_c09_conversions():
    ok, detail = verify.check_conversions(rng_for(9), n=10_000)
    assert record(9, ok, detail + " (<= 1e-9 on 1e4 in-domain inputs)")


# 10 ---------------------------------------------------------------------------------

def test_c10_soundness_ordering():
    rng = rng_for(10)
    models = []
    X2 = boolean_cube(2)
    reps = [24, 8, 8, 8]
    toy, _ = fit(build_sortnet(2, [16], 2, seed=0), np.repeat(X2, reps, 0), np.repeat([0, 1, 1, 1], reps),
                 TrainConfig(epochs=200, batch_size=8, theta=1.0))
    models.append(("sortnet OR toy", toy, X2, np.array([0, 1, 1, 1]), (0.0, 0.2, 0.4, 0.6)))
    X3 = boolean_cube(4)
    y3 = (X3.sum(axis=1) >= 2).astype(int)
    models.append(("nn classifier", nn_classifier_net(X3, y3), X3, y3, (0.0, 0.3, 0.49, 0.7)))
    Xb = rng.uniform(0, 1, (100, 3))
    yb = (Xb[:, 0] + Xb[:, 1] > 1).astype(int)
    std_net, _ = fit(build_standard(3, [16], 2), Xb, yb, TrainConfig(epochs=40, batch_size=20, stochastic=False))
    models.append(("standard", std_net, Xb, yb, (0.0, 0.05, 0.2)))
    head_net, _ = fit(build_sortnet(3, [8], 2, seed=1, head_hidden=8), Xb, yb,
                      TrainConfig(epochs=40, batch_size=20, loss="ibp", eps_test=0.05))
    models.append(("sortnet+MLP head (IBP)", head_net, Xb, yb, (0.0, 0.02, 0.05)))
    violations = 0
    for name, net, X, y, epss in models:
        for eps in epss:
            rep = certify.evaluate(net, X, y, eps, pgd_steps=100, seed=SEED)
            try:
                rep.check_ordering()
            except certify.SoundnessError:
                violations += 1
            violations += not (rep.certified_accuracy <= rep.pgd_accuracy <= rep.clean_accuracy)
    # IBP containment: 1000 perturbed outputs per head
    outside = 0
    for net, X, y in ((head_net, Xb[:20], yb[:20]), (build_sortnet(5, [6], 4, seed=5, head_hidden=7), None, None)):
        if X is None:
            for l in net.layers:
                if isinstance(l, MeanShiftBN):
                    l.running_mean = rng.normal(size=l.dim) * 0.1
            X = rng.uniform(0, 1, (20, 5))
            y = rng.integers(0, 4, 20)
        eps = 0.05
        m = certify.ibp_margin(net, X, y, eps, k_trunc=10)
        for _ in range(1000):
            out = net(np.clip(X + rng.uniform(-eps, eps, X.shape), -np.inf, np.inf), k_trunc=10)
            true = out[np.arange(len(y)), y][:, None] - out
            true[np.arange(len(y)), y] = np.inf
            outside += int(np.count_nonzero(true < m - 1e-9))
    ok = violations == 0 and outside == 0
    n_eval = sum(len(m[-1]) for m in models)
    assert record(10, ok, f"{violations} ordering violations over {n_eval} (model, eps) pairs; "
                          f"{outside} IBP bound violations over 2 heads x 1000 samples")


# 11 ---------------------------------------------------------------------------------

MNIST_DIR = Path(os.environ.get("LIPCERT_MNIST_DIR", Path(__file__).resolve().parents[1] / "data" / "mnist"))
MNIST_MEAN, MNIST_STD = 0.1307, 0.3081


def test_c11_desk_scale_mnist():
    from lipcert import data
    try:
        train = data.load_mnist(*data.find_mnist(MNIST_DIR, "train"))
        test = data.load_mnist(*data.find_mnist(MNIST_DIR, "test"))
    except (FileNotFoundError, data.IDXError) as exc:
        record(11, False, f"MNIST not available ({exc}); set LIPCERT_MNIST_DIR to the IDX files")
        pytest.fail(f"criterion 11 needs the MNIST IDX files: {exc}")
    t0 = time.perf_counter()
    cfg = TrainConfig.preset("mnist-0.1", epochs=50, batch_size=512, seed=0)
    net = with_standardize(build_sortnet(784, [512, 512], 10, rho=cfg.rho, seed=0), MNIST_MEAN, MNIST_STD)
    net.domain = (0.0, 1.0)
    net, _ = fit(net, train.X, train.y, cfg)
    rep = certify.evaluate(net, test.X, test.y, 0.1, k_trunc=10, pgd_steps=0, attack=False, box=(0.0, 1.0))
    minutes = (time.perf_counter() - t0) / 60
    ok = rep.clean_accuracy >= 0.95 and rep.certified_accuracy >= 0.80 and minutes <= 60
    assert record(11, ok, f"clean {rep.clean_accuracy:.4f} (>= 0.95), certified@0.1 {rep.certified_accuracy:.4f} "
                          f"(>= 0.80), {minutes:.1f} min (<= 60)")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
