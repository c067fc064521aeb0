"""Runnable checks of the representation results and impossibility bounds.

Each check returns ``(passed, detail)``; :func:`run_suite` collects them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import certify
from .constructions import (
    boolean_cube,
    boolean_to_linf_net,
    builtin,
    build_pair_set,
    groupsort_to_sortnet,
    impossibility_dataset,
    impossibility_witness,
    linfnet_to_sortnet,
    maxmin_boolean_net,
    maxmin_order_statistic_net,
    maxmin_sorting_net,
    order_statistic_linf_net,
    random_function,
    tight_linear_orderstat,
    tight_symmetric_net,
    verify_sum_inequality,
)
from .constructions.boolean import BooleanFunction
from .constructions.maxmin import batcher_comparators, zero_one_check
from .constructions.standard import PairSet
from .layers import MeanShiftBN, geometric_weights
from .network import build_linf, build_maxmin, build_standard
from .numeric import sort_desc
from .training import TrainConfig, fit


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


# -- oracles ------------------------------------------------------------------------

def mask_expectation(x, rho):
    """E[max_{i kept} x_i] with each coordinate kept w.p. 1 - rho, by enumerating all masks."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    S = boolean_cube(d).astype(bool)
    keep = 1.0 - rho
    prob = np.prod(np.where(S, keep, rho), axis=1)
    vals = np.where(S, x[None], 0.0).max(axis=1)
    return float(prob @ vals)


def geometric_sort_value(x, rho):
    s, _ = sort_desc(x)
    return float(geometric_weights(rho, s.size) @ s)


# -- property checks ------------------------------------------------------------------

def check_unbiasedness(rng, trials=500):
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 11))
        rho = float(rng.uniform(0.0, 0.9))
        x = rng.exponential(1.0, d)
        a, b = mask_expectation(x, rho), geometric_sort_value(x, rho)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return worst <= 1e-9, f"max relative error {worst:.2e} over {trials} cases"


def check_truncation(rng, trials=10_000):
    worst = 0.0
    bad = 0
    for _ in range(trials):
        d = int(rng.integers(1, 40))
        k = int(rng.integers(1, d + 1))
        rho = float(rng.uniform(0.0, 0.95))
        x = rng.exponential(1.0, d)
        s, _ = sort_desc(x)
        w = geometric_weights(rho, d)
        deficit = w[k:] @ s[k:]  # exact minus truncated, without the cancellation
        bound = rho**k * s[0]
        bad += not (0.0 <= deficit <= bound * (1 + 1e-12))
        worst = max(worst, deficit / s[0])
    return bad == 0, f"{bad} violations over {trials} cases; worst deficit/||x|| {worst:.2e}"


def check_boolean_linf(rng, n_random=100, dims=(4, 5, 6, 7, 8)):
    mism = 0
    for t in range(256):
        f = BooleanFunction(3, [(t >> i) & 1 for i in range(8)])
        mism += int(np.any(boolean_to_linf_net(f)(f.inputs())[:, 0] != f.table))
    for d in dims:
        for _ in range(n_random):
            f = random_function(d, rng)
            mism += int(np.any(boolean_to_linf_net(f)(f.inputs())[:, 0] != f.table))
    return mism == 0, f"{mism} mismatching functions (all 256 at d=3, {n_random} random per d in {list(dims)})"


def check_boolean_maxmin(rng):
    mism = 0
    for d in (1, 2, 3):
        for t in range(2 ** (2**d)):
            f = BooleanFunction(d, [(t >> i) & 1 for i in range(2**d)])
            mism += int(np.any(maxmin_boolean_net(f)(f.inputs())[:, 0] != f.table))
    for _ in range(200):
        f = random_function(4, rng)
        mism += int(np.any(maxmin_boolean_net(f)(f.inputs())[:, 0] != f.table))
    return mism == 0, f"{mism} mismatching functions at d <= 4"


def check_order_statistics(rng, max_binary_d=10, max_real_d=6, n_real=10_000):
    issues = []
    for d in range(2, max_binary_d + 1):
        if not zero_one_check(batcher_comparators(d), d):
            issues.append(f"batcher d={d}")
        B = boolean_cube(d)
        target = -np.sort(-B, axis=1)
        if not np.array_equal(maxmin_sorting_net(d)(B), target):
            issues.append(f"maxmin sort d={d}")
        for k in (1, (d + 1) // 2, d):
            if not np.array_equal(order_statistic_linf_net(d, k)(B)[:, 0], target[:, k - 1]):
                issues.append(f"linf k={k} d={d}")
    for d in range(1, max_real_d + 1):
        X = rng.uniform(-1, 1, (n_real, d))
        target = -np.sort(-X, axis=1)
        for k in range(1, d + 1):
            net = order_statistic_linf_net(d, k, 1.0)
            # the offset constant C costs at most one rounding at its magnitude
            tol = 2 * np.spacing(2 * 1.0 + 1.0)
            if np.abs(net(X)[:, 0] - target[:, k - 1]).max() > tol:
                issues.append(f"linf real k={k} d={d}")
            if d >= 2 and not np.array_equal(maxmin_order_statistic_net(d, k, (-1, 1))(X)[:, 0], target[:, k - 1]):
                issues.append(f"maxmin real k={k} d={d}")
    return not issues, "all agree" if not issues else "; ".join(issues[:5])


def check_sorting_schedule(rng):
    net = maxmin_sorting_net(8)
    ok = net.meta["depth"] == 6 and net.meta["n_comparators"] == 19
    s4 = batcher_comparators(4)
    ok &= s4 == [[(0, 1), (2, 3)], [(0, 2), (1, 3)], [(1, 2)]]
    return ok, f"d=8: depth {net.meta['depth']}, {net.meta['n_comparators']} comparators, 0-1 verified"


def check_tight_symmetric(rng):
    worst = 0.0
    for d in range(2, 9):
        for name in ("or", "and", "parity", "majority"):
            g = builtin(name, d)
            X = g.inputs()
            out = tight_symmetric_net(g)(X)
            m = (out[:, 1] - out[:, 0]) * (2.0 * g.table - 1.0)
            worst = max(worst, np.abs(m - 1.0 / d).max())
    return worst <= 1e-12, f"max |margin - 1/d| = {worst:.1e}"


def check_tight_linear(rng):
    worst = 0.0
    for d in range(2, 9):
        for k in range(1, d + 1):
            net = tight_linear_orderstat(d, k)
            B = boolean_cube(d)
            err = np.abs(net(B)[:, 0] - (-np.sort(-B, axis=1))[:, k - 1])
            worst = max(worst, abs(err.max() - (0.5 - 0.5 / d)))
            X = rng.uniform(0, 1, (2000, d))
            if np.abs(net(X)[:, 0] - (-np.sort(-X, axis=1))[:, k - 1]).max() > 0.5 - 0.5 / d + 1e-12:
                return False, f"interior error above floor at d={d}, k={k}"
    return worst <= 1e-12, f"corner error equals 1/2 - 1/2d (deviation {worst:.1e})"


def check_conversions(rng, n=10_000):
    worst = 0.0
    for G, hidden in ((2, [8]), (2, [8, 6]), (4, [8]), (3, [6, 9])):
        src = build_maxmin(5, hidden, 3, group_size=G, seed=int(rng.integers(1 << 30)))
        src.domain = (-1.0, 1.0)
        X = rng.uniform(-1, 1, (n, 5))
        worst = max(worst, np.abs(src(X) - groupsort_to_sortnet(src)(X)).max())
    src = build_linf(5, [8, 6], 3, seed=int(rng.integers(1 << 30)))
    for layer in src.layers:
        if isinstance(layer, MeanShiftBN):
            layer.running_mean = rng.normal(size=layer.dim)
    X = rng.normal(size=(n, 5))
    worst = max(worst, np.abs(src(X) - linfnet_to_sortnet(src)(X)).max())
    return worst <= 1e-9, f"max deviation {worst:.1e}"


def check_nn_radius(rng):
    for d in (2, 4, 6):
        f = random_function(d, rng)
        if f.is_constant:
            continue
        X, y = f.inputs(), f.table.astype(int)
        out = certify.nn_classifier(X, y, X)
        if np.any(certify.predict(out) != y) or np.abs(certify.certified_radius(out) - 0.5).max() > 1e-12:
            return False, f"nearest-neighbour radius not 1/2 at d={d}"
    return True, "radius 1/2 on every training point"


# -- impossibility checks ------------------------------------------------------------

def check_sum_inequality(rng, trials=1000):
    violations = 0
    for t in range(trials):
        d = int(rng.integers(1, 7))
        act = ("relu", "abs", "tanh", "identity")[t % 4]
        net = build_standard(d, [int(rng.integers(1, 9)) for _ in range(int(rng.integers(0, 3)))],
                             int(rng.integers(1, 4)), activation=act, seed=int(rng.integers(1 << 30)))
        for layer in net.layers:
            if hasattr(layer, "constrained"):
                layer.W *= rng.uniform(0.5, 3.0)
        net.project_weights()
        m = int(rng.integers(1, 50))
        u = rng.integers(0, 2, (m, d)).astype(float) if t % 2 else rng.uniform(-2, 2, (m, d))
        v = rng.integers(0, 2, (m, d)).astype(float) if t % 2 else rng.uniform(-2, 2, (m, d))
        violations += not verify_sum_inequality(net, PairSet(u, v, d))
    return violations == 0, f"{violations} violations over {trials} random networks"


def train_standard_classifier(X, y, seed, hidden=(16,), activation="relu", epochs=500):
    net = build_standard(X.shape[1], hidden, 2, activation=activation, seed=seed)
    reps = max(1, 64 // len(y))
    # a threshold a bit above the best achievable margin 1/d keeps every point correct
    cfg = TrainConfig(epochs=epochs, batch_size=64, lr=0.02, theta=1.2 / X.shape[1], lambda0=0.1, stochastic=False,
                      weight_decay=0.0, seed=seed)
    fit(net, np.repeat(X, reps, 0), np.repeat(y, reps), cfg)
    return net


def train_regressor(net, d, k, seed, epochs=300):
    rng = np.random.default_rng(seed)
    X = np.vstack([boolean_cube(d), rng.uniform(0, 1, (512, d))])
    t = -np.sort(-X, axis=1)[:, k - 1]
    cfg = TrainConfig(epochs=epochs, batch_size=128, lr=0.01, loss="mse", stochastic=False, weight_decay=0.0,
                      seed=seed)
    fit(net, X, t, cfg)
    return net


def check_radius_ceiling(rng, d=4, seeds=(0, 1, 2), epochs=500):
    g = builtin("or", d)
    X, y, _ = impossibility_dataset(g)
    worst, fitted = 0.0, 0
    for seed in seeds:
        for hidden, act in (((16,), "relu"), ((16, 16), "abs"), ((32,), "tanh")):
            net = train_standard_classifier(X, y, seed, hidden, act, epochs)
            fitted += int(np.all(certify.predict(net(X)) == y))
            w = impossibility_witness(net, "boolean", g=g)
            worst = max(worst, w.value)
            if not w.holds:
                return False, f"radius {w.value:.4f} exceeds 1/2d at seed {seed}"
    n = 3 * len(seeds)
    return True, f"largest dataset radius {worst:.4f} <= 1/2d = {0.5 / d:.4f}; {fitted}/{n} nets fit all points"


def check_approximation_floor(rng, seeds=(0, 1, 2), epochs=300):
    details = []
    for seed in seeds:
        net = train_regressor(build_standard(4, [16], 1, seed=seed), 4, 1, seed, epochs)
        w = impossibility_witness(net, "orderstat", k=1)
        details.append(w.value)
        if w.value < 0.5 - 0.5 / 4 - 1e-6:
            return False, f"standard witness gap {w.value:.4f} below floor"
    for seed in seeds:
        net = train_regressor(build_maxmin(8, [32], 1, seed=seed), 8, 1, seed, epochs)
        w = impossibility_witness(net, "orderstat", k=1)
        details.append(w.value)
        if w.value < 0.375 - 1e-6:
            return False, f"MaxMin witness gap {w.value:.4f} below 0.375"
    return True, "witness gaps " + ", ".join(f"{v:.3f}" for v in details)


PROPS = {
    "unbiasedness": check_unbiasedness,
    "truncation": check_truncation,
    "boolean_to_linf_net": check_boolean_linf,
    "maxmin_boolean_net": check_boolean_maxmin,
    "order_statistics": check_order_statistics,
    "maxmin_sorting_net": check_sorting_schedule,
    "tight_symmetric_net": check_tight_symmetric,
    "tight_linear_orderstat": check_tight_linear,
    "conversions": check_conversions,
    "nn_classifier": check_nn_radius,
}

IMPOSSIBILITY = {
    "sum_inequality": check_sum_inequality,
    "radius_ceiling": check_radius_ceiling,
    "approximation_floor": check_approximation_floor,
}

SUITES = {"props": PROPS, "impossibility": IMPOSSIBILITY, "all": {**PROPS, **IMPOSSIBILITY}}


def run_suite(name="all", seed=0, out=None):
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    results = []
    for check, fn in SUITES[name].items():
        rng = np.random.default_rng([seed, len(results)])
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failure of that check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(check, bool(ok), detail, time.perf_counter() - t0)
        results.append(res)
        if out:
            out(res.line())
    return results
