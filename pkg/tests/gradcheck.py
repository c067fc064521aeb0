"""Central finite-difference checker shared by the gradient tests."""
import numpy as np

H = 1e-5
PROBES = 100
TOL = 1e-4
# denominator floor: at h=1e-5 cancellation noise in the difference is ~1e-10
FLOOR = 1e-5


def rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), FLOOR)


def probe(targets, objective, rng, probes=PROBES, h=H):
    """``targets``: list of (array, analytic gradient). Perturbs entries in place."""
    worst = 0.0
    sizes = np.array([t[0].size for t in targets], dtype=float)
    for _ in range(probes):
        t = rng.choice(len(targets), p=sizes / sizes.sum())
        arr, grad = targets[t]
        i = np.unravel_index(rng.integers(arr.size), arr.shape)
        old = arr[i]
        arr[i] = old + h
        fp = objective()
        arr[i] = old - h
        fm = objective()
        arr[i] = old
        worst = max(worst, rel_err(grad[i], (fp - fm) / (2 * h)))
    return worst


def check_network(net, X, rng, **fwd):
    """Max relative error of net.backward for J = sum(R * net(X)) over params and inputs."""
    X = np.array(X, dtype=np.float64)
    out, cache = net.forward(X, **fwd)
    R = rng.normal(size=out.shape)
    bundle = net.backward(cache, R)
    targets = [(X, bundle.input)]
    for li, layer in enumerate(net.layers):
        for name, arr in layer.params().items():
            targets.append((arr, bundle.params[li][name]))

    def J():
        return float((net.forward(X, **fwd)[0] * R).sum())

    return probe(targets, J, rng)
