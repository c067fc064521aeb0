"""The training loop."""
from __future__ import annotations

import csv
import math

import numpy as np

from ..certify import ibp_margin_from_features, ibp_margin_backward
from ..layers import ForwardContext, MeanShiftBN
from ..network import Network
from ..numeric import RandomSource
from .config import TrainConfig
from .losses import cross_entropy, loss_ibp, loss_margin, mse_loss
from .optim import Adam, TrainState
from .schedules import schedules

LOG_COLUMNS = ["epoch", "loss", "clean_acc", "lambda", "p", "eps_train", "lr"]

SHUFFLE, AUGMENT = 1, 2


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, layer):
        self.epoch, self.batch, self.layer = epoch, batch, layer
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, first bad layer: {layer}")


def _first_bad_layer(net, X, masks, p, mode):
    ctx = ForwardContext(mode=mode, p=p, masks=masks or {}, train=True)
    H = X
    if not np.all(np.isfinite(H)):
        return "input"
    for i, layer in enumerate(net.layers):
        H, _ = layer.forward(H, ctx, i)
        if not np.all(np.isfinite(H)):
            return f"{i} ({layer!r})"
    return "loss"


def _batch_loss(net, Xb, yb, masks, cfg, sv, state, mode):
    """Forward + backward for one batch; returns (loss, logits, grads, ds)."""
    p = sv.p
    if cfg.loss == "ibp":
        if net.head_split is None:
            raise ValueError("loss 'ibp' needs a network with an MLP head")
        split = net.head_split
        z, cb = net.forward(Xb, mode=mode, masks=masks, p=p, train=True, layers=net.backbone)
        out, ch = net.forward(z, layers=net.head)
        m, ci = ibp_margin_from_features(net.head, z, yb, sv.eps * net.backbone_lipschitz)
        val, dout, dm, ds = loss_ibp(m, out, yb, sv.lam, state.s)
        gh = net.backward(ch, dout, start=split)
        gi, dz_ibp = ibp_margin_backward(net.head, ci, dm)
        head_grads = []
        for a, b in zip(gh.params, gi):
            merged = dict(a)
            for k, v in (b or {}).items():
                merged[k] = merged[k] + v
            head_grads.append(merged)
        gb = net.backward(cb, gh.input + dz_ibp)
        return val, out, gb.params + head_grads, ds
    out, cache = net.forward(Xb, mode=mode, masks=masks, p=p, train=True)
    ds = None
    if cfg.loss == "margin":
        val, dout, ds = loss_margin(out, yb, sv.lam, state.s, cfg.theta)
    elif cfg.loss == "ce":
        ce, g = cross_entropy(out, yb)
        val, dout = float(ce.mean()), g / len(yb)
    else:
        val, dout = mse_loss(out, yb)
    return val, out, net.backward(cache, dout).params, ds


def fit(net: Network, X, y, cfg: TrainConfig, augment=None, callback=None):
    """Train ``net`` in place; returns ``(net, log)`` with one dict per epoch.

    ``augment(batch, rng)`` optionally transforms each batch (e.g. random
    crops); its generator is addressed by (seed, epoch, batch index).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    y = y.astype(np.float64) if cfg.loss == "mse" else y.astype(int)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    rng = RandomSource(cfg.seed)
    opt = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    state = TrainState()
    nb = math.ceil(n / cfg.batch_size)
    use_masks = cfg.stochastic and bool(net.mask_layers())
    mode = "stochastic" if cfg.stochastic else "exact"
    log = []
    writer = None
    if cfg.log_path:
        fh = open(cfg.log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(cfg.epochs):
            state.epoch = epoch
            order = rng.stream(epoch, 0, SHUFFLE).permutation(n)
            tot, correct = 0.0, 0
            for b in range(nb):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                Xb, yb = X[idx], y[idx]
                if augment is not None:
                    Xb = augment(Xb, rng.stream(epoch, b, AUGMENT))
                sv = schedules(epoch + b / nb, cfg)
                state.lam, state.p, state.eps, state.lr = sv.lam, sv.p, sv.eps, sv.lr
                masks = net.sample_masks(rng, epoch, idx) if use_masks else None
                val, out, grads, ds = _batch_loss(net, Xb, yb, masks, cfg, sv, state, mode)
                if not np.isfinite(val) or any(
                    g is not None and not all(np.all(np.isfinite(a)) for a in g.values()) for g in grads
                ):
                    raise TrainingDivergedError(epoch, b, _first_bad_layer(net, Xb, masks, sv.p, mode))
                opt.step(net, grads, state, sv.lr, ds)
                tot += val * len(idx)
                if cfg.loss != "mse":
                    correct += int((np.argmax(out, axis=1) == yb).sum())
            sv = schedules(epoch, cfg)
            row = {"epoch": epoch, "loss": tot / n, "clean_acc": correct / n if cfg.loss != "mse" else float("nan"),
                   "lambda": sv.lam, "p": sv.p, "eps_train": sv.eps, "lr": sv.lr}
            log.append(row)
            if writer:
                writer.writerow([row[c] for c in LOG_COLUMNS])
                fh.flush()
            if callback:
                callback(row)
    finally:
        if writer:
            fh.close()
    net.training_complete = True
    net.meta["loss_scale"] = state.s
    if any(isinstance(l, MeanShiftBN) for l in net.layers):
        finalize_running_mean(net, X, k_trunc=cfg.k_trunc)
    net.bump()
    return net, log


def finalize_running_mean(net: Network, X, k_trunc=10, batch_size=2048):
    """Set every BN running mean from one inference pass over ``X`` (layer by layer)."""
    if not net.training_complete:
        raise RuntimeError("finalize_running_mean called before training completed")
    H = np.asarray(X, dtype=np.float64)
    ctx = ForwardContext(mode="exact", k_trunc=k_trunc)
    for i, layer in enumerate(net.layers):
        if isinstance(layer, MeanShiftBN):
            layer.running_mean = H.mean(axis=0)
        if i == len(net.layers) - 1 or not any(isinstance(l, MeanShiftBN) for l in net.layers[i + 1 :]):
            break
        H = np.concatenate([layer.forward(H[s : s + batch_size], ctx, i)[0] for s in range(0, H.shape[0], batch_size)])
    net.bump()
