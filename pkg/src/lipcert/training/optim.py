"""Adam with decoupled weight decay and post-step projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrainState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    log_s: float = 0.0          # loss scale s = exp(log_s) > 0, starts at 1
    step: int = 0
    epoch: int = 0
    lam: float = 0.0
    p: float = float("inf")
    eps: float = 0.0
    lr: float = 0.0

    @property
    def s(self):
        return float(np.exp(self.log_s))


class Adam:
    def __init__(self, beta1=0.9, beta2=0.99, eps=1e-10, weight_decay=0.0):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay

    def update(self, key, param, grad, state: TrainState, lr, decay=True):
        """In-place Adam update of ``param``; ``state.step`` must already count this step."""
        if param.shape != grad.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(param)
            state.v[key] = np.zeros_like(param)
        v = state.v[key]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        mhat = m / (1.0 - self.beta1**state.step)
        vhat = v / (1.0 - self.beta2**state.step)
        if decay and self.weight_decay:
            param -= lr * self.weight_decay * param
        param -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def step(self, net, bundle, state: TrainState, lr, ds=None):
        """One step over every network parameter (plus the loss scale when ``ds`` is given)."""
        state.step += 1
        for i, name, arr, decay in net.parameters():
            g = bundle[i].get(name) if bundle[i] is not None else None
            if g is None:
                continue
            self.update((i, name), arr, g, state, lr, decay)
        if ds is not None:
            ls = np.array([state.log_s])
            self.update("log_s", ls, np.array([ds * state.s]), state, lr, decay=False)
            state.log_s = float(ls[0])
        net.project_weights()
