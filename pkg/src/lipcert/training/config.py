"""Training hyperparameters.

Defaults are the MNIST settings for eps = 0.1 (theta 0.6, rho 0.3,
lambda0 0.1); ``TrainConfig.preset("mnist-0.3")`` gives the eps = 0.3 ones.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 512
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-10
    weight_decay: float = 0.02
    theta: float = 0.6
    rho: float = 0.3
    lambda0: float = 0.1
    lambda_end_ratio: float = 0.01
    p_start: float = 8.0
    p_end: float = 1000.0
    # lambda/p phase in epochs; None -> 1/15 and 29/30 of the run
    phase_start: float | None = None
    phase_end: float | None = None
    eps_test: float = 0.1
    eps_warmup_start: float = 0.0
    eps_warmup_end: float | None = None
    eps_warmup_mid: float = 0.25
    eps_warmup_beta: float = 4.0
    eps_train_factor: float = 1.1
    loss: str = "margin"           # margin | ibp | mse | ce
    stochastic: bool = True
    k_trunc: int | None = 10
    augment_pad: int = 0
    seed: int = 0
    log_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.theta > 0:
            raise ConfigError("theta must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("rho must lie in [0, 1)")
        if not self.p_start >= 1.0:
            raise ConfigError("p_start must be >= 1")
        if self.loss not in ("margin", "ibp", "mse", "ce"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not 0.0 < self.eps_warmup_mid < 1.0:
            raise ConfigError("eps_warmup_mid must lie in (0, 1)")
        a, b = self.phase
        if b < a:
            raise ConfigError("phase_end precedes phase_start")

    @property
    def phase(self):
        a = self.epochs / 15.0 if self.phase_start is None else float(self.phase_start)
        b = self.epochs * 29.0 / 30.0 if self.phase_end is None else float(self.phase_end)
        return a, b

    @property
    def warmup(self):
        end = self.epochs / 3.0 if self.eps_warmup_end is None else float(self.eps_warmup_end)
        return float(self.eps_warmup_start), end

    @property
    def lambda_end(self):
        return self.lambda_end_ratio * self.lambda0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**d)

    @classmethod
    def preset(cls, name: str, **overrides):
        presets = {
            "mnist-0.1": dict(theta=0.6, rho=0.3, lambda0=0.1, eps_test=0.1),
            "mnist-0.3": dict(theta=0.9, rho=0.25, lambda0=0.02, eps_test=0.3),
        }
        if name not in presets:
            raise ConfigError(f"unknown preset {name!r}")
        return cls(**{**presets[name], **overrides})


def is_inf(p):
    return p is None or (isinstance(p, float) and math.isinf(p))
