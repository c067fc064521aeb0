"""Per-iteration schedules; ``epoch`` may be fractional."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .config import TrainConfig


@dataclass(frozen=True)
class ScheduleValues:
    lam: float
    p: float
    eps: float
    lr: float


def _progress(epoch, start, end):
    if end <= start:
        return 1.0 if epoch >= end else 0.0
    return min(max((epoch - start) / (end - start), 0.0), 1.0)


def lambda_at(epoch, cfg: TrainConfig):
    t = _progress(epoch, *cfg.phase)
    return cfg.lambda0 * cfg.lambda_end_ratio ** t


def p_at(epoch, cfg: TrainConfig):
    start, end = cfg.phase
    if epoch >= end:
        return math.inf
    t = _progress(epoch, start, end)
    return cfg.p_start * (cfg.p_end / cfg.p_start) ** t


def eps_at(epoch, cfg: TrainConfig):
    """Polynomial ramp (power beta) up to the mid point, then linear, slopes matched."""
    final = cfg.eps_train_factor * cfg.eps_test
    start, end = cfg.warmup
    if epoch <= start:
        return 0.0
    if epoch >= end:
        return final
    S = end - start
    m = cfg.eps_warmup_mid * S
    beta = cfg.eps_warmup_beta
    mid_value = final / (1.0 + beta * (S - m) / m)
    s = epoch - start
    if s < m:
        return mid_value * (s / m) ** beta
    return mid_value + (final - mid_value) * (s - m) / (S - m)


def lr_at(epoch, cfg: TrainConfig):
    t = min(max(epoch / cfg.epochs, 0.0), 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t))


def schedules(epoch, cfg: TrainConfig) -> ScheduleValues:
    return ScheduleValues(lambda_at(epoch, cfg), p_at(epoch, cfg), eps_at(epoch, cfg), lr_at(epoch, cfg))
