"""SGD with momentum, L2 weight decay and polynomial learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    lr_power: float = 0.5
    max_iter: int = 1000
    momentum: float = 0.9
    weight_decay: float = 0.0002
    batch_size: int = 64

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def poly_lr(it, cfg: TrainConfig):
    if not 0 <= it < cfg.max_iter:
        raise ValueError(f"iteration {it} outside [0, {cfg.max_iter})")
    return cfg.base_lr * (1.0 - it / cfg.max_iter) ** cfg.lr_power


def sgd_step(weights, grads, velocity, it, cfg: TrainConfig):
    """Update ``weights`` in place and return them.

    ``weights``, ``grads`` and ``velocity`` are parallel sequences of arrays;
    ``velocity`` is updated in place as well.
    """
    lr = poly_lr(it, cfg)
    for w, g, v in zip(weights, grads, velocity):
        step = g + cfg.weight_decay * w if cfg.weight_decay else g
        v *= cfg.momentum
        v -= lr * step
        w += v
    return weights


class SGD:
    """Stateful wrapper holding one velocity buffer per parameter."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.cfg = cfg
        self.names = [k for k, _ in named_params]
        self.weights = [w for _, w in named_params]
        self.velocity = [np.zeros_like(w) for w in self.weights]

    def step(self, grads: dict, it):
        sgd_step(self.weights, [grads[k] for k in self.names], self.velocity, it, self.cfg)
