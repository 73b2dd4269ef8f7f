"""Adam / SGD with global-norm clipping and a plateau learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, TrainingError


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    # halve the rate when an epoch improves the loss by less than this fraction
    decay_factor: float = 0.5
    min_improvement: float = 0.01

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


class Optimizer:
    """Holds per-parameter moments; updates parameter arrays in place."""

    def __init__(self, config: OptimizerConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.lr = config.lr
        self.step_count = 0
        self.best_loss = math.inf
        if config.kind == "adam":
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        cfg = self.config
        for name in sorted(grads):
            g = grads[name]
            if g.shape != params[name].shape:
                raise TrainingError(f"gradient shape {g.shape} != parameter shape "
                                    f"{params[name].shape} for {name}", name)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {name}", name)
        scale = 1.0
        if cfg.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(grads[n] * grads[n])) for n in sorted(grads)))
            if total > cfg.clip_norm:
                scale = cfg.clip_norm / total
        self.step_count += 1
        if cfg.kind == "sgd":
            for name in sorted(grads):
                params[name] -= self.lr * scale * grads[name]
            return params
        b1, b2 = cfg.beta1, cfg.beta2
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        for name in sorted(grads):
            g = grads[name] * scale
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)
        return params

    def end_epoch(self, epoch_loss: float) -> float:
        """Apply the plateau schedule; returns the learning rate for the next epoch."""
        if math.isfinite(self.best_loss) and epoch_loss > self.best_loss * (1.0 - self.config.min_improvement):
            self.lr *= self.config.decay_factor
        self.best_loss = min(self.best_loss, epoch_loss)
        return self.lr
