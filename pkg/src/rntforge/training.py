"""Mini-batch training loop shared by the CE, LM and transducer trainers."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .nn.optim import Optimizer, OptimizerConfig
from .numerics import Rng


@dataclass
class TrainConfig:
    epochs: int = 6
    batch_size: int = 8
    # utterances per epoch; None means one pass over the data
    epoch_utterances: int | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown training keys: {sorted(set(d) - known)}")
        opt = d.pop("optimizer", {})
        cfg = cls(**d, optimizer=opt if isinstance(opt, OptimizerConfig) else OptimizerConfig(**opt))
        if cfg.epochs < 0 or cfg.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        return cfg


class _Sampler:
    """Endless stream of item indices, reshuffled on every pass."""

    def __init__(self, n: int, rng: Rng):
        self.n = n
        self.rng = rng
        self.order = []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self.order:
                self.order = [int(i) for i in self.rng.permutation(self.n)]
            out.append(self.order.pop(0))
        return out


def fit(params, items, loss_fn, cfg: TrainConfig, rng: Rng, log=None) -> list[dict]:
    """Optimise ``params`` in place.

    ``loss_fn(batch) -> (mean_loss, grads, weight)``. Returns one record per
    epoch with the weighted mean training loss seen during that epoch.
    """
    if not items:
        raise ConfigError("no training items")
    opt = Optimizer(cfg.optimizer, params)
    sampler = _Sampler(len(items), rng)
    quantum = cfg.epoch_utterances or len(items)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        lr = opt.lr
        order = sampler.take(quantum)
        total = weight = 0.0
        for start in range(0, quantum, cfg.batch_size):
            batch = [items[i] for i in order[start:start + cfg.batch_size]]
            loss, grads, w = loss_fn(batch)
            opt.step(params, grads)
            total += loss * w
            weight += w
        epoch_loss = total / weight
        opt.end_epoch(epoch_loss)
        record = {"epoch": epoch, "loss": epoch_loss, "lr": lr}
        history.append(record)
        if log is not None:
            log(record)
    return history
