"""RNN-T training on (stacked features, label ids) pairs."""
from __future__ import annotations

import numpy as np

from ..data.corpus import Utterance
from ..errors import DataError, VocabularyError
from ..nn.checkpoint import Checkpoint
from ..numerics import Rng
from ..tokenize import LabelInventory, encode_transcript
from ..training import TrainConfig, fit
from .model import RnntModel


def rnnt_items(utts: list[Utterance], inventory: LabelInventory, merges=None):
    """(stacked features, label ids) per utterance."""
    items = []
    for utt in utts:
        try:
            ids = encode_transcript(utt.transcript, inventory, merges)
        except VocabularyError as exc:
            raise VocabularyError(f"{utt.id}: {exc}") from None
        items.append((utt.stacked(), np.asarray(ids, dtype=np.int64)))
    return items


def train_rnnt(items, init: Checkpoint, train: TrainConfig, rng: Rng, log=None, **meta):
    """Train from ``init`` (any strategy's initial checkpoint); returns (checkpoint, history)."""
    if not items:
        raise DataError("RNN-T training needs at least one utterance")
    model = RnntModel.from_checkpoint(init)

    def loss_fn(batch):
        loss, grads, _ = model.loss_and_grads(batch)
        return loss, grads, len(batch)

    history = fit(model.params, items, loss_fn, train, rng, log)
    keep = {k: v for k, v in init.meta.items() if k in ("language", "strategy")}
    return model.to_checkpoint("rnnt", **{**keep, **meta}), history
