"""Pretraining paths: frame-level CE encoders and grapheme LSTM language models."""
from __future__ import annotations

import math

import numpy as np

from .data.corpus import Utterance, frame_targets, stacked_targets
from .errors import DataError, TransplantError, VocabularyError
from .nn.arch import RnntConfig, ce_shapes, vocab_dependent_names
from .nn.checkpoint import Checkpoint
from .nn.layers import embedding_backward, embedding_forward, glorot, softmax_xent
from .numerics import Rng, log_softmax
from .tokenize import BOS, LabelInventory, grapheme_encode
from .training import TrainConfig, fit

# --------------------------------------------------------------------------- CE


def init_ce_params(cfg: RnntConfig, n_labels: int, rng: Rng) -> dict[str, np.ndarray]:
    params = cfg.encoder().init(rng)
    params["ce.w_out"] = glorot(rng, (n_labels, cfg.enc_proj))
    params["ce.b_out"] = np.zeros(n_labels)
    return params


def ce_checkpoint(cfg: RnntConfig, labels: LabelInventory, params, **meta) -> Checkpoint:
    return Checkpoint(dict(params), {
        "kind": "ce", "tag": "ce", "arch": cfg.to_dict(), "labels": list(labels.labels),
        "label_kind": labels.kind, "vocab_dependent": vocab_dependent_names(params),
        "format_version": 1, **meta,
    })


def ce_items(utts: list[Utterance], labels: LabelInventory, merges=None, external: bool = False):
    """(stacked features, per-stacked-frame targets) pairs for CE training.

    ``external`` uses the utterances' own ``frame_labels`` instead of
    splitting word alignments into pieces.
    """
    items = []
    for utt in utts:
        if external:
            if utt.frame_labels is None:
                raise DataError(f"{utt.id}: no external frame labels")
            raw = np.asarray(utt.frame_labels, dtype=np.int64)
            if raw.shape[0] != utt.num_raw_frames or raw.min() < 0 or raw.max() >= len(labels):
                raise DataError(f"{utt.id}: external frame labels do not fit inventory/frames")
        else:
            if utt.alignment is None:
                raise DataError(f"{utt.id}: CE training needs a word alignment")
            raw = frame_targets(utt, labels, merges)
        items.append((utt.stacked(), stacked_targets(raw)))
    return items


def ce_forward(cfg: RnntConfig, params, batch):
    """Mean per-frame cross-entropy over a padded batch; returns loss, grads, frames, correct."""
    encoder = cfg.encoder()
    B = len(batch)
    T_max = max(f.shape[0] for f, _ in batch)
    x = np.zeros((B, T_max, cfg.input_dim))
    mask = np.zeros((B, T_max), dtype=bool)
    tgt = np.zeros((B, T_max), dtype=np.int64)
    for b, (f, y) in enumerate(batch):
        x[b, :f.shape[0]] = f
        mask[b, :f.shape[0]] = True
        tgt[b, :f.shape[0]] = y
    h, cache = encoder.forward(params, x)
    logp = log_softmax(h @ params["ce.w_out"].T + params["ce.b_out"])
    n = int(mask.sum())
    nll, dlogits = softmax_xent(logp[mask], tgt[mask])
    correct = int((logp[mask].argmax(axis=1) == tgt[mask]).sum())
    full = np.zeros_like(logp)
    full[mask] = dlogits / n
    grads = {"ce.w_out": full.reshape(-1, full.shape[-1]).T @ h.reshape(-1, h.shape[-1]),
             "ce.b_out": full.reshape(-1, full.shape[-1]).sum(axis=0)}
    g_enc, _ = encoder.backward(params, cache, full @ params["ce.w_out"])
    grads.update(g_enc)
    return nll / n, grads, n, correct


def train_ce(items, labels: LabelInventory, cfg: RnntConfig, train: TrainConfig, rng: Rng,
             init: Checkpoint | None = None, language: str = "", targets: str = "", log=None):
    """Train an encoder + softmax on frame targets.

    With ``init`` the encoder is copied from that CE checkpoint; its output
    layer is kept only if the label inventory is identical.
    Returns (checkpoint, history).
    """
    if not items:
        raise DataError("CE training needs at least one utterance with frame targets")
    params = init_ce_params(cfg, len(labels), rng.spawn())
    init_from = None
    if init is not None:
        expected = ce_shapes(cfg, len(labels))
        same_labels = init.labels == list(labels.labels)
        for name, arr in init.tensors.items():
            if name.startswith("ce.") and not same_labels:
                continue
            if name not in expected or tuple(arr.shape) != expected[name]:
                raise TransplantError(f"init tensor {name} {arr.shape} incompatible with CE model")
            params[name] = arr.astype(np.float64)
        if same_labels and init.meta.get("language") == language:
            init_from = init.meta.get("init_from")  # continuing a run keeps its lineage
        else:
            init_from = f"{init.tag}:{init.meta.get('language', '')}"

    def loss_fn(batch):
        loss, grads, n, _ = ce_forward(cfg, params, batch)
        return loss, grads, n

    history = fit(params, items, loss_fn, train, rng.spawn(), log)
    meta = {"language": language, "init_from": init_from, "targets": targets or labels.kind}
    return ce_checkpoint(cfg, labels, params, **meta), history


def ce_accuracy(ckpt: Checkpoint, items, batch_size: int = 32) -> float:
    cfg = RnntConfig.from_dict(ckpt.meta["arch"])
    params = ckpt.params64()
    hits = total = 0
    for start in range(0, len(items), batch_size):
        _, _, n, correct = ce_forward(cfg, params, items[start:start + batch_size])
        hits += correct
        total += n
    return hits / total


# --------------------------------------------------------------------------- LM


def dedup_sentences(corpus) -> list[str]:
    """Unique sentences after trimming, first occurrence kept, order preserved."""
    return list(dict.fromkeys(line.strip() for line in corpus))


def lm_inventory(inventory: LabelInventory) -> LabelInventory:
    return LabelInventory((*inventory.labels, BOS), kind=inventory.kind, blank_index=inventory.blank_index)


def init_lm_params(cfg: RnntConfig, vocab: int, rng: Rng) -> dict[str, np.ndarray]:
    params = {"prediction.embedding": glorot(rng, (vocab, cfg.embed_dim))}
    params.update(cfg.prediction().init(rng))
    params["lm.w_out"] = glorot(rng, (vocab, cfg.pred_proj))
    params["lm.b_out"] = np.zeros(vocab)
    return params


def lm_items(corpus, inventory: LabelInventory):
    """(input ids, target ids) per sentence; inputs start with the BOS token."""
    lm_inv = lm_inventory(inventory)
    bos = lm_inv.index(BOS)
    items = []
    for line in corpus:
        labels = grapheme_encode(line)
        if not labels:
            continue
        try:
            ids = lm_inv.ids(labels)
        except VocabularyError as exc:
            raise VocabularyError(f"cannot encode {line!r}: {exc}") from None
        items.append((np.array([bos, *ids[:-1]]), np.array(ids)))
    return items


def lm_forward(cfg: RnntConfig, params, batch):
    """Summed-over-tokens mean NLL for a padded batch; returns loss, grads, tokens."""
    pred = cfg.prediction()
    B = len(batch)
    L = max(len(x) for x, _ in batch)
    ids = np.zeros((B, L), dtype=np.int64)
    tgt = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    for b, (x, y) in enumerate(batch):
        ids[b, :len(x)] = x
        tgt[b, :len(y)] = y
        mask[b, :len(x)] = True
    emb = embedding_forward(params["prediction.embedding"], ids)
    h, cache = pred.forward(params, emb)
    logp = log_softmax(h @ params["lm.w_out"].T + params["lm.b_out"])
    n = int(mask.sum())
    nll, dlogits = softmax_xent(logp[mask], tgt[mask])
    full = np.zeros_like(logp)
    full[mask] = dlogits / n
    grads = {"lm.w_out": full.reshape(-1, full.shape[-1]).T @ h.reshape(-1, h.shape[-1]),
             "lm.b_out": full.reshape(-1, full.shape[-1]).sum(axis=0)}
    g_pred, d_emb = pred.backward(params, cache, full @ params["lm.w_out"])
    grads.update(g_pred)
    grads["prediction.embedding"] = embedding_backward(params["prediction.embedding"].shape, ids, d_emb)
    return nll / n, grads, n


def lm_checkpoint(cfg: RnntConfig, inventory: LabelInventory, params, **meta) -> Checkpoint:
    lm_inv = lm_inventory(inventory)
    return Checkpoint(dict(params), {
        "kind": "lm", "tag": "lm", "arch": cfg.to_dict(), "labels": list(lm_inv.labels),
        "label_kind": inventory.kind, "blank_index": inventory.blank_index,
        "transplant_drop_labels": [BOS], "vocab_dependent": vocab_dependent_names(params),
        "format_version": 1, **meta,
    })


def train_lm(corpus, inventory: LabelInventory, cfg: RnntConfig, train: TrainConfig, rng: Rng,
             language: str = "", log=None):
    """Train a grapheme LSTM LM on the de-duplicated corpus; returns (checkpoint, history)."""
    unique = [s for s in dedup_sentences(corpus) if s]
    if not unique:
        raise DataError("LM training needs a non-empty corpus")
    items = lm_items(unique, inventory)
    params = init_lm_params(cfg, len(inventory) + 1, rng.spawn())

    def loss_fn(batch):
        loss, grads, n = lm_forward(cfg, params, batch)
        return loss, grads, n

    def with_ppl(record):
        record["perplexity"] = math.exp(record["loss"])
        if log is not None:
            log(record)

    history = fit(params, items, loss_fn, train, rng.spawn(), with_ppl)
    ckpt = lm_checkpoint(cfg, inventory, params, language=language, sentences=len(unique))
    return ckpt, history


def perplexity(lm: Checkpoint, corpus, inventory: LabelInventory | None = None, batch_size: int = 32) -> float:
    """exp of the mean per-token negative log-likelihood over ``corpus``."""
    cfg = RnntConfig.from_dict(lm.meta["arch"])
    if inventory is None:
        drop = set(lm.meta.get("transplant_drop_labels", []))
        inventory = LabelInventory(tuple(lab for lab in lm.labels if lab not in drop),
                                   kind=lm.meta.get("label_kind", "grapheme"))
    items = lm_items(corpus, inventory)
    if not items:
        raise DataError("perplexity of an empty corpus")
    params = lm.params64()
    nll = tokens = 0.0
    for start in range(0, len(items), batch_size):
        loss, _, n = lm_forward(cfg, params, items[start:start + batch_size])
        nll += loss * n
        tokens += n
    return math.exp(nll / tokens)

