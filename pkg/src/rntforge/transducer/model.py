"""RNN-T assembly: encoder, prediction network, additive joint network."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..nn.arch import RnntConfig, joint_shapes, rnnt_shapes, vocab_dependent_names
from ..nn.checkpoint import Checkpoint
from ..nn.layers import embedding_backward, embedding_forward, glorot, log_softmax_backward
from ..numerics import Rng, log_softmax
from ..tokenize import LabelInventory
from .loss import rnnt_loss


def init_params(cfg: RnntConfig, vocab: int, rng: Rng) -> dict[str, np.ndarray]:
    """Fresh parameters: encoder, then prediction network, then joint, in that draw order."""
    params = cfg.encoder().init(rng)
    params["prediction.embedding"] = glorot(rng, (vocab, cfg.embed_dim))
    params.update(cfg.prediction().init(rng))
    for name, shape in joint_shapes(cfg, vocab).items():
        params[name] = glorot(rng, shape) if len(shape) == 2 else np.zeros(shape)
    return params


def joint_forward(params, h_enc, h_pred):
    """Log-posteriors over labels for every (t, u) pair.

    ``h_enc`` is (T, P) or (B, T, P); ``h_pred`` is (U+1, P') or (B, U+1, P').
    Returns (log_probs, cache).
    """
    w_enc, w_pred = params["joint.w_enc"], params["joint.w_pred"]
    if h_enc.shape[-1] != w_enc.shape[1] or h_pred.shape[-1] != w_pred.shape[1]:
        raise ShapeError(f"joint expects encoder dim {w_enc.shape[1]} and prediction dim "
                         f"{w_pred.shape[1]}, got {h_enc.shape} and {h_pred.shape}")
    a = h_enc @ w_enc.T
    b = h_pred @ w_pred.T + params["joint.bias"]
    z = np.tanh(a[..., :, None, :] + b[..., None, :, :])
    logp = log_softmax(z @ params["joint.w_out"].T + params["joint.b_out"])
    return logp, (h_enc, h_pred, z, logp)


def joint_backward(params, cache, dlogp):
    h_enc, h_pred, z, logp = cache
    J = z.shape[-1]
    dlogits = log_softmax_backward(logp, dlogp)
    V = dlogits.shape[-1]
    grads = {
        "joint.w_out": dlogits.reshape(-1, V).T @ z.reshape(-1, J),
        "joint.b_out": dlogits.reshape(-1, V).sum(axis=0),
    }
    dpre = (dlogits @ params["joint.w_out"]) * (1.0 - z * z)
    da = dpre.sum(axis=-2)
    db = dpre.sum(axis=-3)
    grads["joint.w_enc"] = da.reshape(-1, J).T @ h_enc.reshape(-1, h_enc.shape[-1])
    grads["joint.w_pred"] = db.reshape(-1, J).T @ h_pred.reshape(-1, h_pred.shape[-1])
    grads["joint.bias"] = db.reshape(-1, J).sum(axis=0)
    return grads, da @ params["joint.w_enc"], db @ params["joint.w_pred"]


class RnntModel:
    def __init__(self, cfg: RnntConfig, inventory: LabelInventory, params: dict[str, np.ndarray]):
        expected = rnnt_shapes(cfg, len(inventory))
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                raise ShapeError(f"parameter {name} missing or not of shape {shape}")
        self.cfg = cfg
        self.inventory = inventory
        self.params = params
        self.encoder = cfg.encoder()
        self.prediction = cfg.prediction()

    @property
    def blank(self) -> int:
        return self.inventory.blank_index

    @classmethod
    def init(cls, cfg: RnntConfig, inventory: LabelInventory, rng: Rng) -> "RnntModel":
        return cls(cfg, inventory, init_params(cfg, len(inventory), rng))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "RnntModel":
        inv = LabelInventory(tuple(ckpt.meta["labels"]), kind=ckpt.meta.get("label_kind", "grapheme"),
                             blank_index=ckpt.meta["blank_index"])
        return cls(RnntConfig.from_dict(ckpt.meta["arch"]), inv, ckpt.params64())

    def to_checkpoint(self, tag: str = "rnnt", **meta) -> Checkpoint:
        return Checkpoint(dict(self.params), {
            "kind": "rnnt", "tag": tag, "arch": self.cfg.to_dict(),
            "labels": list(self.inventory.labels), "label_kind": self.inventory.kind,
            "blank_index": self.blank, "vocab_dependent": vocab_dependent_names(self.params),
            "format_version": 1, **meta,
        })

    def encode(self, features) -> np.ndarray:
        out, _ = self.encoder.forward(self.params, features)
        return out

    def predict(self, labels) -> np.ndarray:
        """Prediction-network outputs for [blank] + labels, shape (U+1, P')."""
        ids = [self.blank, *labels]
        emb = embedding_forward(self.params["prediction.embedding"], ids)
        out, _ = self.prediction.forward(self.params, emb)
        return out

    def log_probs(self, features, labels) -> np.ndarray:
        logp, _ = joint_forward(self.params, self.encode(features), self.predict(labels))
        return logp

    def loss_and_grads(self, batch):
        """Mean transducer loss over ``batch`` [(features (T, d), label ids)] and its gradients."""
        B = len(batch)
        T_max = max(f.shape[0] for f, _ in batch)
        U_max = max(len(y) for _, y in batch)
        x = np.zeros((B, T_max, self.cfg.input_dim))
        ids = np.full((B, U_max + 1), self.blank, dtype=np.int64)
        for b, (f, y) in enumerate(batch):
            x[b, :f.shape[0]] = f
            ids[b, 1:len(y) + 1] = y
        h_enc, enc_cache = self.encoder.forward(self.params, x)
        emb = embedding_forward(self.params["prediction.embedding"], ids)
        h_pred, pred_cache = self.prediction.forward(self.params, emb)
        logp, joint_cache = joint_forward(self.params, h_enc, h_pred)

        dlogp = np.zeros_like(logp)
        losses = []
        for b, (f, y) in enumerate(batch):
            T, U = f.shape[0], len(y)
            loss, g = rnnt_loss(logp[b, :T, :U + 1], y, self.blank)
            losses.append(loss)
            dlogp[b, :T, :U + 1] = g / B

        grads, d_enc, d_pred = joint_backward(self.params, joint_cache, dlogp)
        g_enc, _ = self.encoder.backward(self.params, enc_cache, d_enc)
        g_pred, d_emb = self.prediction.backward(self.params, pred_cache, d_pred)
        grads.update(g_enc)
        grads.update(g_pred)
        grads["prediction.embedding"] = embedding_backward(
            self.params["prediction.embedding"].shape, ids, d_emb)
        return float(np.mean(losses)), grads, losses
