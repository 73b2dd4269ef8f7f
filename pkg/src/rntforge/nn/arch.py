"""Architecture configs and the tensor naming scheme shared by all model kinds.

Names are prefixed by the block they belong to (``encoder.``, ``prediction.``,
``joint.``, ``ce.``, ``lm.``); transplant scopes are expressed with those
prefixes. Vocabulary-sized tensors are listed explicitly so that transplant
decisions never depend on a shape coincidence.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError
from .layers import LstmStack


@dataclass(frozen=True)
class RnntConfig:
    input_dim: int = 640
    enc_layers: int = 4
    enc_hidden: int = 64
    enc_proj: int = 32
    pred_layers: int = 2
    pred_hidden: int = 64
    pred_proj: int = 32
    embed_dim: int = 32
    joint_dim: int = 64

    @classmethod
    def from_dict(cls, d: dict) -> "RnntConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def encoder(self) -> LstmStack:
        return LstmStack("encoder", self.enc_layers, self.input_dim, self.enc_hidden, self.enc_proj)

    def prediction(self) -> LstmStack:
        return LstmStack("prediction", self.pred_layers, self.embed_dim, self.pred_hidden, self.pred_proj)


def encoder_shapes(cfg: RnntConfig) -> dict:
    return cfg.encoder().shapes()


def prediction_shapes(cfg: RnntConfig, vocab: int) -> dict:
    shapes = {"prediction.embedding": (vocab, cfg.embed_dim)}
    shapes.update(cfg.prediction().shapes())
    return shapes


def joint_shapes(cfg: RnntConfig, vocab: int) -> dict:
    J = cfg.joint_dim
    return {
        "joint.w_enc": (J, cfg.enc_proj),
        "joint.w_pred": (J, cfg.pred_proj),
        "joint.bias": (J,),
        "joint.w_out": (vocab, J),
        "joint.b_out": (vocab,),
    }


def rnnt_shapes(cfg: RnntConfig, vocab: int) -> dict:
    out = encoder_shapes(cfg)
    out.update(prediction_shapes(cfg, vocab))
    out.update(joint_shapes(cfg, vocab))
    return out


def ce_shapes(cfg: RnntConfig, n_labels: int) -> dict:
    out = encoder_shapes(cfg)
    out["ce.w_out"] = (n_labels, cfg.enc_proj)
    out["ce.b_out"] = (n_labels,)
    return out


def lm_shapes(cfg: RnntConfig, vocab: int) -> dict:
    out = prediction_shapes(cfg, vocab)
    out["lm.w_out"] = (vocab, cfg.pred_proj)
    out["lm.b_out"] = (vocab,)
    return out


VOCAB_DEPENDENT = (
    "prediction.embedding", "joint.w_out", "joint.b_out",
    "ce.w_out", "ce.b_out", "lm.w_out", "lm.b_out",
)

MODEL_KINDS = ("rnnt", "ce", "lm")


def expected_shapes(kind: str, arch: dict, n_labels: int) -> dict:
    cfg = RnntConfig.from_dict(arch)
    if kind == "rnnt":
        return rnnt_shapes(cfg, n_labels)
    if kind == "ce":
        return ce_shapes(cfg, n_labels)
    if kind == "lm":
        return lm_shapes(cfg, n_labels)
    raise ConfigError(f"unknown model kind {kind!r}")


def vocab_dependent_names(names) -> list[str]:
    return sorted(n for n in names if n in VOCAB_DEPENDENT)
