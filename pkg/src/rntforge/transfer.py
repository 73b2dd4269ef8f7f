"""Checkpoint transplant surgery and the RNN-T initialization strategies.

A target model is always first drawn fresh from the seed; transplanting then
overwrites the tensors it is allowed to copy. Which tensors those are is
decided per tensor and recorded in a :class:`TransplantReport`.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import StrategyError, TransplantError
from .nn.arch import RnntConfig, VOCAB_DEPENDENT, vocab_dependent_names
from .nn.checkpoint import Checkpoint
from .numerics import Rng
from .pretrain import ce_checkpoint, init_ce_params, train_ce
from .tokenize import LabelInventory
from .training import TrainConfig
from .transducer.model import init_params

COPIED = "copied"
REINIT = "re-initialized"
SHAPE_MISMATCH = "shape mismatch"
VOCAB = "vocab-dependent"
EXCLUDED = "strategy-excluded"

SCOPES = {"encoder": ("encoder.",), "prediction": ("prediction.",)}


@dataclass(frozen=True)
class TargetSpec:
    """What to build: architecture, label inventory, language and model kind ("rnnt" or "ce")."""

    arch: RnntConfig
    inventory: LabelInventory
    language: str = "target"
    kind: str = "rnnt"

    def fresh_params(self, rng: Rng) -> dict[str, np.ndarray]:
        if self.kind == "ce":
            return init_ce_params(self.arch, len(self.inventory), rng)
        return init_params(self.arch, len(self.inventory), rng)

    def checkpoint(self, params, **meta) -> Checkpoint:
        if self.kind == "ce":
            return ce_checkpoint(self.arch, self.inventory, params, **{"tag": "init", **meta})
        return Checkpoint(dict(params), {
            "kind": "rnnt", "tag": "init", "arch": self.arch.to_dict(),
            "labels": list(self.inventory.labels), "label_kind": self.inventory.kind,
            "blank_index": self.inventory.blank_index,
            "vocab_dependent": vocab_dependent_names(params), "format_version": 1,
            "language": self.language, **meta,
        })


@dataclass(frozen=True)
class Disposition:
    tensor: str
    disposition: str
    source: str = ""
    reason: str = ""

    @property
    def label(self) -> str:
        return self.disposition if self.disposition == COPIED else f"{self.disposition}:{self.reason}"


@dataclass
class TransplantReport:
    entries: list[Disposition] = field(default_factory=list)

    def copied(self) -> list[str]:
        return [e.tensor for e in self.entries if e.disposition == COPIED]

    def by_tensor(self) -> dict[str, Disposition]:
        return {e.tensor: e for e in self.entries}

    def is_partition_of(self, names) -> bool:
        tensors = [e.tensor for e in self.entries]
        return len(tensors) == len(set(tensors)) and set(tensors) == set(names)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tensor", "disposition", "source"])
        for e in self.entries:
            writer.writerow([e.tensor, e.label, e.source])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max((len(e.tensor) for e in self.entries), default=0)
        lines = []
        for e in self.entries:
            how = f"<- {e.source}" if e.disposition == COPIED else f"({e.reason})"
            lines.append(f"{e.tensor:<{width}}  {e.disposition:<14}  {how}")
        return "\n".join(lines) + "\n"


def _scope_names(scope, names) -> set[str]:
    if isinstance(scope, str):
        if scope not in SCOPES:
            raise TransplantError(f"unknown scope {scope!r}; use one of {sorted(SCOPES)} or a name set")
        return {n for n in names if n.startswith(SCOPES[scope])}
    return set(scope)


def _source_rows(source: Checkpoint, target_labels: list[str]) -> list[int] | None:
    """Row map for vocabulary tensors, or None if the inventories differ."""
    drop = set(source.meta.get("transplant_drop_labels", []))
    kept = [lab for lab in source.labels if lab not in drop]
    if kept != target_labels:
        return None
    index = {lab: i for i, lab in enumerate(source.labels)}
    return [index[lab] for lab in target_labels]


def _apply(target: TargetSpec, params: dict, plan) -> TransplantReport:
    """Overwrite ``params`` according to ``plan`` [(scope, source checkpoint)]."""
    names = sorted(params)
    owner = {}
    for scope, source in plan:
        for name in _scope_names(scope, names):
            if name in owner:
                raise TransplantError(f"{name} claimed by two transplant scopes")
            owner[name] = source
    report = TransplantReport()
    labels = list(target.inventory.labels)
    for name in names:
        source = owner.get(name)
        if source is None:
            report.entries.append(Disposition(name, REINIT, "", EXCLUDED))
            continue
        if name not in source.tensors:
            raise TransplantError(f"in-scope tensor {name} missing from source checkpoint")
        src = source.tensors[name]
        tag = f"{source.tag}:{name}"
        if name in VOCAB_DEPENDENT:
            rows = _source_rows(source, labels)
            if rows is None:
                report.entries.append(Disposition(name, REINIT, "", VOCAB))
                continue
            src = src[rows]
            if src.shape != params[name].shape:
                report.entries.append(Disposition(name, REINIT, "", SHAPE_MISMATCH))
                continue
        elif src.shape != params[name].shape:
            raise TransplantError(f"architecture mismatch on {name}: source {src.shape}, "
                                  f"target {params[name].shape}")
        params[name] = src.astype(np.float64)
        report.entries.append(Disposition(name, COPIED, tag))
    return report


def transplant(target: TargetSpec, source: Checkpoint, scope, rng: Rng) -> tuple[Checkpoint, TransplantReport]:
    """Fresh target model with the in-scope tensors of ``source`` copied in."""
    params = target.fresh_params(rng)
    report = _apply(target, params, [(scope, source)])
    meta = {"init_from": f"{source.tag}:{source.meta.get('language', '')}"}
    if target.kind == "ce":
        meta["language"] = target.language
    return target.checkpoint(params, **meta), report


# ------------------------------------------------------------------ strategies

RANDOM = "random"
SOURCE_RNNT_ENCODER = "source-rnnt-encoder"
SOURCE_CE_ENCODER = "source-ce-encoder"
TWO_STAGE = "two-stage"
CE_PLUS_LM = "ce-plus-lm"
VARIANTS = (RANDOM, SOURCE_RNNT_ENCODER, SOURCE_CE_ENCODER, TWO_STAGE, CE_PLUS_LM)


@dataclass(frozen=True)
class InitStrategy:
    variant: str
    encoder_source: Checkpoint | None = None
    lm_source: Checkpoint | None = None
    stage1_targets: str = "grapheme"  # two-stage: grapheme | external
    encoder_from: str = "source-ce"  # ce-plus-lm: target-ce | source-ce

    @property
    def name(self) -> str:
        return {
            RANDOM: "Random",
            SOURCE_RNNT_ENCODER: "SourceRnntEncoder",
            SOURCE_CE_ENCODER: "SourceCeEncoder",
            TWO_STAGE: f"TwoStage({self.stage1_targets})",
            CE_PLUS_LM: f"CePlusLm({self.encoder_from})",
        }[self.variant]


def _require(ckpt: Checkpoint | None, tag: str, what: str) -> Checkpoint:
    if ckpt is None:
        raise StrategyError(f"{what}: missing source checkpoint (need a {tag!r} checkpoint)")
    if ckpt.tag != tag:
        raise StrategyError(f"{what}: source checkpoint is tagged {ckpt.tag!r}, expected {tag!r}")
    return ckpt


def _language(ckpt: Checkpoint, target: TargetSpec, same: bool, what: str) -> None:
    lang = ckpt.meta.get("language", "")
    if (lang == target.language) != same:
        side = "the target" if same else "a source"
        raise StrategyError(f"{what}: checkpoint language {lang!r} is not {side} language "
                            f"(target is {target.language!r})")


def strategy_plan(strategy: InitStrategy, target: TargetSpec) -> list:
    """Validate the strategy and return its transplant plan [(scope, checkpoint)]."""
    v = strategy.variant
    what = strategy.name if v in VARIANTS else v
    if v == RANDOM:
        return []
    if v == SOURCE_RNNT_ENCODER:
        src = _require(strategy.encoder_source, "rnnt", what)
        _language(src, target, False, what)
        return [("encoder", src)]
    if v == SOURCE_CE_ENCODER:
        src = _require(strategy.encoder_source, "ce", what)
        _language(src, target, False, what)
        return [("encoder", src)]
    if v == TWO_STAGE:
        src = _require(strategy.encoder_source, "ce", what)
        _language(src, target, True, what)
        lineage = src.meta.get("init_from") or ""
        if not lineage.startswith("ce:") or lineage == f"ce:{target.language}":
            raise StrategyError(f"{what}: stage-1 CE checkpoint was not initialized from a source CE model")
        if src.meta.get("targets") != strategy.stage1_targets:
            raise StrategyError(f"{what}: stage-1 targets are {src.meta.get('targets')!r}, "
                                f"strategy asks for {strategy.stage1_targets!r}")
        return [("encoder", src)]
    if v == CE_PLUS_LM:
        if strategy.encoder_from not in ("target-ce", "source-ce"):
            raise StrategyError(f"{what}: encoder_from must be target-ce or source-ce")
        enc = _require(strategy.encoder_source, "ce", what)
        _language(enc, target, strategy.encoder_from == "target-ce", what)
        lm = _require(strategy.lm_source, "lm", what)
        _language(lm, target, True, what)
        return [("encoder", enc), ("prediction", lm)]
    raise StrategyError(f"unknown strategy variant {v!r}")


def build_init(strategy: InitStrategy, target: TargetSpec, rng: Rng) -> tuple[Checkpoint, TransplantReport]:
    """Initial RNN-T checkpoint for ``strategy``; the joint network is always fresh."""
    plan = strategy_plan(strategy, target)
    params = target.fresh_params(rng)
    report = _apply(target, params, plan)
    return target.checkpoint(params, strategy=strategy.name), report


def two_stage(source_ce: Checkpoint, target_items, target_labels: LabelInventory, arch: RnntConfig,
              stage1: TrainConfig, rng: Rng, language: str = "target", targets: str = "grapheme", log=None):
    """Stage 1: a target-language CE model whose encoder starts from ``source_ce``.

    Returns (stage-1 checkpoint, training history, transplant report).
    """
    _require(source_ce, "ce", "two-stage")
    spec = TargetSpec(arch, target_labels, language, kind="ce")
    start, report = transplant(spec, source_ce, "encoder", rng.spawn())
    ckpt, history = train_ce(target_items, target_labels, arch, stage1, rng.spawn(), init=start,
                             language=language, targets=targets, log=log)
    return ckpt, history, report
