"""Strategy-matrix experiment: pretrain, initialize, train, decode, score, report.

Every strategy at a given target-data fraction shares the same training
configuration, the same fresh-initialization seed and the same minibatch
order, so rows differ only in what was transplanted into the model.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
import sys
import time
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..data.corpus import Utterance, load_dataset, read_text
from ..data.synth import SynthSpec, synth_corpus
from ..errors import ConfigError, RntError
from ..nn.arch import RnntConfig
from ..nn.checkpoint import Checkpoint, save_checkpoint
from ..numerics import Rng, splitmix64
from ..pretrain import ce_accuracy, ce_items, perplexity, train_ce, train_lm
from ..tokenize import (LabelInventory, bpe_train, build_grapheme_inventory, build_wordpiece_inventory,
                        ce_inventory, decode_ids, word_frequencies)
from ..training import TrainConfig
from ..transducer.decode import beam_decode
from ..transducer.model import RnntModel
from ..transducer.train import rnnt_items, train_rnnt
from ..transfer import (CE_PLUS_LM, RANDOM, SOURCE_CE_ENCODER, SOURCE_RNNT_ENCODER, TWO_STAGE, InitStrategy,
                        TargetSpec, TransplantReport, build_init, transplant, two_stage)
from .scoring import WerBreakdown, wer, werr

BASELINE = "Random"
PRETRAIN_STAGES = ("source_ce", "source_rnnt", "target_ce", "stage1", "lm")


@dataclass
class ExperimentConfig:
    seed: int = 42
    synth: dict | None = None  # SynthSpec fields; used when ``data`` is absent
    data: dict | None = None  # source / target_train / target_test dirs, lm_text, external_labels
    arch: dict = field(default_factory=dict)
    bpe_merges: int = 20
    pretrain: dict = field(default_factory=dict)  # stage name -> TrainConfig fields
    rnnt: dict = field(default_factory=dict)  # one TrainConfig for every strategy
    strategies: list = field(default_factory=lambda: [BASELINE])
    fractions: list = field(default_factory=list)  # extra target-data fractions for the scaling sweep
    scaling_strategies: list = field(default_factory=lambda: [BASELINE, "SourceCeEncoder"])
    beam_width: int = 4
    source_language: str = "source"
    target_language: str = "target"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown experiment keys: {sorted(set(d) - known)} "
                              "(training settings are shared by all strategies; per-strategy overrides "
                              "are not accepted)")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def validate(self) -> None:
        if (self.synth is None) == (self.data is None):
            raise ConfigError("give exactly one of 'synth' or 'data'")
        if set(self.pretrain) - set(PRETRAIN_STAGES):
            raise ConfigError(f"unknown pretraining stages {sorted(set(self.pretrain) - set(PRETRAIN_STAGES))}")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if not self.strategies:
            raise ConfigError("no strategies configured")
        for name in [*self.strategies, *self.scaling_strategies]:
            parse_strategy(name)
        for f in self.fractions:
            if not 0 < f <= 1:
                raise ConfigError(f"data fraction {f} outside (0, 1]")
        self.arch_config()
        self.train_config("rnnt")
        for stage in PRETRAIN_STAGES:
            self.train_config(stage)

    def arch_config(self) -> RnntConfig:
        return RnntConfig.from_dict(self.arch)

    def train_config(self, stage: str) -> TrainConfig:
        return TrainConfig.from_dict(self.rnnt if stage == "rnnt" else self.pretrain.get(stage, {}))

    def all_fractions(self) -> list[float]:
        return sorted({1.0, *self.fractions})


_PATTERN = re.compile(r"^(\w+)(?:\(([\w-]+)\))?$")


def parse_strategy(name: str) -> tuple[str, dict]:
    """Map a report id such as ``TwoStage(grapheme)`` to (variant, options)."""
    m = _PATTERN.match(name.strip())
    simple = {"Random": RANDOM, "SourceRnntEncoder": SOURCE_RNNT_ENCODER, "SourceCeEncoder": SOURCE_CE_ENCODER}
    if m and m.group(1) in simple and m.group(2) is None:
        return simple[m.group(1)], {}
    if m and m.group(1) == "TwoStage" and (m.group(2) or "grapheme") in ("grapheme", "external"):
        return TWO_STAGE, {"stage1_targets": m.group(2) or "grapheme"}
    if m and m.group(1) == "CePlusLm" and (m.group(2) or "source-ce") in ("target-ce", "source-ce"):
        return CE_PLUS_LM, {"encoder_from": m.group(2) or "source-ce"}
    raise ConfigError(f"unknown strategy {name!r}; expected Random, SourceRnntEncoder, SourceCeEncoder, "
                      "TwoStage(grapheme|external) or CePlusLm(target-ce|source-ce)")


def canonical_name(name: str) -> str:
    variant, opts = parse_strategy(name)
    return InitStrategy(variant, **opts).name


def task_seed(seed: int, *parts) -> int:
    """Seed for a named sub-task, independent of which other tasks run."""
    key = zlib.crc32("/".join(str(p) for p in parts).encode("utf-8"))
    return splitmix64((seed << 32) ^ key)[1] & 0x7FFFFFFFFFFFFFFF


@dataclass
class StrategyReport:
    strategy: str
    fraction: float
    seed: int
    losses: list[float] = field(default_factory=list)
    wer: WerBreakdown | None = None
    werr: float | None = None
    wall_clock: float = 0.0
    error: str | None = None
    transplant: TransplantReport | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.wer is not None

    @property
    def wer_percent(self) -> float | None:
        return None if self.wer is None else 100.0 * self.wer.wer


@dataclass
class ExperimentResult:
    reports: list[StrategyReport]
    pretrain: dict  # stage -> summary dict
    config: ExperimentConfig

    def rows(self, fraction: float = 1.0) -> list[StrategyReport]:
        return [r for r in self.reports if r.fraction == fraction]

    def get(self, strategy: str, fraction: float = 1.0) -> StrategyReport:
        name = canonical_name(strategy)
        for r in self.reports:
            if r.strategy == name and r.fraction == fraction:
                return r
        raise KeyError((strategy, fraction))


# ------------------------------------------------------------------ data

@dataclass
class _Data:
    source: list[Utterance]
    target_train: list[Utterance]
    target_test: list[Utterance]
    lm_text: list[str]
    external: LabelInventory | None


def _load_data(cfg: ExperimentConfig) -> _Data:
    if cfg.synth is not None:
        corpus = synth_corpus(SynthSpec.from_dict(cfg.synth), seed=cfg.seed)
        ext = LabelInventory(tuple(corpus.external_labels()), kind="external", blank_index=None)
        return _Data(corpus.source, corpus.target_train, corpus.target_test, corpus.lm_text, ext)
    d = cfg.data
    missing = {"source", "target_train", "target_test"} - set(d)
    if missing:
        raise ConfigError(f"data section lacks {sorted(missing)}")
    ext = None
    if d.get("external_labels"):
        ext = LabelInventory(tuple(read_text(d["external_labels"])), kind="external", blank_index=None)
    lm_text = read_text(d["lm_text"]) if d.get("lm_text") else []
    return _Data(load_dataset(d["source"]), load_dataset(d["target_train"]), load_dataset(d["target_test"]),
                 lm_text, ext)


def subset(utts: list, fraction: float, seed: int) -> list:
    """Nested subsets: the first ceil(f*N) items of one seeded permutation."""
    if fraction >= 1.0:
        return list(utts)
    order = Rng(task_seed(seed, "subset")).permutation(len(utts))
    n = max(1, math.ceil(fraction * len(utts)))
    return [utts[int(i)] for i in sorted(order[:n])]


# ------------------------------------------------------------------ runner

class _Pipeline:
    def __init__(self, cfg: ExperimentConfig, out: Path | None, log):
        self.cfg = cfg
        self.out = out
        self.log = log if log is not None else (lambda msg: None)
        self.arch = cfg.arch_config()
        self.data = _load_data(cfg)
        src_text = [u.transcript for u in self.data.source]
        self.merges = bpe_train(word_frequencies(src_text), cfg.bpe_merges)
        self.src_inv = build_wordpiece_inventory(src_text, self.merges)
        tgt_text = [u.transcript for u in self.data.target_train + self.data.target_test] + self.data.lm_text
        self.tgt_inv = build_grapheme_inventory(tgt_text)
        self.target = TargetSpec(self.arch, self.tgt_inv, cfg.target_language)
        self.cache: dict = {}
        self.pretrain: dict = {}

    def rng(self, *parts) -> Rng:
        return Rng(task_seed(self.cfg.seed, *parts))

    def _save(self, ckpt: Checkpoint, name: str) -> None:
        if self.out is not None:
            save_checkpoint(ckpt, self.out / "checkpoints" / name)

    def _once(self, key, build):
        if key not in self.cache:
            self.cache[key] = build()
        return self.cache[key]

    def _note(self, stage: str, history, **extra) -> None:
        self.pretrain[stage] = {"epochs": len(history), "final_loss": history[-1]["loss"] if history else None,
                                **extra}
        self.log(f"[pretrain] {stage}: " + ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                                     for k, v in self.pretrain[stage].items()))

    def source_ce(self) -> Checkpoint:
        def build():
            labels = ce_inventory(self.src_inv)
            items = ce_items(self.data.source, labels, self.merges)
            ckpt, hist = train_ce(items, labels, self.arch, self.cfg.train_config("source_ce"),
                                  self.rng("source_ce"), language=self.cfg.source_language, targets="wordpiece")
            self._note("source_ce", hist, frame_accuracy=ce_accuracy(ckpt, items[:200]))
            self._save(ckpt, "source_ce")
            return ckpt
        return self._once("source_ce", build)

    def source_rnnt(self) -> Checkpoint:
        def build():
            spec = TargetSpec(self.arch, self.src_inv, self.cfg.source_language)
            init, _ = transplant(spec, self.source_ce(), "encoder", self.rng("source_rnnt", "init"))
            items = rnnt_items(self.data.source, self.src_inv, self.merges)
            ckpt, hist = train_rnnt(items, init, self.cfg.train_config("source_rnnt"),
                                    self.rng("source_rnnt", "train"), language=self.cfg.source_language,
                                    init_from=f"ce:{self.cfg.source_language}")
            self._note("source_rnnt", hist)
            self._save(ckpt, "source_rnnt")
            return ckpt
        return self._once("source_rnnt", build)

    def _target_ce_items(self, fraction: float, targets: str):
        utts = subset(self.data.target_train, fraction, self.cfg.seed)
        if targets == "external":
            if self.data.external is None:
                raise ConfigError("external frame labels requested but none are configured")
            return utts, self.data.external, ce_items(utts, self.data.external, external=True)
        labels = ce_inventory(self.tgt_inv)
        return utts, labels, ce_items(utts, labels)

    def target_ce(self, fraction: float) -> Checkpoint:
        def build():
            _, labels, items = self._target_ce_items(fraction, "grapheme")
            ckpt, hist = train_ce(items, labels, self.arch, self.cfg.train_config("target_ce"),
                                  self.rng("target_ce", fraction), language=self.cfg.target_language,
                                  targets="grapheme")
            self._note(f"target_ce@{fraction:g}", hist, frame_accuracy=ce_accuracy(ckpt, items))
            self._save(ckpt, f"target_ce_{_slug(fraction)}")
            return ckpt
        return self._once(("target_ce", fraction), build)

    def stage1(self, fraction: float, targets: str) -> Checkpoint:
        def build():
            _, labels, items = self._target_ce_items(fraction, targets)
            ckpt, hist, _ = two_stage(self.source_ce(), items, labels, self.arch, self.cfg.train_config("stage1"),
                                      self.rng("stage1", targets, fraction), language=self.cfg.target_language,
                                      targets=targets)
            self._note(f"stage1_{targets}@{fraction:g}", hist, frame_accuracy=ce_accuracy(ckpt, items))
            self._save(ckpt, f"stage1_{targets}_{_slug(fraction)}")
            return ckpt
        return self._once(("stage1", targets, fraction), build)

    def lm(self) -> Checkpoint:
        def build():
            if not self.data.lm_text:
                raise ConfigError("CePlusLm needs LM text (data.lm_text)")
            ckpt, hist = train_lm(self.data.lm_text, self.tgt_inv, self.arch, self.cfg.train_config("lm"),
                                  self.rng("lm"), language=self.cfg.target_language)
            self._note("lm", hist, perplexity=hist[-1]["perplexity"] if hist else None)
            self._save(ckpt, "lm")
            return ckpt
        return self._once("lm", build)

    def strategy(self, name: str, fraction: float) -> InitStrategy:
        variant, opts = parse_strategy(name)
        if variant == RANDOM:
            return InitStrategy(variant)
        if variant == SOURCE_RNNT_ENCODER:
            return InitStrategy(variant, encoder_source=self.source_rnnt())
        if variant == SOURCE_CE_ENCODER:
            return InitStrategy(variant, encoder_source=self.source_ce())
        if variant == TWO_STAGE:
            return InitStrategy(variant, encoder_source=self.stage1(fraction, opts["stage1_targets"]), **opts)
        enc = self.source_ce() if opts["encoder_from"] == "source-ce" else self.target_ce(fraction)
        return InitStrategy(variant, encoder_source=enc, lm_source=self.lm(), **opts)

    def run_row(self, name: str, fraction: float) -> StrategyReport:
        name = canonical_name(name)
        report = StrategyReport(name, fraction, self.cfg.seed)
        start = time.perf_counter()
        try:
            strategy = self.strategy(name, fraction)
            init, report.transplant = build_init(strategy, self.target, self.rng("rnnt_init", fraction))
            items = rnnt_items(subset(self.data.target_train, fraction, self.cfg.seed), self.tgt_inv)

            def epoch_log(rec):
                self.log(f"[{name} @ {fraction:g}] epoch {rec['epoch']} loss {rec['loss']:.4f} lr {rec['lr']:.2e}")

            ckpt, hist = train_rnnt(items, init, self.cfg.train_config("rnnt"), self.rng("rnnt_train", fraction),
                                    log=epoch_log, strategy=name, fraction=fraction)
            report.losses = [h["loss"] for h in hist]
            model = RnntModel.from_checkpoint(ckpt)
            lines, refs, hyps = [], [], []
            for utt in self.data.target_test:
                best = beam_decode(model, utt.stacked(), self.cfg.beam_width)[0]
                text = decode_ids(best.labels, self.tgt_inv)
                refs.append(utt.transcript)
                hyps.append(text)
                lines.append(f"{utt.id}\t{text}\t{best.score:.4f}")
            report.wer = wer(refs, hyps)
            slug = f"{_slug_name(name)}_{_slug(fraction)}"
            self._save(ckpt, f"rnnt_{slug}")
            if self.out is not None:
                (self.out / "decode").mkdir(parents=True, exist_ok=True)
                (self.out / "decode" / f"{slug}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
                (self.out / "transplant").mkdir(parents=True, exist_ok=True)
                (self.out / "transplant" / f"{slug}.csv").write_text(report.transplant.to_csv(), encoding="utf-8")
        except (RntError, ValueError, ArithmeticError) as exc:
            report.error = f"{type(exc).__name__}: {exc}"
            self.log(f"[{name} @ {fraction:g}] FAILED {report.error}")
        report.wall_clock = time.perf_counter() - start
        return report


def _slug(fraction: float) -> str:
    return f"f{round(fraction * 100):03d}"


def _slug_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


def _stderr(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def run_experiment(config: ExperimentConfig | dict, out=None, log=_stderr) -> ExperimentResult:
    """Run every configured strategy (and the scaling sweep) and write reports to ``out``."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    cfg.validate()
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    pipe = _Pipeline(cfg, out, log)
    reports = []
    for fraction in cfg.all_fractions():
        names = cfg.strategies if fraction == 1.0 else cfg.scaling_strategies
        names = list(dict.fromkeys(canonical_name(n) for n in [BASELINE, *names]))
        rows = [pipe.run_row(name, fraction) for name in names]
        base = rows[0]
        for r in rows:
            if r.ok and base.ok and base.wer.wer > 0:
                r.werr = werr(base.wer.wer, r.wer.wer)
        reports += rows
    result = ExperimentResult(reports, pipe.pretrain, cfg)
    if out is not None:
        write_reports(result, out)
    return result


# ------------------------------------------------------------------ output

def _fmt(x, digits):
    return "n/a" if x is None else f"{x:.{digits}f}"


def render_table(result: ExperimentResult) -> str:
    lines = ["# Strategy comparison", "",
             f"Target language test set, beam width {result.config.beam_width}, seed {result.config.seed}.", "",
             "| Strategy | WER [%] | WERR [%] | Epoch-1 loss | Final loss | Status |",
             "|---|---:|---:|---:|---:|---|"]
    for r in result.rows(1.0):
        lines.append(f"| {r.strategy} | {_fmt(r.wer_percent, 2)} | {_fmt(r.werr, 1)} | "
                     f"{_fmt(r.losses[0] if r.losses else None, 4)} | "
                     f"{_fmt(r.losses[-1] if r.losses else None, 4)} | {'ok' if r.ok else r.error} |")
    fractions = result.config.all_fractions()
    if len(fractions) > 1:
        lines += ["", "# Data scaling", "", "WER [%] by fraction of the target training data.", "",
                  "| Strategy | " + " | ".join(f"{100 * f:g}%" for f in fractions) + " |",
                  "|---|" + "---:|" * len(fractions)]
        names = list(dict.fromkeys(r.strategy for r in result.reports if r.fraction != 1.0))
        for name in names:
            cells = []
            for f in fractions:
                try:
                    r = result.get(name, f)
                    cells.append(_fmt(r.wer_percent, 2) if r.ok else "failed")
                except KeyError:
                    cells.append("")
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        for name in names:
            if name == BASELINE:
                continue
            cells = []
            for f in fractions:
                try:
                    cells.append(_fmt(result.get(name, f).werr, 1))
                except KeyError:
                    cells.append("")
            lines.append(f"| WERR {name} vs {BASELINE} | " + " | ".join(cells) + " |")
    if result.pretrain:
        lines += ["", "# Pretraining", "", "| Model | Epochs | Final loss | Extra |", "|---|---:|---:|---|"]
        for stage, s in result.pretrain.items():
            extra = ", ".join(f"{k} {_fmt(v, 4)}" for k, v in s.items() if k not in ("epochs", "final_loss"))
            lines.append(f"| {stage} | {s['epochs']} | {_fmt(s['final_loss'], 4)} | {extra} |")
    return "\n".join(lines) + "\n"


def render_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "fraction", "seed", "wer", "werr", "substitutions", "deletions", "insertions",
                "words", "epoch1_loss", "final_loss", "status"])
    for r in result.reports:
        b = r.wer
        w.writerow([r.strategy, f"{r.fraction:g}", r.seed, _fmt(r.wer_percent, 2), _fmt(r.werr, 1),
                    *(("", "", "", "") if b is None else (b.substitutions, b.deletions, b.insertions, b.words)),
                    _fmt(r.losses[0] if r.losses else None, 6), _fmt(r.losses[-1] if r.losses else None, 6),
                    "ok" if r.ok else r.error])
    return buf.getvalue()


def export_loss_curves(reports, path) -> Path:
    """CSV ``strategy,epoch,loss``; rows of a non-default fraction carry it in the strategy id."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "epoch", "loss"])
    for r in reports:
        sid = r.strategy if r.fraction == 1.0 else f"{r.strategy}@{r.fraction:g}"
        for epoch, loss in enumerate(r.losses, 1):
            w.writerow([sid, epoch, repr(float(loss))])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_loss_curves(path) -> dict[str, list[float]]:
    curves: dict[str, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault(row["strategy"], []).append(float(row["loss"]))
    return curves


def write_reports(result: ExperimentResult, out) -> None:
    out = Path(out)
    (out / "report.md").write_text(render_table(result), encoding="utf-8")
    (out / "report.csv").write_text(render_csv(result), encoding="utf-8")
    export_loss_curves(result.reports, out / "loss_curves.csv")
    # wall-clock varies run to run, so it stays out of the reproducible reports
    (out / "timings.csv").write_text(
        "strategy,fraction,seconds\n" + "".join(f"{r.strategy},{r.fraction:g},{r.wall_clock:.2f}\n"
                                                 for r in result.reports), encoding="utf-8")
