"""Command-line entry point: ``rntforge <subcommand> ...``.

Hyperparameters come from JSON config files; flags only pick files,
strategies and seeds. Results go to files or stdout, diagnostics to stderr.
Exit status: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import RntError

log = logging.getLogger("rntforge")

THREADS_ENV = "RNTFORGE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- helpers

def load_config(path) -> dict:
    """JSON config from ``path``, falling back to the bundled configs by file name."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        bundled = resources.files("rntforge") / "configs" / p.name
        if not bundled.is_file():
            raise FileNotFoundError(f"config {path} not found (bundled: {', '.join(bundled_configs())})")
        return json.loads(bundled.read_text(encoding="utf-8"))
    return json.loads(p.read_text(encoding="utf-8"))


def bundled_configs() -> list[str]:
    return sorted(f.name for f in (resources.files("rntforge") / "configs").iterdir() if f.name.endswith(".json"))


def _arch_train(cfg: dict):
    from .nn.arch import RnntConfig
    from .training import TrainConfig
    extra = set(cfg) - {"arch", "train"}
    if extra:
        from .errors import ConfigError
        raise ConfigError(f"unknown config sections {sorted(extra)}; expected 'arch' and 'train'")
    return RnntConfig.from_dict(cfg.get("arch", {})), TrainConfig.from_dict(cfg.get("train", {}))


def _epoch_logger(name):
    def emit(rec):
        log.info("%s epoch %d loss %s", name, rec["epoch"],
                 " ".join(f"{k}={v:.4f}" for k, v in rec.items() if k != "epoch"))
    return emit


def _inventory(path, kind="grapheme"):
    from .tokenize import LabelInventory
    return LabelInventory.load(path, kind=kind)


def _merges(path):
    from .tokenize import load_merges
    return load_merges(path) if path else None


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    from .data import SynthSpec, save_dataset, synth_corpus
    from .data.corpus import write_text
    cfg = load_config(args.config)
    spec = SynthSpec.from_dict(cfg.get("synth") or {} if "synth" in cfg else cfg)
    corpus = synth_corpus(spec, seed=args.seed)
    out = Path(args.out)
    for name, utts in (("source", corpus.source), ("target_train", corpus.target_train),
                       ("target_test", corpus.target_test)):
        save_dataset(utts, out / name)
    write_text(corpus.lm_text, out / "lm_text.txt")
    write_text(corpus.external_labels(), out / "external_labels.txt")
    (out / "synth_spec.json").write_text(json.dumps({"seed": args.seed, **spec.to_dict()}, indent=2,
                                                    sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus.source)} source, {len(corpus.target_train)} target-train, "
          f"{len(corpus.target_test)} target-test utterances to {out}")


def cmd_features(args):
    from .data.frontend import FrontendConfig, logmel, read_wav, stack_frames
    from .nn.checkpoint import save_tensors
    cfg = FrontendConfig(**load_config(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for wav in args.wav:
        samples, rate = read_wav(wav)
        if rate != cfg.sample_rate:
            raise RntError(f"{wav}: sample rate {rate}, expected {cfg.sample_rate}")
        feats = logmel(samples, cfg)
        if args.stacked:
            feats = stack_frames(feats, cfg.stack, cfg.stack_shift)
        save_tensors(out / Path(wav).stem, {"features": feats}, {"source": Path(wav).name})
        print(f"{Path(wav).stem}\t{feats.shape[0]}\t{feats.shape[1]}")


def cmd_tokenize(args):
    from .data.corpus import load_dataset, read_text
    from .tokenize import bpe_train, build_grapheme_inventory, build_wordpiece_inventory, save_merges, word_frequencies
    cfg = load_config(args.config)
    lines = []
    for src in args.text:
        p = Path(src)
        lines += [u.transcript for u in load_dataset(p)] if p.is_dir() else read_text(p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "wordpiece":
        merges = bpe_train(word_frequencies(lines), int(cfg.get("num_merges", 20)))
        save_merges(merges, out / "merges.tsv")
        inv = build_wordpiece_inventory(lines, merges)
    else:
        inv = build_grapheme_inventory(lines)
    inv.save(out / "inventory.txt")
    print(f"{args.kind} inventory of {len(inv)} labels -> {out / 'inventory.txt'}")


def cmd_train_ce(args):
    from .data.corpus import load_dataset, read_text
    from .nn.checkpoint import load_checkpoint, save_checkpoint
    from .numerics import Rng
    from .pretrain import ce_accuracy, ce_items, train_ce
    from .tokenize import LabelInventory, ce_inventory
    arch, train = _arch_train(load_config(args.config))
    utts = load_dataset(args.data)
    merges = _merges(args.merges)
    if args.external:
        labels = LabelInventory(tuple(read_text(args.external)), kind="external", blank_index=None)
        items, targets = ce_items(utts, labels, external=True), "external"
    else:
        inv = _inventory(args.inventory, "wordpiece" if merges else "grapheme")
        labels = ce_inventory(inv)
        items, targets = ce_items(utts, labels, merges), inv.kind
    init = load_checkpoint(args.init) if args.init else None
    if init is not None and init.labels != list(labels.labels):
        # cross-inventory start: copy the encoder only, as a transplant
        from .transfer import TargetSpec, transplant
        init, report = transplant(TargetSpec(arch, labels, args.language, kind="ce"), init, "encoder",
                                  Rng(args.seed).spawn())
        sys.stderr.write(report.to_text())
    ckpt, _ = train_ce(items, labels, arch, train, Rng(args.seed), init=init, language=args.language,
                       targets=targets, log=_epoch_logger("ce"))
    save_checkpoint(ckpt, args.out)
    print(f"frame accuracy {ce_accuracy(ckpt, items):.4f}")


def cmd_train_lm(args):
    from .data.corpus import read_text
    from .nn.checkpoint import save_checkpoint
    from .numerics import Rng
    from .pretrain import train_lm
    arch, train = _arch_train(load_config(args.config))
    ckpt, hist = train_lm(read_text(args.text), _inventory(args.inventory, "grapheme"), arch, train,
                          Rng(args.seed), language=args.language, log=_epoch_logger("lm"))
    save_checkpoint(ckpt, args.out)
    if hist:
        print(f"perplexity {hist[-1]['perplexity']:.4f}")


STRATEGY_CHOICES = ("Random", "SourceRnntEncoder", "SourceCeEncoder", "TwoStage(grapheme)", "TwoStage(external)",
                    "CePlusLm(target-ce)", "CePlusLm(source-ce)")


def cmd_train_rnnt(args):
    from .data.corpus import load_dataset
    from .evalharness.experiment import parse_strategy
    from .nn.checkpoint import load_checkpoint, save_checkpoint
    from .numerics import Rng
    from .transducer.train import rnnt_items, train_rnnt
    from .transfer import InitStrategy, TargetSpec, build_init
    arch, train = _arch_train(load_config(args.config))
    merges = _merges(args.merges)
    inv = _inventory(args.inventory, "wordpiece" if merges else "grapheme")
    variant, opts = parse_strategy(args.init)
    strategy = InitStrategy(variant, encoder_source=load_checkpoint(args.encoder) if args.encoder else None,
                            lm_source=load_checkpoint(args.lm) if args.lm else None, **opts)
    rng = Rng(args.seed)
    init, report = build_init(strategy, TargetSpec(arch, inv, args.language), rng.spawn())
    sys.stderr.write(report.to_text())
    items = rnnt_items(load_dataset(args.data), inv, merges)
    ckpt, hist = train_rnnt(items, init, train, rng.spawn(), log=_epoch_logger("rnnt"))
    save_checkpoint(ckpt, args.out)
    if hist:
        print(f"final training loss {hist[-1]['loss']:.4f}")


def cmd_transplant(args):
    from .nn.checkpoint import load_checkpoint, save_checkpoint
    from .numerics import Rng
    from .tokenize import ce_inventory
    from .transfer import TargetSpec, transplant
    arch, _ = _arch_train(load_config(args.config))
    inv = _inventory(args.inventory, args.label_kind)
    if args.kind == "ce":
        inv = ce_inventory(inv)
    scope = args.scope if args.scope in ("encoder", "prediction") else set(args.scope.split(","))
    ckpt, report = transplant(TargetSpec(arch, inv, args.language, kind=args.kind), load_checkpoint(args.source),
                              scope, Rng(args.seed))
    save_checkpoint(ckpt, args.out)
    Path(str(args.out) + ".transplant.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())


def cmd_decode(args):
    from .data.corpus import load_dataset
    from .nn.checkpoint import load_checkpoint
    from .tokenize import decode_ids
    from .transducer.decode import beam_decode
    from .transducer.model import RnntModel
    model = RnntModel.from_checkpoint(load_checkpoint(args.model))
    lines = []
    for utt in load_dataset(args.data):
        best = beam_decode(model, utt.stacked(), args.beam)[0]
        lines.append(f"{utt.id}\t{decode_ids(best.labels, model.inventory)}\t{best.score:.4f}\n")
    if args.out:
        Path(args.out).write_text("".join(lines), encoding="utf-8")
    else:
        sys.stdout.write("".join(lines))


def _read_transcripts(path) -> list[tuple[str | None, str]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "\t" in line:
            cols = line.split("\t")
            rows.append((cols[0], cols[1]))
        elif line.strip():
            rows.append((None, line.strip()))
    return rows


def cmd_score(args):
    from .evalharness.scoring import wer
    refs, hyps = _read_transcripts(args.ref), _read_transcripts(args.hyp)
    if all(i is not None for i, _ in refs + hyps):
        by_id = dict(hyps)
        missing = [i for i, _ in refs if i not in by_id]
        if missing:
            raise RntError(f"hypotheses missing for {len(missing)} utterances, e.g. {missing[0]}")
        pairs = [(text, by_id[i]) for i, text in refs]
    else:
        pairs = list(zip((t for _, t in refs), (t for _, t in hyps)))
        if len(refs) != len(hyps):
            raise RntError(f"{len(refs)} reference lines but {len(hyps)} hypothesis lines")
    b = wer([r for r, _ in pairs], [h for _, h in pairs])
    print(f"WER {100 * b.wer:.2f} (S={b.substitutions} D={b.deletions} I={b.insertions} N={b.words})")


def cmd_experiment(args):
    from .evalharness.experiment import ExperimentConfig, render_table, run_experiment
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    result = run_experiment(ExperimentConfig.from_dict(cfg), out=args.out, log=log.info)
    sys.stdout.write(render_table(result))
    failed = [r for r in result.reports if not r.ok]
    for r in failed:
        log.warning("strategy %s at fraction %g failed: %s", r.strategy, r.fraction, r.error)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rntforge", description="RNN-T training and transfer-learning laboratory.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (-vv: debug)")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    def add(name, func, help_text, out_help="output path"):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file (or the name of a bundled config)")
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default: the config's seed for experiment, else 42)")
        p.add_argument("--out", required=name not in ("decode", "score"), help=out_help)
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="log progress to stderr")
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, "generate the synthetic source/target corpus", "output directory")

    p = add("features", cmd_features, "log-mel features from 16 kHz mono WAV files", "output directory")
    p.add_argument("wav", nargs="+", help="input WAV files")
    p.add_argument("--stacked", action="store_true", help="store stacked 640-dim frames instead of raw 80-dim")

    p = add("tokenize", cmd_tokenize, "build a label inventory (and BPE merges for word pieces)",
            "output directory")
    p.add_argument("text", nargs="+", help="text files (one sentence per line) or dataset directories")
    p.add_argument("--kind", choices=("grapheme", "wordpiece"), default="grapheme")

    p = add("train-ce", cmd_train_ce, "train a frame-level cross-entropy encoder", "checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory with word alignments")
    p.add_argument("--inventory", help="RNN-T label inventory file")
    p.add_argument("--merges", help="BPE merge file (word-piece targets)")
    p.add_argument("--external", help="label file for externally supplied frame labels")
    p.add_argument("--init", help="CE checkpoint to start from")
    p.add_argument("--language", default="target")

    p = add("train-lm", cmd_train_lm, "train a grapheme LSTM language model", "checkpoint path")
    p.add_argument("--text", required=True, help="text corpus, one sentence per line")
    p.add_argument("--inventory", required=True, help="grapheme inventory file")
    p.add_argument("--language", default="target")

    p = add("train-rnnt", cmd_train_rnnt, "train an RNN-T model from an initialization strategy",
            "checkpoint path")
    p.add_argument("--init", required=True, choices=STRATEGY_CHOICES, help="initialization strategy")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--inventory", required=True, help="label inventory file")
    p.add_argument("--merges", help="BPE merge file (word-piece targets)")
    p.add_argument("--encoder", help="checkpoint supplying the encoder")
    p.add_argument("--lm", help="LM checkpoint supplying the prediction network")
    p.add_argument("--language", default="target")

    p = add("transplant", cmd_transplant, "copy tensors from a checkpoint into a fresh model", "checkpoint path")
    p.add_argument("--source", required=True, help="source checkpoint")
    p.add_argument("--inventory", required=True, help="target label inventory file")
    p.add_argument("--scope", default="encoder", help="encoder, prediction, or comma-separated tensor names")
    p.add_argument("--kind", choices=("rnnt", "ce"), default="rnnt", help="target model kind")
    p.add_argument("--label-kind", choices=("grapheme", "wordpiece"), default="grapheme")
    p.add_argument("--language", default="target")

    p = add("decode", cmd_decode, "beam-search decode a dataset (id<TAB>text<TAB>score)",
            "output file (default stdout)")
    p.add_argument("--model", required=True, help="RNN-T checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--beam", type=int, default=4, help="beam width (default 4)")

    p = add("score", cmd_score, "word error rate of hypotheses against references", "unused")
    p.add_argument("--ref", required=True, help="reference transcripts (text or id<TAB>text lines)")
    p.add_argument("--hyp", required=True, help="hypothesis transcripts (text or decode output)")

    add("experiment", cmd_experiment, "run the strategy-matrix experiment", "report directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    if args.seed is None and args.command != "experiment":
        args.seed = 42
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    threads = os.environ.get(THREADS_ENV)
    try:
        with threadpool_limits(limits=int(threads) if threads else None):
            args.func(args)
    except (RntError, OSError, ValueError) as exc:
        print(f"rntforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
