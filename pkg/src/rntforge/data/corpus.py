"""Utterances, word-alignment splitting, CE frame targets and dataset manifests."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import AlignmentError, DataError, VocabularyError
from ..nn.checkpoint import load_tensors, save_tensors
from ..tokenize import SILENCE, LabelInventory, bpe_encode, grapheme_encode
from .frontend import stack_frames


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # raw (T_raw, 80) frames
    transcript: str
    alignment: list[tuple[str, int, int]] | None = None  # inclusive raw-frame spans
    frame_labels: np.ndarray | None = None  # externally supplied fine-grained classes

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.alignment is None:
            return
        self.alignment = [(w, int(s), int(e)) for w, s, e in self.alignment]
        prev_end = -1
        for word, start, end in self.alignment:
            if not prev_end < start <= end < self.num_raw_frames:
                raise AlignmentError(f"{self.id}: span ({word}, {start}, {end}) overlaps, is "
                                     f"out of order or outside [0, {self.num_raw_frames})")
            prev_end = end
        if [w for w, _, _ in self.alignment] != self.transcript.split():
            raise AlignmentError(f"{self.id}: alignment words do not match transcript")

    @property
    def num_raw_frames(self) -> int:
        return self.features.shape[0]

    def stacked(self) -> np.ndarray:
        return stack_frames(self.features)


def split_word_alignment(span: tuple[int, int], num_pieces: int) -> list[tuple[int, int]]:
    """Divide an inclusive frame span evenly; leftover frames go to the last pieces."""
    start, end = span
    length = end - start + 1
    if num_pieces < 1 or length < num_pieces:
        raise AlignmentError(f"span {span} of {length} frames cannot hold {num_pieces} pieces")
    base, extra = divmod(length, num_pieces)
    spans = []
    pos = start
    for k in range(num_pieces):
        n = base + (1 if k >= num_pieces - extra else 0)
        spans.append((pos, pos + n - 1))
        pos += n
    return spans


def word_pieces(word: str, merges=None) -> list[str]:
    return grapheme_encode(word) if merges is None else bpe_encode(word, merges)


def frame_targets(utt: Utterance, ce_labels: LabelInventory, merges=None) -> np.ndarray:
    """Per raw frame CE label ids; frames outside every word span get silence.

    ``merges=None`` selects grapheme pieces, otherwise BPE word pieces.
    """
    if utt.alignment is None:
        raise DataError(f"{utt.id}: no word alignment")
    targets = np.full(utt.num_raw_frames, ce_labels.index(SILENCE), dtype=np.int64)
    for word, start, end in utt.alignment:
        pieces = word_pieces(word, merges)
        try:
            ids = ce_labels.ids(pieces)
            spans = split_word_alignment((start, end), len(pieces))
        except (VocabularyError, AlignmentError) as exc:
            raise AlignmentError(f"{utt.id}: cannot align word {word!r}: {exc}") from exc
        for label, (s, e) in zip(ids, spans):
            targets[s:e + 1] = label
    return targets


def stacked_targets(targets: np.ndarray, stack: int = 8, shift: int = 3) -> np.ndarray:
    """Label of each stacked frame: the raw frame at the centre of its window."""
    T = (targets.shape[0] - stack) // shift + 1
    return targets[shift * np.arange(T) + stack // 2]


def save_dataset(utts, directory) -> Path:
    """Write feature blobs, alignment files and ``manifest.tsv`` under ``directory``."""
    root = Path(directory)
    (root / "features").mkdir(parents=True, exist_ok=True)
    lines = []
    for utt in utts:
        feat = f"features/{utt.id}"
        save_tensors(root / feat, {"features": utt.features})
        ali = ""
        if utt.alignment is not None:
            ali = f"features/{utt.id}.ali"
            (root / ali).write_text("".join(f"{w}\t{s}\t{e}\n" for w, s, e in utt.alignment),
                                    encoding="utf-8")
        cols = [utt.id, feat, utt.transcript, ali]
        if utt.frame_labels is not None:
            lab = f"features/{utt.id}.labels"
            save_tensors(root / lab, {"labels": utt.frame_labels.astype(np.float64)})
            cols.append(lab)
        lines.append("\t".join(cols))
    (root / "manifest.tsv").write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    return root / "manifest.tsv"


def load_dataset(path) -> list[Utterance]:
    """Read a manifest (or a directory holding ``manifest.tsv``)."""
    manifest = Path(path)
    if manifest.is_dir():
        manifest = manifest / "manifest.tsv"
    root = manifest.parent
    utts = []
    for n, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 3:
            raise DataError(f"{manifest}:{n}: expected id, features, transcript[, alignment]")
        uid, feat, text = cols[:3]
        features = load_tensors(root / feat)["features"]
        alignment = None
        if len(cols) > 3 and cols[3]:
            alignment = []
            for row in (root / cols[3]).read_text(encoding="utf-8").splitlines():
                w, s, e = row.split("\t")
                alignment.append((w, int(s), int(e)))
        labels = None
        if len(cols) > 4 and cols[4]:
            labels = load_tensors(root / cols[4])["labels"].astype(np.int64)
        utts.append(Utterance(uid, features, text, alignment, labels))
    return utts


def read_text(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def write_text(lines, path) -> None:
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
