"""Label inventories: B_-prefixed graphemes and BPE word pieces."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import DecodeError, DomainError, VocabularyError

BLANK = "<blank>"
SILENCE = "<sil>"
BOS = "<s>"
WORD_START = "B_"


@dataclass(frozen=True)
class LabelInventory:
    labels: tuple[str, ...]
    kind: str = "grapheme"
    blank_index: int | None = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise DomainError("label inventory contains duplicates")
        if self.blank_index is None:
            # frame-level (CE) inventories carry no blank
            if BLANK in self.labels:
                raise DomainError(f"blank-free inventory contains {BLANK}")
        elif self.labels.count(BLANK) != 1 or self.labels[self.blank_index] != BLANK:
            raise DomainError(f"inventory needs exactly one {BLANK} at index {self.blank_index}")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise VocabularyError(f"label {label!r} not in inventory") from None

    def ids(self, labels) -> list[int]:
        return [self.index(lab) for lab in labels]

    def lookup(self, ids) -> list[str]:
        return [self.labels[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.labels) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, kind: str = "grapheme") -> "LabelInventory":
        labels = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
        if not labels or labels[0] != BLANK:
            raise DomainError(f"{path}: first line must be {BLANK}")
        return cls(tuple(labels), kind=kind)


def grapheme_encode(sentence: str, inventory: LabelInventory | None = None) -> list[str]:
    labels = []
    for word in sentence.split():
        for k, ch in enumerate(word):
            labels.append(WORD_START + ch if k == 0 else ch)
    if inventory is not None:
        for lab in labels:
            if lab not in inventory._index:
                raise VocabularyError(f"unknown grapheme {lab.removeprefix(WORD_START)!r} in {sentence!r}")
    return labels


def grapheme_decode(labels, strict: bool = False) -> str:
    """Join pieces into words, splitting before every B_ label.

    A leading piece without the marker opens an implicit word unless
    ``strict`` is set, in which case it is a DecodeError.
    """
    words: list[str] = []
    for lab in labels:
        if lab.startswith(WORD_START):
            words.append(lab[len(WORD_START):])
        elif not words:
            if strict:
                raise DecodeError(f"label sequence starts with non-boundary label {lab!r}")
            words.append(lab)
        else:
            words[-1] += lab
    return " ".join(words)


def build_grapheme_inventory(corpus) -> LabelInventory:
    graphemes = sorted({ch for line in corpus for ch in line if not ch.isspace()})
    if not graphemes:
        raise DomainError("cannot build a grapheme inventory from an empty corpus")
    labels = [BLANK] + [WORD_START + g for g in graphemes] + graphemes
    return LabelInventory(tuple(labels), kind="grapheme")


MergeTable = list  # ordered (left, right) pairs; rank = position


def _merge_symbols(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def bpe_train(word_freqs: dict[str, int], num_merges: int) -> MergeTable:
    """Greedy most-frequent-pair merges; ties go to the lexicographically smallest pair."""
    if num_merges < 0:
        raise DomainError("num_merges must be >= 0")
    vocab = {word: list(word) for word in word_freqs}
    merges: MergeTable = []
    for _ in range(num_merges):
        counts: Counter = Counter()
        for word, symbols in vocab.items():
            for pair in zip(symbols, symbols[1:]):
                counts[pair] += word_freqs[word]
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        vocab = {w: _merge_symbols(s, best) for w, s in vocab.items()}
    return merges


def bpe_encode(word: str, merges: MergeTable) -> list[str]:
    if not word:
        raise DomainError("cannot encode an empty word")
    ranks = {tuple(pair): r for r, pair in enumerate(merges)}
    symbols = list(word)
    while len(symbols) > 1:
        present = [ranks[p] for p in zip(symbols, symbols[1:]) if p in ranks]
        if not present:
            break
        symbols = _merge_symbols(symbols, tuple(merges[min(present)]))
    symbols[0] = WORD_START + symbols[0]
    return symbols


def wordpiece_encode(sentence: str, merges: MergeTable, inventory: LabelInventory | None = None) -> list[str]:
    pieces = [p for word in sentence.split() for p in bpe_encode(word, merges)]
    if inventory is not None:
        inventory.ids(pieces)
    return pieces


def build_wordpiece_inventory(corpus, merges: MergeTable) -> LabelInventory:
    pieces = {p for line in corpus for p in wordpiece_encode(line, merges)}
    if not pieces:
        raise DomainError("cannot build a word-piece inventory from an empty corpus")
    return LabelInventory((BLANK, *sorted(pieces)), kind="wordpiece")


def word_frequencies(corpus) -> dict[str, int]:
    return dict(Counter(w for line in corpus for w in line.split()))


def save_merges(merges: MergeTable, path) -> None:
    lines = [f"{r}\t{a}\t{b}" for r, (a, b) in enumerate(merges)]
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def load_merges(path) -> MergeTable:
    merges = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        rank, a, b = line.split("\t")
        if int(rank) != len(merges):
            raise DomainError(f"{path}: merge ranks must be 0, 1, 2, ... (got {rank})")
        if (a, b) in merges:
            raise DomainError(f"{path}: duplicate merge {(a, b)}")
        merges.append((a, b))
    return merges


def encode_transcript(text: str, inventory: LabelInventory, merges: MergeTable | None = None) -> list[int]:
    """Label ids for a transcript in either inventory kind."""
    if inventory.kind == "wordpiece":
        return inventory.ids(wordpiece_encode(text, merges or []))
    return inventory.ids(grapheme_encode(text, inventory))


def ce_inventory(inventory: LabelInventory) -> LabelInventory:
    """Frame-level label set: the transducer labels minus blank, plus silence."""
    labels = [lab for i, lab in enumerate(inventory.labels) if i != inventory.blank_index]
    return LabelInventory((*labels, SILENCE), kind=inventory.kind, blank_index=None)


def decode_ids(ids, inventory: LabelInventory) -> str:
    return grapheme_decode([inventory.labels[i] for i in ids if i != inventory.blank_index])
