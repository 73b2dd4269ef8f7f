"""Word error rate with an explicit edit alignment, and relative WER reduction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ShapeError


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        """Error ratio (not percent)."""
        return self.errors / self.words if self.words else float(self.errors > 0)

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(self.substitutions + other.substitutions, self.deletions + other.deletions,
                            self.insertions + other.insertions, self.words + other.words)


def align(ref: list[str], hyp: list[str]) -> WerBreakdown:
    """Unit-cost Levenshtein alignment of one pair.

    On backtrace ties a substitution (or match) is preferred over a deletion,
    and a deletion over an insertion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), d[i - 1, j] + 1, d[i, j - 1] + 1)
    i, j = n, m
    s = dl = ins = 0
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i, j] == d[i - 1, j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(int(s), dl, ins, n)


def wer(references, hypotheses) -> WerBreakdown:
    """Corpus-level breakdown over paired transcripts (strings or word lists)."""
    references, hypotheses = list(references), list(hypotheses)
    if len(references) != len(hypotheses):
        raise ShapeError(f"{len(references)} references but {len(hypotheses)} hypotheses")
    if not references:
        raise DomainError("WER of an empty reference set")
    total = WerBreakdown(0, 0, 0, 0)
    for ref, hyp in zip(references, hypotheses):
        ref = ref.split() if isinstance(ref, str) else list(ref)
        hyp = hyp.split() if isinstance(hyp, str) else list(hyp)
        total = total + align(ref, hyp)
    if total.words == 0:
        raise DomainError("references contain no words")
    return total


def werr(baseline_wer: float, system_wer: float) -> float:
    """Relative reduction in percent: 100 * (baseline - system) / baseline."""
    if not baseline_wer > 0:
        raise DomainError(f"WERR needs a positive baseline WER, got {baseline_wer}")
    return 100.0 * (baseline_wer - system_wer) / baseline_wer
