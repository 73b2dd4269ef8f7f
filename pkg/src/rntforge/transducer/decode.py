"""Greedy and frame-synchronous beam-search decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..numerics import log_softmax
from .model import RnntModel

MAX_SYMBOLS_PER_FRAME = 10


@dataclass
class Hypothesis:
    labels: tuple[int, ...]
    score: float
    state: object = None


class _Scorer:
    """Caches prediction-network states per label prefix for one utterance."""

    def __init__(self, model: RnntModel, features):
        p = model.params
        self.model = model
        self.enc_proj = model.encode(features) @ p["joint.w_enc"].T
        self.cache: dict[tuple[int, ...], np.ndarray] = {}
        self.states: dict[tuple[int, ...], object] = {}
        self.joint_cache: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

    def _pred(self, labels: tuple[int, ...]) -> np.ndarray:
        if labels in self.cache:
            return self.cache[labels]
        m = self.model
        p = m.params
        if labels:
            self._pred(labels[:-1])
            state = self.states[labels[:-1]]
            last = labels[-1]
        else:
            state = m.prediction.zero_state(1)
            last = m.blank
        emb = p["prediction.embedding"][last][None]
        out, new_state = m.prediction.step(p, emb, state)
        self.states[labels] = new_state
        self.cache[labels] = out[0] @ p["joint.w_pred"].T + p["joint.bias"]
        return self.cache[labels]

    def log_probs(self, t: int, labels: tuple[int, ...]) -> np.ndarray:
        hit = self.joint_cache.get((t, labels))
        if hit is None:
            p = self.model.params
            z = np.tanh(self.enc_proj[t] + self._pred(labels))
            hit = self.joint_cache[(t, labels)] = log_softmax(z @ p["joint.w_out"].T + p["joint.b_out"])
        return hit


def greedy_decode(model: RnntModel, features, max_symbols: int = MAX_SYMBOLS_PER_FRAME) -> list[int]:
    scorer = _Scorer(model, features)
    labels: tuple[int, ...] = ()
    for t in range(scorer.enc_proj.shape[0]):
        for _ in range(max_symbols):
            k = int(np.argmax(scorer.log_probs(t, labels)))
            if k == model.blank:
                break
            labels = labels + (k,)
    return list(labels)


def _logadd(a, b):
    return b if a is None else float(np.logaddexp(a, b))


def _search(scorer: _Scorer, blank: int, width: int, max_symbols: int) -> dict[tuple[int, ...], float]:
    beams: dict[tuple[int, ...], float] = {(): 0.0}
    for t in range(scorer.enc_proj.shape[0]):
        active = beams
        closed: dict[tuple[int, ...], float] = {}
        for step in range(max_symbols + 1):
            extended: dict[tuple[int, ...], float] = {}
            # label that produced each open entry; lower label wins score ties
            via: dict[tuple[int, ...], int] = {}
            for labels, score in active.items():
                lp = scorer.log_probs(t, labels)
                closed[labels] = _logadd(closed.get(labels), score + float(lp[blank]))
                if step < max_symbols:
                    for k in range(lp.shape[0]):
                        if k == blank:
                            continue
                        seq = labels + (k,)
                        extended[seq] = _logadd(extended.get(seq), score + float(lp[k]))
                        via.setdefault(seq, k)
            pool = [(-s, blank, 0, seq) for seq, s in closed.items()]
            pool += [(-s, via[seq], 1, seq) for seq, s in extended.items()]
            pool.sort()
            kept = pool[:width]
            closed = {seq: -neg for neg, _, is_open, seq in kept if not is_open}
            active = {seq: -neg for neg, _, is_open, seq in kept if is_open}
            if not active:
                break
        beams = closed
    return beams


def beam_decode(model: RnntModel, features, beam_width: int = 4,
                max_symbols: int = MAX_SYMBOLS_PER_FRAME) -> list[Hypothesis]:
    """Frame-synchronous beam search with log-add merging of equal label sequences.

    Within a frame a hypothesis either closes the frame with blank or emits
    a label (at most ``max_symbols`` times). Closed and open hypotheses
    compete for the same slots, so a width of one reproduces greedy decoding.

    Top-k pruning alone is not monotone in k, so the n-best list for width k
    pools the searches of every width 1..k (keeping each sequence's best
    score). The searched set then grows with k and the best score can only
    improve; joint evaluations are cached, so the extra passes are cheap.
    Returns at most ``beam_width`` hypotheses, best first.
    """
    if beam_width < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam_width}")
    scorer = _Scorer(model, features)
    pooled: dict[tuple[int, ...], float] = {}
    for width in range(1, beam_width + 1):
        for labels, score in _search(scorer, model.blank, width, max_symbols).items():
            if labels not in pooled or score > pooled[labels]:
                pooled[labels] = score
    hyps = [Hypothesis(labels, score, scorer.states.get(labels)) for labels, score in pooled.items()]
    hyps.sort(key=lambda h: (-h.score, h.labels))
    return hyps[:beam_width]
