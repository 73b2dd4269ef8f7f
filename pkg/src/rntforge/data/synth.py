"""Synthetic source/target language pair sharing one bank of acoustic prototypes.

Both languages are spoken with the same K "phones" (a mean vector held for a
fixed number of raw frames), but they spell them with disjoint alphabets and
draw words and sentences from independent grammars. Whatever an encoder
learns about the prototypes on the source side is therefore reusable on the
target side, while nothing lexical is.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError
from ..numerics import Rng
from .corpus import Utterance

SOURCE_ALPHABET = "abcdefghijklmnopqrstuvwxyz"
TARGET_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class SynthSpec:
    num_phones: int = 12
    feature_dim: int = 80
    min_duration: int = 4
    max_duration: int = 8
    prototype_scale: float = 1.0
    silence_scale: float = 0.3
    noise: float = 1.0
    source_lexicon: int = 60
    target_lexicon: int = 60
    word_phones: tuple[int, int] = (2, 4)
    sentence_words: tuple[int, int] = (2, 4)
    successors: int = 4
    gap_frames: tuple[int, int] = (1, 3)
    edge_frames: tuple[int, int] = (2, 4)
    n_source: int = 2000
    n_target_train: int = 200
    n_target_test: int = 100
    lm_sentences: int = 600
    lm_max_repeats: int = 4

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown synth keys: {sorted(set(d) - known)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Language:
    alphabet: str  # alphabet[k] spells prototype k
    lexicon: list[tuple[int, ...]]
    successors: list[list[int]]

    def spell(self, phones) -> str:
        return "".join(self.alphabet[p] for p in phones)


@dataclass
class SynthCorpus:
    spec: SynthSpec
    means: np.ndarray  # (K, dim) prototype means
    durations: np.ndarray  # (K,) raw frames per prototype
    silence: np.ndarray  # (dim,)
    source_lang: Language
    target_lang: Language
    source: list[Utterance]
    target_train: list[Utterance]
    target_test: list[Utterance]
    lm_text: list[str]

    def external_labels(self) -> list[str]:
        """Names of the fine-grained frame classes carried in ``frame_labels``."""
        names = ["<sil>"]
        for k in range(self.spec.num_phones):
            names += [f"p{k}a", f"p{k}b"]
        return names


def _check(spec: SynthSpec) -> None:
    K = spec.num_phones
    if K > len(SOURCE_ALPHABET):
        raise ConfigError(f"at most {len(SOURCE_ALPHABET)} phones supported")
    if not 1 <= spec.min_duration <= spec.max_duration:
        raise ConfigError("invalid prototype duration range")
    lo, hi = spec.word_phones
    if not 1 <= lo <= hi:
        raise ConfigError("invalid word length range")
    possible_words = sum(K ** n for n in range(lo, hi + 1))
    for lex in (spec.source_lexicon, spec.target_lexicon):
        if lex > possible_words:
            raise ConfigError(f"lexicon of {lex} words exceeds the {possible_words} phone strings "
                              f"of length {lo}..{hi}")
    if spec.successors < 1 or spec.successors > min(spec.source_lexicon, spec.target_lexicon):
        raise ConfigError("successor count must lie in [1, lexicon size]")
    s_lo, s_hi = spec.sentence_words
    if not 1 <= s_lo <= s_hi:
        raise ConfigError("invalid sentence length range")
    sentences = sum(spec.target_lexicon * spec.successors ** (n - 1) for n in range(s_lo, s_hi + 1))
    if spec.lm_sentences > sentences:
        raise ConfigError(f"grammar supports only {sentences} distinct sentences, "
                          f"{spec.lm_sentences} requested for LM text")
    if spec.noise < 0:
        raise ConfigError("noise level must be >= 0")


def _make_language(spec: SynthSpec, alphabet: str, size: int, rng: Rng) -> Language:
    lo, hi = spec.word_phones
    seen = set()
    lexicon = []
    while len(lexicon) < size:
        n = lo + rng.integers(hi - lo + 1)
        word = tuple(int(p) for p in rng.integers(spec.num_phones, size=n))
        if word not in seen:
            seen.add(word)
            lexicon.append(word)
    successors = [sorted(int(j) for j in rng.permutation(size)[:spec.successors]) for _ in range(size)]
    return Language(alphabet, lexicon, successors)


def _sentence(lang: Language, spec: SynthSpec, rng: Rng) -> list[int]:
    lo, hi = spec.sentence_words
    n = lo + rng.integers(hi - lo + 1)
    words = [rng.integers(len(lang.lexicon))]
    while len(words) < n:
        words.append(rng.choice(lang.successors[words[-1]]))
    return words


def _render(uid: str, words: list[int], lang: Language, corpus: SynthCorpus, rng: Rng) -> Utterance:
    spec = corpus.spec
    segments = []  # (vector, n_frames, fine_label)
    alignment = []
    pos = 0

    def silence(lo_hi):
        nonlocal pos
        n = lo_hi[0] + rng.integers(lo_hi[1] - lo_hi[0] + 1)
        segments.append((corpus.silence, n, 0, 0))
        pos += n

    silence(spec.edge_frames)
    for k, w in enumerate(words):
        if k:
            silence(spec.gap_frames)
        start = pos
        for p in lang.lexicon[w]:
            d = int(corpus.durations[p])
            segments.append((corpus.means[p], d, 1 + 2 * p, d // 2))
            pos += d
        alignment.append((lang.spell(lang.lexicon[w]), start, pos - 1))
    silence(spec.edge_frames)

    clean = np.concatenate([np.repeat(vec[None], n, axis=0) for vec, n, _, _ in segments])
    fine = np.concatenate([np.r_[np.full(half, lab), np.full(n - half, lab + (lab > 0))]
                           for _, n, lab, half in segments]).astype(np.int64)
    feats = clean
    if spec.noise > 0:
        feats = clean + rng.normal(clean.shape, scale=spec.noise)
    feats = feats.astype(np.float32).astype(np.float64)
    text = " ".join(w for w, _, _ in alignment)
    return Utterance(uid, feats, text, alignment, fine)


def synth_corpus(spec: SynthSpec, seed: int = 42) -> SynthCorpus:
    _check(spec)
    rng = Rng(seed)
    K, dim = spec.num_phones, spec.feature_dim
    means = rng.normal((K, dim), scale=spec.prototype_scale)
    durations = spec.min_duration + rng.integers(spec.max_duration - spec.min_duration + 1, size=K)
    silence = rng.normal(dim, scale=spec.silence_scale)
    perm = rng.permutation(K)
    source_lang = _make_language(spec, SOURCE_ALPHABET[:K], spec.source_lexicon, rng.spawn())
    target_lang = _make_language(spec, "".join(TARGET_ALPHABET[int(i)] for i in perm),
                                 spec.target_lexicon, rng.spawn())
    corpus = SynthCorpus(spec, means, durations, silence, source_lang, target_lang, [], [], [], [])

    src_rng, trn_rng, tst_rng, lm_rng = rng.spawn(), rng.spawn(), rng.spawn(), rng.spawn()
    corpus.source = [_render(f"src{i:05d}", _sentence(source_lang, spec, src_rng), source_lang, corpus, src_rng)
                     for i in range(spec.n_source)]
    corpus.target_train = [_render(f"tgt{i:05d}", _sentence(target_lang, spec, trn_rng), target_lang,
                                   corpus, trn_rng) for i in range(spec.n_target_train)]
    corpus.target_test = [_render(f"tst{i:05d}", _sentence(target_lang, spec, tst_rng), target_lang,
                                  corpus, tst_rng) for i in range(spec.n_target_test)]

    unique: dict[str, None] = {}
    while len(unique) < spec.lm_sentences:
        words = _sentence(target_lang, spec, lm_rng)
        unique.setdefault(" ".join(target_lang.spell(target_lang.lexicon[w]) for w in words))
    lm_text = []
    for sentence in unique:
        lm_text += [sentence] * (1 + lm_rng.integers(spec.lm_max_repeats))
    order = lm_rng.permutation(len(lm_text))
    corpus.lm_text = [lm_text[i] for i in order]
    return corpus


def nearest_prototype_transcript(utt: Utterance, corpus: SynthCorpus, lang: Language) -> str:
    """Reference recognizer: label frames by nearest mean, split words at silence."""
    bank = np.vstack([corpus.silence[None], corpus.means])
    dists = ((utt.features[:, None, :] - bank[None]) ** 2).sum(axis=2)
    cls = np.argmin(dists, axis=1)
    words, current = [], []
    t = 0
    while t < len(cls):
        run = t
        while run < len(cls) and cls[run] == cls[t]:
            run += 1
        if cls[t] == 0:
            if current:
                words.append(lang.spell(current))
                current = []
        else:
            p = int(cls[t]) - 1
            current += [p] * max(1, round((run - t) / int(corpus.durations[p])))
        t = run
    if current:
        words.append(lang.spell(current))
    return " ".join(words)
