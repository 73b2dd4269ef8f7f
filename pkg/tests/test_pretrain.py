import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rntforge.data import SynthSpec, Utterance, synth_corpus
from rntforge.errors import DataError, TransplantError, VocabularyError
from rntforge.nn.arch import RnntConfig
from rntforge.numerics import Rng, finite_diff_grad, rel_error
from rntforge.pretrain import (ce_accuracy, ce_forward, ce_items, dedup_sentences, init_ce_params,
                               init_lm_params, lm_checkpoint, lm_forward, lm_items, perplexity, train_ce,
                               train_lm)
from rntforge.tokenize import build_grapheme_inventory, ce_inventory
from rntforge.training import TrainConfig

SMALL_ARCH = RnntConfig(enc_layers=2, enc_hidden=32, enc_proj=16, pred_layers=1, pred_hidden=32,
                        pred_proj=16, embed_dim=16, joint_dim=16)


@pytest.fixture(scope="module")
def clean():
    c = synth_corpus(SynthSpec(noise=0.0, n_source=60, n_target_train=5, n_target_test=5, lm_sentences=20), seed=0)
    labels = ce_inventory(build_grapheme_inventory([u.transcript for u in c.source]))
    return c, labels, ce_items(c.source, labels)


# ---------------------------------------------------------------- CE

def test_ce_initial_loss_is_about_log_k(clean):
    _, labels, items = clean
    K = len(labels)
    params = init_ce_params(SMALL_ARCH, K, Rng(0))
    loss, _, _, _ = ce_forward(SMALL_ARCH, params, items[:8])
    assert loss == pytest.approx(math.log(K), rel=0.1)
    params["ce.w_out"][:] = 0.0
    loss, _, _, _ = ce_forward(SMALL_ARCH, params, items[:8])
    assert loss == pytest.approx(math.log(K), abs=1e-12)


def test_ce_gradient_matches_finite_differences(tiny_arch):
    rng = np.random.default_rng(0)
    params = init_ce_params(tiny_arch, 5, Rng(1))
    batch = [(rng.normal(size=(2, 6)), np.array([1, 4]))]
    _, grads, _, _ = ce_forward(tiny_arch, params, batch)
    for name in ("ce.w_out", "ce.b_out", "encoder.l0.w_ih", "encoder.l1.w_proj"):
        orig = params[name]

        def f(v, name=name):
            params[name] = v
            return ce_forward(tiny_arch, params, batch)[0]

        fd = finite_diff_grad(f, orig)
        params[name] = orig
        assert rel_error(grads[name], fd) <= 1e-5, name


def test_ce_trains_to_high_frame_accuracy(clean):
    _, labels, items = clean
    cfg = TrainConfig.from_dict({"epochs": 15, "batch_size": 4, "optimizer": {"lr": 3e-3}})
    ckpt, history = train_ce(items, labels, SMALL_ARCH, cfg, Rng(0))
    losses = [h["loss"] for h in history]
    assert losses[0] > losses[1] > losses[2]
    assert ce_accuracy(ckpt, items) >= 0.95
    assert ckpt.tag == "ce"


def test_ce_zero_epoch_continuation_is_identity(clean):
    _, labels, items = clean
    first, _ = train_ce(items[:4], labels, SMALL_ARCH, TrainConfig(epochs=1, batch_size=2), Rng(0),
                        language="source")
    again, history = train_ce(items[:4], labels, SMALL_ARCH, TrainConfig(epochs=0), Rng(9), init=first,
                              language="source")
    assert history == []
    assert again.meta == first.meta
    for name, arr in first.tensors.items():
        assert again.tensors[name].tobytes() == arr.tobytes()


def test_ce_errors(clean, tiny_arch):
    c, labels, items = clean
    with pytest.raises(DataError):
        train_ce([], labels, SMALL_ARCH, TrainConfig(), Rng(0))
    small, _ = train_ce([(np.zeros((3, 6)), np.zeros(3, dtype=np.int64))], labels, tiny_arch,
                        TrainConfig(epochs=0), Rng(0))
    with pytest.raises(TransplantError):
        train_ce(items, labels, SMALL_ARCH, TrainConfig(epochs=0), Rng(0), init=small)
    bare = Utterance("u", c.source[0].features, c.source[0].transcript)
    with pytest.raises(DataError):
        ce_items([bare], labels)
    with pytest.raises(DataError):
        ce_items([bare], labels, external=True)


# ---------------------------------------------------------------- dedup

def test_dedup_examples():
    assert dedup_sentences(["a b", "a b", "c"]) == ["a b", "c"]
    assert dedup_sentences([" x ", "x", "y"]) == ["x", "y"]
    assert dedup_sentences(["q", "r"]) == ["q", "r"]


@given(st.lists(st.sampled_from(["a", "b c", "d", "e f g", "h"]), max_size=30))
def test_dedup_cardinality_order_and_idempotence(corpus):
    out = dedup_sentences(corpus)
    assert len(out) == len(set(corpus))
    assert out == sorted(set(corpus), key=corpus.index)
    assert dedup_sentences(out) == out


# ---------------------------------------------------------------- LM

TEXT = ["ab ba", "ab", "ba ab ab"]
INV = build_grapheme_inventory(TEXT)


def test_lm_items_start_with_bos():
    (x, y), = lm_items(["ab"], INV)
    bos = len(INV)
    assert x.tolist() == [bos, *y[:-1].tolist()]
    with pytest.raises(VocabularyError):
        lm_items(["zz"], INV)


def test_lm_initial_loss_is_about_log_v():
    V = len(INV) + 1
    params = init_lm_params(SMALL_ARCH, V, Rng(0))
    loss, _, _ = lm_forward(SMALL_ARCH, params, lm_items(TEXT, INV))
    assert loss == pytest.approx(math.log(V), rel=0.1)


def test_uniform_lm_perplexity_is_v():
    V = len(INV) + 1
    params = init_lm_params(SMALL_ARCH, V, Rng(0))
    params["lm.w_out"][:] = 0.0
    assert perplexity(lm_checkpoint(SMALL_ARCH, INV, params), TEXT) == pytest.approx(V, rel=1e-12)


def test_perplexity_hand_computed():
    # a model whose output ignores context: log-probs are log_softmax(b_out)
    V = len(INV) + 1
    params = init_lm_params(SMALL_ARCH, V, Rng(0))
    params["lm.w_out"][:] = 0.0
    params["lm.b_out"] = np.log(np.arange(1, V + 1, dtype=float))
    probs = np.arange(1, V + 1) / np.arange(1, V + 1).sum()
    (_, y), = lm_items(["ab"], INV)
    expected = math.exp(-np.mean(np.log(probs[y])))
    # checkpoints hold float32 weights
    assert perplexity(lm_checkpoint(SMALL_ARCH, INV, params), ["ab"]) == pytest.approx(expected, rel=1e-7)


def test_peaked_model_on_deterministic_text_has_unit_perplexity():
    inv = build_grapheme_inventory(["a"])
    (_, y), = lm_items(["a"], inv)  # a single-token sentence
    params = init_lm_params(SMALL_ARCH, len(inv) + 1, Rng(0))
    params["lm.w_out"][:] = 0.0
    params["lm.b_out"][:] = -60.0
    params["lm.b_out"][y[0]] = 60.0
    assert perplexity(lm_checkpoint(SMALL_ARCH, inv, params), ["a"]) == pytest.approx(1.0, abs=1e-12)


def test_lm_gradient_matches_finite_differences(tiny_arch):
    V = len(INV) + 1
    params = init_lm_params(tiny_arch, V, Rng(2))
    batch = lm_items(TEXT, INV)
    _, grads, _ = lm_forward(tiny_arch, params, batch)
    for name in ("prediction.embedding", "prediction.l0.w_hh", "lm.w_out"):
        orig = params[name]

        def f(v, name=name):
            params[name] = v
            return lm_forward(tiny_arch, params, batch)[0]

        fd = finite_diff_grad(f, orig)
        params[name] = orig
        assert rel_error(grads[name], fd) <= 1e-5, name


def test_repeated_sentence_is_memorized():
    corpus = ["ab ba ab"] * 50
    cfg = TrainConfig.from_dict({"epochs": 40, "batch_size": 1, "epoch_utterances": 8, "optimizer": {"lr": 1e-2}})
    ckpt, history = train_lm(corpus, INV, SMALL_ARCH, cfg, Rng(0))
    assert ckpt.meta["sentences"] == 1
    assert all(a["perplexity"] > b["perplexity"] for a, b in zip(history[:3], history[1:3]))
    assert perplexity(ckpt, corpus[:1]) < 1.05


def test_lm_empty_corpus():
    with pytest.raises(DataError):
        train_lm(["", "  "], INV, SMALL_ARCH, TrainConfig(), Rng(0))
