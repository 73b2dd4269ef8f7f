import pytest
from hypothesis import given, strategies as st

from oracles import naive_bpe_replay
from rntforge.errors import DecodeError, DomainError, VocabularyError
from rntforge.numerics import Rng
from rntforge.tokenize import (BLANK, LabelInventory, bpe_encode, bpe_train, build_grapheme_inventory,
                               build_wordpiece_inventory, ce_inventory, decode_ids, encode_transcript,
                               grapheme_decode, grapheme_encode, load_merges, save_merges, wordpiece_encode)

ALPHA = "abcdefghij"
words = st.text(alphabet=ALPHA, min_size=1, max_size=8)
sentences = st.lists(words, min_size=1, max_size=6).map(" ".join)


def test_grapheme_encode_examples():
    assert grapheme_encode("ab cd") == ["B_a", "b", "B_c", "d"]
    assert grapheme_encode("a") == ["B_a"]
    assert grapheme_encode("abc") == ["B_a", "b", "c"]


def test_grapheme_encode_unknown_grapheme_is_named():
    inv = build_grapheme_inventory(["ab"])
    with pytest.raises(VocabularyError, match="'z'"):
        grapheme_encode("az", inv)


def test_grapheme_decode_examples_and_policy():
    assert grapheme_decode(["B_a", "b", "B_c", "d"]) == "ab cd"
    assert grapheme_decode(["B_a"]) == "a"
    assert grapheme_decode(["b", "B_c"]) == "b c"
    with pytest.raises(DecodeError):
        grapheme_decode(["b", "B_c"], strict=True)


def test_grapheme_round_trip_on_random_sentences():
    rng = Rng(11)
    for _ in range(1000):
        n = 1 + rng.integers(5)
        s = " ".join("".join(ALPHA[rng.integers(10)] for _ in range(1 + rng.integers(6))) for _ in range(n))
        assert grapheme_decode(grapheme_encode(s), strict=True) == s


@given(sentences)
def test_grapheme_round_trip_property(s):
    assert grapheme_decode(grapheme_encode(s)) == s


def test_grapheme_inventory():
    inv = build_grapheme_inventory(["ab", "ba"])
    assert inv.labels == (BLANK, "B_a", "B_b", "a", "b")
    assert len(build_grapheme_inventory(["aa"])) == 3
    with pytest.raises(DomainError):
        build_grapheme_inventory([])


@given(st.lists(sentences, min_size=1, max_size=5))
def test_grapheme_inventory_size_is_two_g_plus_one(corpus):
    g = len({ch for line in corpus for ch in line if ch != " "})
    inv = build_grapheme_inventory(corpus)
    assert len(inv) == 2 * g + 1 and inv.labels[inv.blank_index] == BLANK


def test_sixty_five_graphemes_give_131_labels():
    corpus = [chr(0x0900 + k) for k in range(65)]
    assert len(build_grapheme_inventory(corpus)) == 131


def test_bpe_train_examples():
    assert bpe_train({"low": 5, "lower": 2}, 1) == [("l", "o")]
    assert bpe_train({"low": 5}, 0) == []
    merges = bpe_train({"aaaa": 1}, 1)
    assert merges == [("a", "a")]
    assert bpe_encode("aaaa", merges) == ["B_aa", "aa"]
    assert bpe_encode("abc", []) == ["B_a", "b", "c"]
    assert len(bpe_train({"ab": 1}, 10)) == 1


def test_bpe_is_deterministic():
    freqs = {"hello": 3, "yellow": 2, "mellow": 4, "low": 9}
    assert bpe_train(freqs, 8) == bpe_train(dict(reversed(list(freqs.items()))), 8)


def test_bpe_matches_naive_replay():
    rng = Rng(21)
    corpus = {"".join(ALPHA[rng.integers(6)] for _ in range(2 + rng.integers(7))): 1 + rng.integers(5)
              for _ in range(200)}
    merges = bpe_train(corpus, 40)
    for _ in range(500):
        word = "".join(ALPHA[rng.integers(6)] for _ in range(1 + rng.integers(9)))
        pieces = bpe_encode(word, merges)
        ref = naive_bpe_replay(word, merges)
        assert [pieces[0].removeprefix("B_"), *pieces[1:]] == ref


@given(words, st.integers(0, 15))
def test_bpe_pieces_reconstruct_the_word(word, n):
    merges = bpe_train({word: 2, word[::-1]: 1}, n)
    pieces = bpe_encode(word, merges)
    assert pieces[0].startswith("B_")
    assert pieces[0][2:] + "".join(pieces[1:]) == word


def test_merge_file_round_trip(tmp_path):
    merges = bpe_train({"banana": 3, "bandana": 2}, 5)
    save_merges(merges, tmp_path / "m.tsv")
    assert load_merges(tmp_path / "m.tsv") == merges
    assert (tmp_path / "m.tsv").read_text().splitlines()[0].split("\t")[0] == "0"


def test_inventory_file_and_invariants(tmp_path):
    inv = build_grapheme_inventory(["ab"])
    inv.save(tmp_path / "inv.txt")
    assert LabelInventory.load(tmp_path / "inv.txt") == inv
    assert (tmp_path / "inv.txt").read_text().splitlines()[0] == "<blank>"
    with pytest.raises(DomainError):
        LabelInventory(("<blank>", "a", "a"))
    with pytest.raises(DomainError):
        LabelInventory(("a", "<blank>"))


def test_wordpiece_inventory_and_transcripts():
    corpus = ["lower low", "lowest low"]
    merges = bpe_train({"lower": 1, "low": 2, "lowest": 1}, 3)
    inv = build_wordpiece_inventory(corpus, merges)
    ids = encode_transcript("low lower", inv, merges)
    assert inv.lookup(ids) == wordpiece_encode("low lower", merges)
    assert decode_ids(ids, inv) == "low lower"


def test_ce_inventory_drops_blank_and_adds_silence():
    ce = ce_inventory(build_grapheme_inventory(["ab"]))
    assert ce.labels == ("B_a", "B_b", "a", "b", "<sil>") and ce.blank_index is None
