import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslst.textproc import (
    EOS_ID,
    RESERVED,
    UNK_ID,
    TextError,
    Vocabulary,
    build_char_vocab,
    build_subword_vocab,
    filter_samples,
    keep_sample,
    normalize,
    tokenize,
)


def test_normalize_translation_keeps_punctuation():
    assert normalize("Hello,  WORLD!", is_transcript=False) == "hello, world!"


def test_normalize_transcript_drops_punctuation():
    assert normalize("Hello, world!", is_transcript=True) == "hello world"


def test_normalize_empty():
    assert normalize("") == ""


def test_normalize_folds_unicode_punctuation():
    assert normalize("It’s “fine” — really…") == "it's \"fine\" - really..."


def test_normalize_rejects_invalid_utf8():
    with pytest.raises(TextError):
        normalize(b"\xff\xfe abc")


@settings(max_examples=300, deadline=None)
@given(st.text(), st.booleans())
def test_normalize_idempotent(text, flag):
    once = normalize(text, flag)
    assert normalize(once, flag) == once


def test_tokenize_rules():
    assert tokenize("hello, world!") == ["hello", ",", "world", "!"]
    assert tokenize("abc") == ["abc"]
    assert tokenize("a-b") == ["a", "-", "b"]


def test_char_vocab_small_corpus():
    v = build_char_vocab(["ab", "ba"])
    assert v.symbols == list(RESERVED) + ["a", "b"]
    assert len(v) == 7


def test_char_vocab_orders_by_frequency_then_codepoint():
    v = build_char_vocab(["b c c", "a"])
    assert v.symbols[5:] == [" ", "c", "a", "b"]


def test_char_vocab_deterministic_and_rejects_empty():
    corpus = ["the cat", "sat on the mat"]
    assert build_char_vocab(corpus).symbols == build_char_vocab(corpus).symbols
    with pytest.raises(ValueError):
        build_char_vocab([])


def test_char_round_trip_and_unknowns():
    v = build_char_vocab(["hello world"])
    ids = v.encode("hello world", add_eos=True)
    assert ids[-1] == EOS_ID
    assert v.decode(ids) == "hello world"
    assert v.encode("z") == [UNK_ID]


def test_vocab_file_round_trip(tmp_path):
    v = build_char_vocab(["a b", "c"])
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").split("\n")
    assert lines[:5] == list(RESERVED)
    assert Vocabulary.load(tmp_path / "vocab.txt").symbols == v.symbols
    s = build_subword_vocab(["low lower lowest"] * 3, size=16)
    s.save(tmp_path / "bpe.txt")
    loaded = Vocabulary.load(tmp_path / "bpe.txt")
    assert loaded.symbols == s.symbols and loaded.merges == s.merges
    assert loaded.encode("lowest") == s.encode("lowest")


def test_bpe_without_merges_equals_marked_char_vocab():
    corpus = ["ab ba", "abc"]
    chars = build_char_vocab([" ".join("▁" + w for w in line.split()).replace(" ", "") for line in corpus])
    v = build_subword_vocab(corpus, size=len(chars))
    assert v.merges == []
    assert v.symbols == chars.symbols


def test_bpe_first_merge_counts_overlaps():
    v = build_subword_vocab(["aaab"] * 100, size=5 + 3 + 1)
    assert v.merges[0] == ("a", "a")
    assert "aa" in v.symbols


def test_bpe_round_trip_training_sentences():
    corpus = ["the cat sat on the mat", "the dog ate the cat", "a mat for a cat"]
    v = build_subword_vocab(corpus, size=40)
    for line in corpus:
        assert v.decode(v.encode(line)) == line


def test_bpe_insufficient_corpus_reports_achievable_size():
    with pytest.raises(ValueError, match="only supports a vocabulary of size"):
        build_subword_vocab(["ab"], size=100)


@pytest.mark.parametrize("frames,chars,kept", [
    (3001, 10, False),
    (5, 1, True),
    (4, 10, False),
    (100, 0, False),
    (3000, 400, True),
    (100, 401, False),
])
def test_filter_boundaries(frames, chars, kept):
    assert keep_sample(frames, chars) is kept
    assert filter_samples([(frames, chars)]) == ([(frames, chars)] if kept else [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4000), st.integers(0, 500))))
def test_filter_subset_and_fixed_point(samples):
    once = filter_samples(samples)
    assert all(s in samples for s in once)
    assert filter_samples(once) == once


def test_transcript_normalization_recomposes_after_dropping_punctuation():
    once = normalize("c“»́", is_transcript=True)
    assert once == "ć" and normalize(once, is_transcript=True) == once
