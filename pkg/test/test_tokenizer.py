"""A module for testing the tokenizer.py module."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tokenizer
from tensor import ContractError
from utils import Configuration


@pytest.fixture
def vocab():
    corpus = [
        "there is a mild opacity in the left lung.",
        "the lungs are clear.",
        "worsening opacity",
        "abcde edcba",
    ] * 3
    return tokenizer.train_bpe(corpus, vocab_size=80, max_len=20)


################################################
# train_bpe
################################################


def test_specials_come_first(vocab):
    assert vocab.tokens[:4] == list(tokenizer.SPECIAL_TOKENS)
    assert (vocab.pad_id, vocab.bos_id, vocab.eos_id, vocab.unk_id) == (0, 1, 2, 3)


def test_vocab_size_is_respected(vocab):
    assert vocab.size <= 80


def test_merge_tie_breaks_lexicographically():
    trained = tokenizer.train_bpe(["ab ab", "cd cd"], vocab_size=10)
    assert trained.merges == [("a", "b")]
    assert "ab" in trained.tokens


def test_merges_never_cross_whitespace(vocab):
    assert all(not any(c.isspace() for c in tok) for tok in vocab.tokens if tok != " ")


def test_empty_corpus():
    with pytest.raises(ContractError):
        tokenizer.train_bpe([], vocab_size=100)


def test_vocab_size_below_charset():
    with pytest.raises(ContractError):
        tokenizer.train_bpe(["abcdefgh"], vocab_size=6)


################################################
# encode / decode
################################################


def test_encode_wraps_in_bos_eos(vocab):
    ids = vocab.encode("The lungs are clear.")
    assert ids[0] == tokenizer.BOS_ID and ids[-1] == tokenizer.EOS_ID
    assert vocab.decode(ids) == "the lungs are clear."


def test_encode_truncates_to_max_len(vocab):
    ids = vocab.encode("the lungs are clear. " * 10)
    assert len(ids) == vocab.max_len
    assert ids[-1] == tokenizer.EOS_ID


def test_unknown_characters(vocab):
    ids = vocab.encode("lung #")
    assert tokenizer.UNK_ID in ids
    assert vocab.decode(ids) == "lung " + Configuration.UNK_GLYPH


def test_decode_out_of_range(vocab):
    with pytest.raises(IndexError):
        vocab.decode([1, vocab.size])


def test_decode_drops_padding(vocab):
    ids = vocab.encode("clear") + [tokenizer.PAD_ID] * 3
    assert vocab.decode(ids) == "clear"


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet="abcde ", max_size=16))
def test_decode_inverts_encode(text):
    trained = tokenizer.train_bpe(["abcde edcba aa bb"], vocab_size=20)
    assert trained.decode(trained.encode(text)) == text


################################################
# save_vocab / load_vocab
################################################


def test_saved_vocab_encodes_identically(vocab, tmp_path):
    path = tmp_path / "vocab.txt"
    tokenizer.save_vocab(vocab, path)
    loaded = tokenizer.load_vocab(path)
    assert loaded.tokens == vocab.tokens
    assert loaded.merges == vocab.merges
    assert loaded.max_len == vocab.max_len
    text = "there is a worsening opacity"
    assert loaded.encode(text) == vocab.encode(text)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("not a vocabulary\n", encoding="ascii")
    with pytest.raises(ContractError):
        tokenizer.load_vocab(path)
