import numpy as np
import pytest

from exfil_bert.model.tokenizer import (
    DEFAULT_VOCAB,
    IGNORE_INDEX,
    Vocab,
    apply_mlm_mask,
    decode,
    encode,
    encode_batch,
    mask_batch,
)


def test_vocab_layout():
    vocab = DEFAULT_VOCAB
    assert vocab.size == 44
    assert (vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id, vocab.mask_id) == (0, 1, 2, 3, 4)
    assert vocab.id_of("a") == 5
    assert vocab.id_of("!") == vocab.unk_id
    assert Vocab.from_json(vocab.to_json()) == vocab


def test_encode_pads_and_marks_attention():
    seq = encode("ab", max_len=8)
    assert seq.ids.tolist() == [2, 5, 6, 3, 0, 0, 0, 0]
    assert seq.attention_mask.tolist() == [True] * 4 + [False] * 4
    assert decode(seq) == "ab"


def test_encode_truncates_head_of_long_strings():
    seq = encode("abc" * 50, max_len=16)
    assert decode(seq) == ("abc" * 50)[:14]
    assert seq.ids[-1] == DEFAULT_VOCAB.sep_id
    with pytest.raises(ValueError):
        encode("a", max_len=2)


def test_decode_drops_unknown_characters():
    assert decode(encode("a!b", max_len=8)) == "ab"
    for text in ("www.example", "x-1_y.z9", ""):
        assert decode(encode(text, max_len=32)) == text


def test_decode_rejects_malformed_sequences():
    seq = encode("ab", max_len=8)
    broken = seq.ids.copy()
    broken[0] = DEFAULT_VOCAB.pad_id
    with pytest.raises(ValueError):
        decode(type(seq)(ids=broken, attention_mask=seq.attention_mask))


def test_encode_batch_requires_shared_length():
    batch = encode_batch(["a", "bcd"], max_len=6)
    assert batch.ids.shape == (2, 6)
    assert len(batch.take(np.array([1]))) == 1


def test_masking_never_touches_special_tokens():
    rng = np.random.default_rng(0)
    original = encode_batch(["abc", "de.f"], max_len=10)
    batch = mask_batch(original, rng, select_rate=1.0)
    specials = original.ids < DEFAULT_VOCAB.n_specials
    assert specials.sum() == 2 * 10 - 7
    assert (batch.ids[specials] == original.ids[specials]).all()
    assert (batch.mlm_labels[specials] == IGNORE_INDEX).all()
    assert (batch.mlm_labels[~specials] >= DEFAULT_VOCAB.n_specials).all()


def test_masking_rates_match_the_eighty_ten_ten_split():
    rng = np.random.default_rng(1234)
    original = encode_batch(["abcdefghij" * 6] * 2000, max_len=64)
    masked = mask_batch(original, rng)
    eligible = original.ids >= DEFAULT_VOCAB.n_specials
    assert eligible.sum() >= 100_000

    selected = masked.mlm_labels != IGNORE_INDEX
    assert selected.sum() / eligible.sum() == pytest.approx(0.15, abs=0.01)
    chosen_original = original.ids[selected]
    chosen_masked = masked.ids[selected]
    n = selected.sum()
    mask_share = np.count_nonzero(chosen_masked == DEFAULT_VOCAB.mask_id) / n
    changed_share = np.count_nonzero((chosen_masked != DEFAULT_VOCAB.mask_id) & (chosen_masked != chosen_original)) / n
    kept_share = np.count_nonzero(chosen_masked == chosen_original) / n
    assert mask_share == pytest.approx(0.8, abs=0.02)
    assert changed_share == pytest.approx(0.1, abs=0.02)
    assert kept_share == pytest.approx(0.1, abs=0.02)
    assert (masked.ids[~selected] == original.ids[~selected]).all()


def test_apply_mlm_mask_refuses_double_masking():
    rng = np.random.default_rng(0)
    seq = apply_mlm_mask(encode("abcdef", max_len=10), rng)
    assert seq.mlm_labels is not None
    with pytest.raises(ValueError):
        apply_mlm_mask(seq, rng)
    with pytest.raises(ValueError):
        apply_mlm_mask(encode("ab", max_len=6), rng, mask_frac=0.95, random_frac=0.1)
