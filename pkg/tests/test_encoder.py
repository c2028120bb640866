import math

import numpy as np
import pytest

from exfil_bert.model.encoder import (
    _encode,
    backward,
    cast_params,
    count_params,
    forward,
    forward_logits,
    init_params,
    param_shapes,
)
from exfil_bert.model.losses import cls_loss, mlm_loss
from exfil_bert.model.tokenizer import IGNORE_INDEX, TokenBatch, encode_batch, mask_batch
from exfil_bert.schemas import ModelConfig


CONFIG = ModelConfig(n_layers=2, hidden=16, n_heads=2, ff=32, max_len=16)
TEXTS = ["abc.def", "x9-q", "longername01", "zz"]
LABELS = np.array([0.0, 1.0, 1.0, 0.0])


def _loss(params, batch, targets, head, seed=None):
    rng = None if seed is None else np.random.default_rng(seed)
    logits = forward_logits(params, batch, head, rng=rng)
    if head == "cls":
        return cls_loss(logits, targets)[0]
    return mlm_loss(logits, targets)[0]


def _max_relative_error(params, batch, targets, head, n_checks=200, seed=None, h=1e-5):
    rng = None if seed is None else np.random.default_rng(seed)
    _, grads = backward(params, batch, targets, head, rng=rng)
    candidates = [
        (name, index)
        for name, grad in grads.items()
        for index in zip(*np.nonzero(np.abs(grad) > 1e-5))
    ]
    assert len(candidates) >= n_checks
    picks = np.random.default_rng(0).choice(len(candidates), size=n_checks, replace=False)
    worst = 0.0
    for pick in picks:
        name, index = candidates[pick]
        value = params.tensors[name]
        original = value[index]
        value[index] = original + h
        plus = _loss(params, batch, targets, head, seed)
        value[index] = original - h
        minus = _loss(params, batch, targets, head, seed)
        value[index] = original
        numeric = (plus - minus) / (2 * h)
        analytic = grads[name][index]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric)))
    return worst


def test_count_params_matches_initialized_tensors():
    params = init_params(CONFIG, seed=0)
    assert params.num_parameters() == count_params(CONFIG)
    base = ModelConfig.preset("base")
    assert count_params(base) == sum(math.prod(shape) for shape in param_shapes(base).values())


def test_init_params_is_deterministic_and_structured():
    first = init_params(CONFIG, seed=3)
    second = init_params(CONFIG, seed=3)
    other = init_params(CONFIG, seed=4)
    for name in first:
        assert np.array_equal(first[name], second[name])
    assert not np.array_equal(first["embeddings.token"], other["embeddings.token"])
    assert (first["layers.0.attn_norm.scale"] == 1.0).all()
    assert (first["layers.1.ffn.in.bias"] == 0.0).all()
    assert np.abs(first["layers.0.ffn.in.weight"]).max() <= 0.04 + 1e-7
    assert first.dtype == np.float32


def test_forward_shapes_and_probability_range():
    params = init_params(CONFIG, seed=0)
    batch = encode_batch(TEXTS, max_len=16)
    scores = forward(params, batch, "cls")
    assert scores.shape == (4,)
    assert ((scores > 0) & (scores < 1)).all()
    assert forward(params, batch, "mlm").shape == (4, 16, CONFIG.vocab_size)


def test_forward_rejects_bad_batches():
    params = init_params(CONFIG, seed=0)
    with pytest.raises(ValueError):
        forward(params, encode_batch(TEXTS, max_len=20), "cls")
    batch = encode_batch(TEXTS, max_len=16)
    unattended = TokenBatch(ids=batch.ids, attention_mask=np.zeros_like(batch.attention_mask))
    with pytest.raises(ValueError):
        forward(params, unattended, "cls")


def test_padding_keys_get_zero_attention_and_do_not_change_scores():
    config = ModelConfig(n_layers=2, hidden=16, n_heads=2, ff=32, max_len=32)
    params = init_params(config, seed=1, dtype=np.float64)
    short = encode_batch(TEXTS, max_len=16)
    long = encode_batch(TEXTS, max_len=32)
    _, cache = _encode(params, long)
    for layer in cache.layers:
        assert (layer.attn[..., ~long.attention_mask[0]][0] == 0.0).all()
    assert np.abs(forward(params, short, "cls") - forward(params, long, "cls")).max() < 1e-6


def test_batch_order_equivariance():
    params = init_params(CONFIG, seed=2)
    batch = encode_batch(TEXTS, max_len=16)
    order = np.array([3, 1, 0, 2])
    np.testing.assert_allclose(forward(params, batch.take(order), "cls"), forward(params, batch, "cls")[order], atol=1e-6)


def test_zeroed_sublayers_leave_normalized_embeddings():
    params = init_params(CONFIG, seed=5, dtype=np.float64)
    for i in range(CONFIG.n_layers):
        for name in ("attn.o.weight", "attn.o.bias", "ffn.out.weight", "ffn.out.bias"):
            params.tensors[f"layers.{i}.{name}"][...] = 0.0
    batch = encode_batch(TEXTS, max_len=16)
    hidden, _ = _encode(params, batch)
    x = params["embeddings.token"][batch.ids] + params["embeddings.position"][:16]
    centered = x - x.mean(axis=-1, keepdims=True)
    expected = centered / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + CONFIG.layer_norm_eps)
    np.testing.assert_allclose(hidden, expected, atol=1e-10)


def test_float32_and_float64_agree():
    params = init_params(CONFIG, seed=0)
    batch = encode_batch(TEXTS, max_len=16)
    wide = cast_params(params, np.float64)
    assert np.abs(forward(params, batch, "cls") - forward(wide, batch, "cls")).max() < 1e-3
    assert np.abs(forward(params, batch, "mlm") - forward(wide, batch, "mlm")).max() < 1e-3


def test_classification_gradients_match_finite_differences():
    params = init_params(CONFIG, seed=0, dtype=np.float64)
    batch = encode_batch(TEXTS, max_len=12)
    assert _max_relative_error(params, batch, LABELS, "cls") < 1e-4


def test_mlm_gradients_match_finite_differences():
    params = init_params(CONFIG, seed=1, dtype=np.float64)
    batch = mask_batch(encode_batch(TEXTS, max_len=12), np.random.default_rng(0), select_rate=0.5)
    assert (batch.mlm_labels != IGNORE_INDEX).any()
    assert _max_relative_error(params, batch, batch.mlm_labels, "mlm") < 1e-4


def test_gradients_with_dropout_match_for_a_fixed_mask():
    config = CONFIG.model_copy(update={"dropout": 0.1})
    params = init_params(config, seed=2, dtype=np.float64)
    batch = encode_batch(TEXTS, max_len=12)
    assert _max_relative_error(params, batch, LABELS, "cls", n_checks=50, seed=7) < 1e-4


def test_unused_head_and_empty_mlm_selection_get_zero_gradients():
    params = init_params(CONFIG, seed=0)
    batch = encode_batch(TEXTS, max_len=16)
    _, grads = backward(params, batch, LABELS, "cls")
    assert not grads["mlm_head.weight"].any()
    assert not grads["mlm_head.bias"].any()
    assert grads["cls_head.weight"].any()

    masked = mask_batch(batch, np.random.default_rng(0))
    _, grads = backward(params, masked, None, "mlm")
    assert not grads["cls_head.weight"].any()

    empty = np.full_like(batch.ids, IGNORE_INDEX)
    loss, grads = backward(params, batch, empty, "mlm")
    assert loss == 0.0
    assert all(not grad.any() for grad in grads.values())
    assert set(grads) == set(params.tensors)
