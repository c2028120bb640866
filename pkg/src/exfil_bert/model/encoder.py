"""Pre-norm transformer encoder with MLM and classification heads.

Everything is plain numpy: :func:`forward` runs the network and
:func:`backward` returns exact analytic gradients of the head loss for
every named tensor. Parameters live in float32 for training; casting the
whole model to float64 gives the precision used by gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf, expit
from scipy.stats import truncnorm

from ..schemas import ModelConfig
from .losses import cls_loss, mlm_loss
from .tokenizer import TokenBatch, TokenSequence


Head = Literal["mlm", "cls"]
BatchLike = Union[TokenBatch, Sequence[TokenSequence]]

INIT_STD = 0.02
_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class ModelParams:
    """Named learnable tensors of the encoder and both heads."""

    config: ModelConfig
    tensors: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["embeddings.token"].dtype

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def astype(self, dtype: np.dtype | type) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype, copy=True) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    h, f, v = config.hidden, config.ff, config.vocab_size
    shapes: Dict[str, Tuple[int, ...]] = {
        "embeddings.token": (v, h),
        "embeddings.position": (config.max_len, h),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}"
        shapes[f"{p}.attn_norm.scale"] = (h,)
        shapes[f"{p}.attn_norm.shift"] = (h,)
        for proj in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.{proj}.weight"] = (h, h)
            shapes[f"{p}.attn.{proj}.bias"] = (h,)
        shapes[f"{p}.ffn_norm.scale"] = (h,)
        shapes[f"{p}.ffn_norm.shift"] = (h,)
        shapes[f"{p}.ffn.in.weight"] = (h, f)
        shapes[f"{p}.ffn.in.bias"] = (f,)
        shapes[f"{p}.ffn.out.weight"] = (f, h)
        shapes[f"{p}.ffn.out.bias"] = (h,)
    shapes["final_norm.scale"] = (h,)
    shapes["final_norm.shift"] = (h,)
    shapes["mlm_head.weight"] = (h, v)
    shapes["mlm_head.bias"] = (v,)
    shapes["cls_head.weight"] = (h, 1)
    shapes["cls_head.bias"] = (1,)
    return shapes


def count_params(config: ModelConfig) -> int:
    h, f, v, n = config.hidden, config.ff, config.vocab_size, config.n_layers
    per_layer = 4 * h + 4 * (h * h + h) + (h * f + f) + (f * h + h)
    return v * h + config.max_len * h + n * per_layer + 2 * h + (h * v + v) + (h + 1)


def init_params(config: ModelConfig, seed: int, dtype: np.dtype | type = np.float32) -> ModelParams:
    """Truncated-normal weights (std 0.02), zero biases and shifts, unit scales."""

    config = ModelConfig.model_validate(config.model_dump())
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".scale"):
            value = np.ones(shape)
        elif name.endswith((".bias", ".shift")):
            value = np.zeros(shape)
        else:
            value = truncnorm.rvs(-2.0, 2.0, scale=INIT_STD, size=shape, random_state=rng)
        tensors[name] = np.asarray(value, dtype=dtype)
    return ModelParams(config, tensors)


def as_batch(batch: BatchLike) -> TokenBatch:
    return batch if isinstance(batch, TokenBatch) else TokenBatch.from_sequences(list(batch))


def _check_batch(params: ModelParams, batch: TokenBatch) -> None:
    config = params.config
    if batch.ids.ndim != 2 or batch.ids.shape != batch.attention_mask.shape:
        raise ValueError(f"ids {batch.ids.shape} and attention mask {batch.attention_mask.shape} mismatch")
    if batch.ids.shape[1] > config.max_len:
        raise ValueError(f"sequence length {batch.ids.shape[1]} exceeds model max_len {config.max_len}")
    if batch.ids.size and (batch.ids.min() < 0 or batch.ids.max() >= config.vocab_size):
        raise ValueError("token id outside the model vocabulary")
    if not batch.attention_mask[:, 0].all():
        raise ValueError("the [CLS] position must be attended")


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float):
    centered = x - x.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    return xhat * scale + shift, (xhat, rstd)


def _layer_norm_backward(dy: np.ndarray, cache, scale: np.ndarray):
    xhat, rstd = cache
    width = dy.shape[-1]
    dscale = (dy * xhat).reshape(-1, width).sum(axis=0)
    dshift = dy.reshape(-1, width).sum(axis=0)
    dxhat = dy * scale
    dx = rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dscale, dshift


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u / _SQRT_2))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u / _SQRT_2)) + u * np.exp(-0.5 * u * u) * _INV_SQRT_2PI


def _dropout_mask(rng: Optional[np.random.Generator], rate: float, shape, dtype) -> Optional[np.ndarray]:
    if rng is None or rate <= 0.0:
        return None
    return ((rng.random(shape) >= rate) / (1.0 - rate)).astype(dtype)


def _linear_grads(x: np.ndarray, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1]), dy.reshape(-1, dy.shape[-1]).sum(axis=0)


@dataclass
class _LayerCache:
    x_in: np.ndarray
    norm1: tuple
    h1: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    context: np.ndarray
    attn_drop: Optional[np.ndarray]
    norm2: tuple
    h2: np.ndarray
    u: np.ndarray
    g: np.ndarray
    ffn_drop: Optional[np.ndarray]


@dataclass
class _Cache:
    ids: np.ndarray
    emb_drop: Optional[np.ndarray]
    layers: List[_LayerCache] = field(default_factory=list)
    final_norm: tuple = ()
    hidden: Optional[np.ndarray] = None


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, h = x.shape
    return x.reshape(b, t, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, n, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, n * d)


def _encode(
    params: ModelParams,
    batch: TokenBatch,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, _Cache]:
    config = params.config
    w = params.tensors
    dtype = params.dtype
    eps = config.layer_norm_eps
    _, t = batch.ids.shape
    scale = 1.0 / math.sqrt(config.head_dim)
    key_mask = batch.attention_mask[:, None, None, :]

    x = w["embeddings.token"][batch.ids] + w["embeddings.position"][:t]
    emb_drop = _dropout_mask(rng, config.dropout, x.shape, dtype)
    if emb_drop is not None:
        x = x * emb_drop
    cache = _Cache(ids=batch.ids, emb_drop=emb_drop)

    for i in range(config.n_layers):
        p = f"layers.{i}"
        x_in = x
        h1, norm1 = _layer_norm(x_in, w[f"{p}.attn_norm.scale"], w[f"{p}.attn_norm.shift"], eps)
        q = _split_heads(h1 @ w[f"{p}.attn.q.weight"] + w[f"{p}.attn.q.bias"], config.n_heads)
        k = _split_heads(h1 @ w[f"{p}.attn.k.weight"] + w[f"{p}.attn.k.bias"], config.n_heads)
        v = _split_heads(h1 @ w[f"{p}.attn.v.weight"] + w[f"{p}.attn.v.bias"], config.n_heads)
        scores = np.where(key_mask, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
        scores = scores - scores.max(axis=-1, keepdims=True)
        weights = np.exp(scores)
        attn = (weights / weights.sum(axis=-1, keepdims=True)).astype(dtype)
        context = _merge_heads(attn @ v)
        attn_out = context @ w[f"{p}.attn.o.weight"] + w[f"{p}.attn.o.bias"]
        attn_drop = _dropout_mask(rng, config.dropout, attn_out.shape, dtype)
        if attn_drop is not None:
            attn_out = attn_out * attn_drop
        x_mid = x_in + attn_out

        h2, norm2 = _layer_norm(x_mid, w[f"{p}.ffn_norm.scale"], w[f"{p}.ffn_norm.shift"], eps)
        u = h2 @ w[f"{p}.ffn.in.weight"] + w[f"{p}.ffn.in.bias"]
        g = _gelu(u)
        ffn_out = g @ w[f"{p}.ffn.out.weight"] + w[f"{p}.ffn.out.bias"]
        ffn_drop = _dropout_mask(rng, config.dropout, ffn_out.shape, dtype)
        if ffn_drop is not None:
            ffn_out = ffn_out * ffn_drop
        x = x_mid + ffn_out
        cache.layers.append(
            _LayerCache(x_in, norm1, h1, q, k, v, attn, context, attn_drop, norm2, h2, u, g, ffn_drop)
        )

    hidden, final_norm = _layer_norm(x, w["final_norm.scale"], w["final_norm.shift"], eps)
    cache.final_norm = final_norm
    cache.hidden = hidden
    return hidden, cache


def _head_logits(params: ModelParams, hidden: np.ndarray, head: Head) -> np.ndarray:
    w = params.tensors
    if head == "mlm":
        return hidden @ w["mlm_head.weight"] + w["mlm_head.bias"]
    if head == "cls":
        return (hidden[:, 0] @ w["cls_head.weight"] + w["cls_head.bias"])[:, 0]
    raise ValueError(f"unknown head {head!r}")


def forward_logits(
    params: ModelParams,
    batch: BatchLike,
    head: Head,
    *,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    tokens = as_batch(batch)
    _check_batch(params, tokens)
    hidden, _ = _encode(params, tokens, rng)
    return _head_logits(params, hidden, head)


def forward(params: ModelParams, batch: BatchLike, head: Head) -> np.ndarray:
    """MLM head: logits (B, T, V). Classification head: Pr(y=1|x) per sequence."""

    logits = forward_logits(params, batch, head)
    if head == "cls":
        return expit(logits)
    return logits


def backward(
    params: ModelParams,
    batch: BatchLike,
    targets: Optional[np.ndarray],
    head: Head,
    *,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss of ``head`` on ``batch`` and its gradient for every parameter.

    ``targets`` are 0/1 labels for the classification head; for the MLM head
    they default to the batch's ``mlm_labels``. Passing ``rng`` enables
    dropout with the configured rate.
    """

    tokens = as_batch(batch)
    _check_batch(params, tokens)
    config = params.config
    w = params.tensors
    hidden, cache = _encode(params, tokens, rng)
    logits = _head_logits(params, hidden, head)
    grads = {name: np.zeros_like(value) for name, value in w.items()}

    if head == "mlm":
        labels = tokens.mlm_labels if targets is None else targets
        if labels is None:
            raise ValueError("MLM loss needs mlm_labels")
        loss, dlogits = mlm_loss(logits, np.asarray(labels))
        grads["mlm_head.weight"], grads["mlm_head.bias"] = _linear_grads(hidden, dlogits)
        dhidden = dlogits @ w["mlm_head.weight"].T
    else:
        if targets is None:
            raise ValueError("classification loss needs labels")
        loss, dlogits = cls_loss(logits, np.asarray(targets))
        pooled = hidden[:, 0]
        grads["cls_head.weight"] = pooled.T @ dlogits[:, None]
        grads["cls_head.bias"] = dlogits.sum(keepdims=True)
        dhidden = np.zeros_like(hidden)
        dhidden[:, 0] = dlogits[:, None] @ w["cls_head.weight"].T

    dx, grads["final_norm.scale"], grads["final_norm.shift"] = _layer_norm_backward(
        dhidden, cache.final_norm, w["final_norm.scale"]
    )
    scale = 1.0 / math.sqrt(config.head_dim)

    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}"
        c = cache.layers[i]

        dffn = dx if c.ffn_drop is None else dx * c.ffn_drop
        grads[f"{p}.ffn.out.weight"], grads[f"{p}.ffn.out.bias"] = _linear_grads(c.g, dffn)
        du = (dffn @ w[f"{p}.ffn.out.weight"].T) * _gelu_grad(c.u)
        grads[f"{p}.ffn.in.weight"], grads[f"{p}.ffn.in.bias"] = _linear_grads(c.h2, du)
        dh2 = du @ w[f"{p}.ffn.in.weight"].T
        dnorm2, grads[f"{p}.ffn_norm.scale"], grads[f"{p}.ffn_norm.shift"] = _layer_norm_backward(
            dh2, c.norm2, w[f"{p}.ffn_norm.scale"]
        )
        dx_mid = dx + dnorm2

        dattn_out = dx_mid if c.attn_drop is None else dx_mid * c.attn_drop
        grads[f"{p}.attn.o.weight"], grads[f"{p}.attn.o.bias"] = _linear_grads(c.context, dattn_out)
        dcontext = _split_heads(dattn_out @ w[f"{p}.attn.o.weight"].T, config.n_heads)
        dweights = dcontext @ c.v.transpose(0, 1, 3, 2)
        dv = c.attn.transpose(0, 1, 3, 2) @ dcontext
        dscores = c.attn * (dweights - (dweights * c.attn).sum(axis=-1, keepdims=True))
        dq = (dscores @ c.k) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ c.q) * scale

        dh1 = np.zeros_like(c.h1)
        for proj, dproj in (("q", dq), ("k", dk), ("v", dv)):
            merged = _merge_heads(dproj)
            grads[f"{p}.attn.{proj}.weight"], grads[f"{p}.attn.{proj}.bias"] = _linear_grads(c.h1, merged)
            dh1 += merged @ w[f"{p}.attn.{proj}.weight"].T
        dnorm1, grads[f"{p}.attn_norm.scale"], grads[f"{p}.attn_norm.shift"] = _layer_norm_backward(
            dh1, c.norm1, w[f"{p}.attn_norm.scale"]
        )
        dx = dx_mid + dnorm1

    if cache.emb_drop is not None:
        dx = dx * cache.emb_drop
    np.add.at(grads["embeddings.token"], cache.ids, dx)
    grads["embeddings.position"][: dx.shape[1]] = dx.sum(axis=0)
    return loss, grads


def cast_params(params: ModelParams, dtype: np.dtype | type) -> ModelParams:
    return params.astype(dtype)
