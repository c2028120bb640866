"""Character-level vocabulary, encoding and BERT-style MLM masking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..schemas import ALPHABET


PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS: Tuple[str, ...] = (PAD, UNK, CLS, SEP, MASK)
IGNORE_INDEX = -100


@dataclass(frozen=True)
class Vocab:
    specials: Tuple[str, ...] = SPECIALS
    alphabet: Tuple[str, ...] = tuple(ALPHABET)
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        tokens = self.tokens
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", {token: i for i, token in enumerate(tokens)})

    @property
    def tokens(self) -> List[str]:
        return [*self.specials, *self.alphabet]

    @property
    def size(self) -> int:
        return len(self.specials) + len(self.alphabet)

    @property
    def n_specials(self) -> int:
        return len(self.specials)

    def id_of(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def cls_id(self) -> int:
        return self._index[CLS]

    @property
    def sep_id(self) -> int:
        return self._index[SEP]

    @property
    def mask_id(self) -> int:
        return self._index[MASK]

    def to_json(self) -> List[str]:
        return self.tokens

    @classmethod
    def from_json(cls, tokens: Sequence[str]) -> "Vocab":
        n_specials = len(SPECIALS)
        if tuple(tokens[:n_specials]) != SPECIALS:
            raise ValueError("serialized vocabulary does not start with the special tokens")
        return cls(specials=SPECIALS, alphabet=tuple(tokens[n_specials:]))


DEFAULT_VOCAB = Vocab()


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    attention_mask: np.ndarray
    mlm_labels: Optional[np.ndarray] = None

    @property
    def max_len(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class TokenBatch:
    """Stacked sequences of one common length."""

    ids: np.ndarray
    attention_mask: np.ndarray
    mlm_labels: Optional[np.ndarray] = None

    @classmethod
    def from_sequences(cls, sequences: Sequence[TokenSequence]) -> "TokenBatch":
        if not sequences:
            raise ValueError("a batch needs at least one sequence")
        lengths = {seq.max_len for seq in sequences}
        if len(lengths) != 1:
            raise ValueError(f"sequences in a batch must share max_len, got {sorted(lengths)}")
        labels = None
        if all(seq.mlm_labels is not None for seq in sequences):
            labels = np.stack([seq.mlm_labels for seq in sequences])
        return cls(
            ids=np.stack([seq.ids for seq in sequences]),
            attention_mask=np.stack([seq.attention_mask for seq in sequences]),
            mlm_labels=labels,
        )

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def take(self, index: np.ndarray) -> "TokenBatch":
        return TokenBatch(
            ids=self.ids[index],
            attention_mask=self.attention_mask[index],
            mlm_labels=None if self.mlm_labels is None else self.mlm_labels[index],
        )


def encode(text: str, max_len: int = 128, vocab: Vocab = DEFAULT_VOCAB) -> TokenSequence:
    """[CLS] + characters + [SEP], head-truncated to max_len - 2 characters."""

    if max_len < 3:
        raise ValueError(f"max_len must be at least 3, got {max_len}")
    body = text[: max_len - 2]
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[0] = vocab.cls_id
    ids[1 : 1 + len(body)] = [vocab.id_of(ch) for ch in body]
    ids[1 + len(body)] = vocab.sep_id
    return TokenSequence(ids=ids, attention_mask=ids != vocab.pad_id)


def encode_batch(texts: Sequence[str], max_len: int = 128, vocab: Vocab = DEFAULT_VOCAB) -> TokenBatch:
    return TokenBatch.from_sequences([encode(text, max_len, vocab) for text in texts])


def decode(seq: TokenSequence, vocab: Vocab = DEFAULT_VOCAB) -> str:
    """Inverse of :func:`encode`; unknown characters are dropped."""

    ids = [int(i) for i in seq.ids]
    if not ids or ids[0] != vocab.cls_id:
        raise ValueError("sequence does not start with [CLS]")
    try:
        sep = ids.index(vocab.sep_id)
    except ValueError:
        raise ValueError("sequence has no [SEP]") from None
    if any(i != vocab.pad_id for i in ids[sep + 1 :]):
        raise ValueError("only [PAD] may follow [SEP]")
    tokens = vocab.tokens
    chars: List[str] = []
    for token_id in ids[1:sep]:
        if token_id == vocab.unk_id:
            continue
        if token_id < vocab.n_specials or token_id >= vocab.size:
            raise ValueError(f"unexpected token id {token_id} inside the sequence body")
        chars.append(tokens[token_id])
    return "".join(chars)


def _check_rates(select_rate: float, mask_frac: float, random_frac: float) -> None:
    for name, value in (("select_rate", select_rate), ("mask_frac", mask_frac), ("random_frac", random_frac)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    if mask_frac + random_frac > 1.0:
        raise ValueError(f"mask_frac + random_frac must not exceed 1, got {mask_frac + random_frac}")


def _mask_ids(
    ids: np.ndarray,
    rng: np.random.Generator,
    select_rate: float,
    mask_frac: float,
    random_frac: float,
    vocab: Vocab,
) -> Tuple[np.ndarray, np.ndarray]:
    eligible = ids >= vocab.n_specials
    selected = (rng.random(ids.shape) < select_rate) & eligible
    branch = rng.random(ids.shape)
    replacements = rng.integers(vocab.n_specials, vocab.size, size=ids.shape)
    to_mask = selected & (branch < mask_frac)
    to_random = selected & (branch >= mask_frac) & (branch < mask_frac + random_frac)
    masked = ids.copy()
    masked[to_mask] = vocab.mask_id
    masked[to_random] = replacements[to_random]
    labels = np.where(selected, ids, IGNORE_INDEX)
    return masked, labels


def apply_mlm_mask(
    seq: TokenSequence,
    rng: np.random.Generator,
    select_rate: float = 0.15,
    mask_frac: float = 0.8,
    random_frac: float = 0.1,
    vocab: Vocab = DEFAULT_VOCAB,
) -> TokenSequence:
    """Select character tokens independently and replace them 80/10/10 style."""

    _check_rates(select_rate, mask_frac, random_frac)
    if seq.mlm_labels is not None:
        raise ValueError("sequence is already masked")
    ids, labels = _mask_ids(seq.ids, rng, select_rate, mask_frac, random_frac, vocab)
    return TokenSequence(ids=ids, attention_mask=seq.attention_mask.copy(), mlm_labels=labels)


def mask_batch(
    batch: TokenBatch,
    rng: np.random.Generator,
    select_rate: float = 0.15,
    mask_frac: float = 0.8,
    random_frac: float = 0.1,
    vocab: Vocab = DEFAULT_VOCAB,
) -> TokenBatch:
    _check_rates(select_rate, mask_frac, random_frac)
    ids, labels = _mask_ids(batch.ids, rng, select_rate, mask_frac, random_frac, vocab)
    return TokenBatch(ids=ids, attention_mask=batch.attention_mask.copy(), mlm_labels=labels)
