"""Batch scoring with the classification head and JSON-lines score files."""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..model.encoder import ModelParams, forward
from ..model.tokenizer import DEFAULT_VOCAB, Vocab, encode_batch
from ..schemas import ScoredSample, SubdomainRecord


logger = logging.getLogger(__name__)


class ScoreRow(ScoredSample):
    text_hash: str


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def score_texts(
    params: ModelParams,
    texts: Sequence[str],
    batch_size: int = 256,
    vocab: Vocab = DEFAULT_VOCAB,
) -> np.ndarray:
    """Pr(malicious) for each text, in input order, encoded with the checkpoint's vocabulary."""

    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if vocab.size != params.config.vocab_size:
        raise ValueError(f"vocabulary of {vocab.size} tokens does not match model vocab_size {params.config.vocab_size}")
    scores = np.empty(len(texts), dtype=np.float64)
    for start in range(0, len(texts), batch_size):
        chunk = texts[start : start + batch_size]
        batch = encode_batch(chunk, max_len=params.config.max_len, vocab=vocab)
        scores[start : start + len(chunk)] = forward(params, batch, "cls")
    return np.clip(scores, 0.0, 1.0)


def score_records(
    params: ModelParams,
    records: Sequence[SubdomainRecord],
    batch_size: int = 256,
    vocab: Vocab = DEFAULT_VOCAB,
) -> List[ScoreRow]:
    if any(record.label is None for record in records):
        raise ValueError("score files need labeled records")
    scores = score_texts(params, [record.text for record in records], batch_size, vocab)
    return [
        ScoreRow(text_hash=text_hash(record.text), y=record.label, s=float(score))
        for record, score in zip(records, scores)
    ]


def write_scores(path: str | Path, rows: Sequence[ScoreRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(json.dumps({"text_hash": row.text_hash, "y": row.y, "s": row.s}, sort_keys=True) + "\n")
    logger.info("wrote %d scores to %s", len(rows), path)
    return path


def read_scores(path: str | Path) -> List[ScoreRow]:
    rows: List[ScoreRow] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                rows.append(ScoreRow.model_validate(json.loads(line)))
    return rows
