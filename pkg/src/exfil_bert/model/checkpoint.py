"""Self-describing checkpoint container.

Byte layout::

    offset 0    8 bytes   magic b"EXFLBERT"
    offset 8    8 bytes   header length H, unsigned 64-bit little-endian
    offset 16   H bytes   UTF-8 JSON header
    offset 16+H           tensor payload, float32 little-endian, C order

The header carries ``format_version``, ``model_config``, ``vocab`` (token
list in id order), ``tensors`` (a list of ``{name, shape, offset}`` with
byte offsets relative to the payload start) and free-form ``metadata``
such as the task, step and seed of the run that wrote it.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from pydantic import ValidationError

from ..errors import CheckpointError
from ..schemas import ModelConfig
from .encoder import ModelParams, param_shapes
from .tokenizer import DEFAULT_VOCAB, Vocab


logger = logging.getLogger(__name__)

MAGIC = b"EXFLBERT"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")
_FLOAT = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocab = DEFAULT_VOCAB
    metadata: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    metadata: Dict[str, Any] | None = None,
    vocab: Vocab = DEFAULT_VOCAB,
) -> Path:
    path = Path(path)
    if vocab.size != params.config.vocab_size:
        raise CheckpointError(f"vocabulary of {vocab.size} tokens does not match model vocab_size")
    table: List[Dict[str, Any]] = []
    chunks: List[bytes] = []
    offset = 0
    for name, tensor in params.items():
        data = np.ascontiguousarray(tensor, dtype=_FLOAT).tobytes()
        table.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "model_config": params.config.model_dump(mode="json"),
            "vocab": vocab.to_json(),
            "tensors": table,
            "metadata": metadata or {},
        },
        sort_keys=True,
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(_LENGTH.pack(len(header)))
        handle.write(header)
        for chunk in chunks:
            handle.write(chunk)
    tmp.replace(path)
    logger.info("saved checkpoint %s (%d tensors)", path, len(table))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    start = len(MAGIC) + _LENGTH.size
    if len(raw) < start:
        raise CheckpointError(f"{path} is truncated")
    (header_len,) = _LENGTH.unpack_from(raw, len(MAGIC))
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has an unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')!r}")

    try:
        config = ModelConfig.model_validate(header["model_config"])
        vocab = Vocab.from_json(header["vocab"])
    except (KeyError, ValidationError, ValueError) as exc:
        raise CheckpointError(f"{path} has an invalid model description: {exc}") from exc

    expected = param_shapes(config)
    payload = memoryview(raw)[start + header_len :]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"tensor {name!r} has shape {shape}, expected {expected.get(name)}")
        count = int(np.prod(shape, dtype=np.int64))
        end = entry["offset"] + count * _FLOAT.itemsize
        if end > len(payload):
            raise CheckpointError(f"tensor {name!r} runs past the end of {path}")
        tensors[name] = (
            np.frombuffer(payload, dtype=_FLOAT, count=count, offset=entry["offset"])
            .reshape(shape)
            .astype(np.float32)
        )
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointError(f"{path} lacks tensors: {', '.join(missing[:5])}")
    ordered = {name: tensors[name] for name in expected}
    return Checkpoint(params=ModelParams(config, ordered), vocab=vocab, metadata=header.get("metadata", {}))
