import json
import struct

import numpy as np
import pytest

from exfil_bert.errors import CheckpointError
from exfil_bert.evaluation.scores import read_scores, score_records, score_texts, text_hash, write_scores
from exfil_bert.model.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from exfil_bert.model.encoder import init_params
from exfil_bert.model.tokenizer import Vocab
from exfil_bert.schemas import ALPHABET, ModelConfig, SubdomainRecord


CONFIG = ModelConfig(n_layers=1, hidden=16, n_heads=2, ff=32, max_len=24)


def test_checkpoint_round_trip(tmp_path):
    params = init_params(CONFIG, seed=0)
    path = save_checkpoint(tmp_path / "m.ckpt", params, {"task": "cls", "step": 7})
    loaded = load_checkpoint(path)
    assert loaded.params.config == CONFIG
    assert loaded.metadata == {"task": "cls", "step": 7}
    assert list(loaded.params) == list(params)
    for name in params:
        assert np.array_equal(loaded.params[name], params[name])
    assert not (tmp_path / "m.ckpt.tmp").exists()


def test_checkpoint_header_layout(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", init_params(CONFIG, seed=0))
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + length])
    assert header["format_version"] == 1
    assert header["vocab"][:5] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    payload = sum(4 * np.prod(entry["shape"]) for entry in header["tensors"])
    assert len(raw) == 16 + length + payload


def test_checkpoint_rejects_corrupt_files(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", init_params(CONFIG, seed=0))
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"NOTABERT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad_magic)

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)

    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + length])
    header["format_version"] = 99
    blob = json.dumps(header).encode("utf-8")
    versioned = tmp_path / "version.ckpt"
    versioned.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob + raw[16 + length :])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(versioned)


def test_score_files_round_trip(tmp_path):
    params = init_params(CONFIG, seed=1)
    records = [SubdomainRecord(text="www", label=0), SubdomainRecord(text="mzxw6ytboi.a", label=1)]
    rows = score_records(params, records, batch_size=1)
    np.testing.assert_allclose([row.s for row in rows], score_texts(params, ["www", "mzxw6ytboi.a"]), rtol=1e-5)
    assert rows[0].text_hash == text_hash("www")
    path = write_scores(tmp_path / "scores.jsonl", rows)
    assert read_scores(path) == rows
    with pytest.raises(ValueError):
        score_records(params, [SubdomainRecord(text="www")])


def test_scoring_uses_the_vocabulary_stored_in_the_checkpoint(tmp_path):
    reversed_vocab = Vocab(alphabet=tuple(reversed(ALPHABET)))
    path = save_checkpoint(tmp_path / "m.ckpt", init_params(CONFIG, seed=2), vocab=reversed_vocab)
    checkpoint = load_checkpoint(path)
    assert checkpoint.vocab == reversed_vocab

    records = [SubdomainRecord(text="www.mail", label=0), SubdomainRecord(text="mzxw6ytboi.a1", label=1)]
    texts = [record.text for record in records]
    rows = score_records(checkpoint.params, records, vocab=checkpoint.vocab)
    with_stored = score_texts(checkpoint.params, texts, vocab=checkpoint.vocab)
    with_default = score_texts(checkpoint.params, texts)
    np.testing.assert_allclose([row.s for row in rows], with_stored, rtol=1e-6)
    assert not np.allclose(with_stored, with_default, rtol=0.0, atol=1e-9)

    with pytest.raises(ValueError, match="vocab_size"):
        score_texts(checkpoint.params, texts, vocab=Vocab(alphabet=tuple("abc")))
