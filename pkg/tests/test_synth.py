import re

import numpy as np
import pytest

from exfil_bert.data.corpus import normalize_record, read_corpus
from exfil_bert.data.stats import char_entropy, label_depth
from exfil_bert.data.synth import _unique, gen_corpus, gen_exfil, write_synth_corpus
from exfil_bert.errors import CorpusError
from exfil_bert.evaluation.metrics import ScoreSet, auc, roc_curve
from exfil_bert.schemas import ALPHABET, SynthSpec


def test_gen_corpus_is_deterministic_and_labeled():
    spec = SynthSpec(n_benign=200, n_malicious=20, seed=4)
    first = gen_corpus(spec)
    assert first == gen_corpus(spec)
    assert sum(r.label == 1 for r in first) == 20
    assert sum(r.label == 0 for r in first) == 200
    assert len({r.text for r in first}) == len(first)


def test_generated_strings_are_normalized_subdomains():
    for record in gen_corpus(SynthSpec(n_benign=300, n_malicious=100, seed=1)):
        assert normalize_record(record.text, extract=False).text == record.text
        assert all(len(label) <= 63 for label in record.text.split("."))
        if record.label == 1:
            assert label_depth(record.text) >= 2


def test_max_group_size_caps_duplicate_counts():
    records = gen_corpus(SynthSpec(n_benign=300, n_malicious=10, max_group_size=1))
    assert all(r.count == 1 for r in records)
    capped = gen_corpus(SynthSpec(n_benign=300, n_malicious=10, max_group_size=5))
    assert max(r.count for r in capped) <= 5


def test_malicious_rate_derives_count():
    spec = SynthSpec(n_benign=997, malicious_rate=0.003)
    assert spec.n_malicious == 3


def test_hex_encoder_uses_hex_alphabet():
    records = gen_exfil(SynthSpec(n_benign=1, n_malicious=50, encoder="hex"))
    assert set("".join(r.text for r in records)) <= set("0123456789abcdef.")


def test_exfil_has_higher_entropy_than_benign():
    records = gen_corpus(SynthSpec(n_benign=2000, n_malicious=1000, seed=2))
    benign = np.mean([char_entropy(r.text) for r in records if r.label == 0])
    exfil = np.mean([char_entropy(r.text) for r in records if r.label == 1])
    assert exfil > 3.0
    assert exfil > benign


def test_entropy_baseline_separates_classes():
    records = gen_corpus(SynthSpec(n_benign=5000, n_malicious=500, seed=0))
    scores = np.array([char_entropy(r.text) for r in records]) / np.log2(len(ALPHABET))
    labels = np.array([r.label for r in records])
    assert auc(roc_curve(ScoreSet(y=labels, s=scores))) > 0.9


def test_write_synth_corpus_round_trips(tmp_path):
    spec = SynthSpec(n_benign=50, n_malicious=5, seed=9)
    records = gen_corpus(spec)
    sidecar = write_synth_corpus(tmp_path / "synth.tsv", records, spec)
    assert sidecar.exists()
    assert read_corpus(tmp_path / "synth.tsv", extract=False) == records


def test_collisions_are_redrawn_without_a_class_specific_marker():
    records = gen_corpus(SynthSpec(n_benign=20000, n_malicious=1000, hard_benign_fraction=0.0, seed=0))
    assert sum(r.label == 0 for r in records) == 20000
    assert len({r.text for r in records}) == len(records)
    marker = re.compile(r"\.n\d+$")
    for label in (0, 1):
        assert not any(marker.search(r.text) for r in records if r.label == label)


def test_unique_gives_up_when_the_pool_is_exhausted():
    assert _unique(3, iter(["a", "a", "b", "a", "c"]).__next__) == ["a", "b", "c"]
    with pytest.raises(CorpusError):
        _unique(2, lambda: "same", max_draws=100)
