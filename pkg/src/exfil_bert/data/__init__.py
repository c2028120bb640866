"""Corpus ingestion, statistics and synthetic data generation."""
from .corpus import (
    NormalizationCounters,
    dedup,
    normalize_record,
    normalize_text,
    read_corpus,
    read_split_set,
    split_corpus,
    stratified_subsample,
    write_split_set,
)
from .stats import char_entropy, compare_corpora, corpus_summary, ks_two_sample, label_depth, lexical_overlap
from .suffixes import SuffixRules
from .synth import gen_benign, gen_corpus, gen_exfil

__all__ = [
    "NormalizationCounters",
    "SuffixRules",
    "char_entropy",
    "compare_corpora",
    "corpus_summary",
    "dedup",
    "gen_benign",
    "gen_corpus",
    "gen_exfil",
    "ks_two_sample",
    "label_depth",
    "lexical_overlap",
    "normalize_record",
    "normalize_text",
    "read_corpus",
    "read_split_set",
    "split_corpus",
    "stratified_subsample",
    "write_split_set",
]
