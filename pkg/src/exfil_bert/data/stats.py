"""Corpus-level statistics: length, depth, entropy, KS tests and overlap."""
from __future__ import annotations

import math
from collections import Counter
from typing import Dict, Iterable, List, Sequence, Set

import numpy as np
from pydantic import BaseModel
from scipy.special import kolmogorov

from ..schemas import CorpusSummary, KsResult, SubdomainRecord


FEATURES = ("length", "depth", "entropy")


def char_entropy(text: str) -> float:
    """Shannon entropy in bits of the character distribution of ``text``."""

    if not text:
        raise ValueError("entropy of an empty string is undefined")
    n = len(text)
    return -math.fsum((c / n) * math.log2(c / n) for c in Counter(text).values())


def label_depth(text: str) -> int:
    return text.count(".") + 1


def ks_two_sample(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""

    xs = np.sort(np.asarray(x, dtype=np.float64))
    ys = np.sort(np.asarray(y, dtype=np.float64))
    if xs.size == 0 or ys.size == 0:
        raise ValueError("both samples must be non-empty")
    merged = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, merged, side="right") / xs.size
    cdf_y = np.searchsorted(ys, merged, side="right") / ys.size
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    effective = xs.size * ys.size / (xs.size + ys.size)
    p_value = float(np.clip(kolmogorov(math.sqrt(effective) * d), 0.0, 1.0))
    return KsResult(d_statistic=min(d, 1.0), p_value=p_value, n_x=int(xs.size), n_y=int(ys.size))


def lexical_overlap(a: Set[str], b: Set[str]) -> float:
    """Jaccard overlap of two sets of unique texts."""

    union = len(a | b)
    if union == 0:
        raise ValueError("overlap of two empty sets is undefined")
    return len(a & b) / union


def overlap_report(a: Set[str], b: Set[str]) -> Dict[str, float]:
    shared = len(a & b)
    return {
        "jaccard": lexical_overlap(a, b),
        "shared": float(shared),
        "shared_over_a": shared / len(a) if a else float("nan"),
        "shared_over_b": shared / len(b) if b else float("nan"),
    }


def feature_values(records: Sequence[SubdomainRecord], feature: str, weighted: bool = False) -> np.ndarray:
    compute = {"length": len, "depth": label_depth, "entropy": char_entropy}[feature]
    values = np.array([compute(record.text) for record in records], dtype=np.float64)
    if weighted:
        values = np.repeat(values, [record.count for record in records])
    return values


def corpus_summary(records: Sequence[SubdomainRecord], weighted: bool = False) -> CorpusSummary:
    if not records:
        raise ValueError("corpus summary needs at least one record")
    weights = [record.count if weighted else 1 for record in records]
    total = sum(weights)

    def _mean(values: Iterable[float]) -> float:
        return math.fsum(w * v for w, v in zip(weights, values)) / total

    return CorpusSummary(
        n=total,
        mean_length=_mean(len(record.text) for record in records),
        mean_depth=_mean(label_depth(record.text) for record in records),
        mean_entropy=_mean(char_entropy(record.text) for record in records),
    )


class FeatureTest(BaseModel):
    feature: str
    weighted: bool
    result: KsResult


class StatsReport(BaseModel):
    """Distributional comparison of two corpora."""

    summaries: Dict[str, CorpusSummary]
    ks: List[FeatureTest]
    overlap: Dict[str, float]


def compare_corpora(
    a: Sequence[SubdomainRecord],
    b: Sequence[SubdomainRecord],
    names: Sequence[str] = ("a", "b"),
) -> StatsReport:
    """Summaries, per-feature KS tests (deduplicated and count-weighted) and overlap."""

    summaries = {}
    for name, records in zip(names, (a, b)):
        summaries[f"{name}"] = corpus_summary(records, weighted=False)
        summaries[f"{name}_weighted"] = corpus_summary(records, weighted=True)
    tests = [
        FeatureTest(
            feature=feature,
            weighted=weighted,
            result=ks_two_sample(feature_values(a, feature, weighted), feature_values(b, feature, weighted)),
        )
        for weighted in (False, True)
        for feature in FEATURES
    ]
    overlap = overlap_report({record.text for record in a}, {record.text for record in b})
    return StatsReport(summaries=summaries, ks=tests, overlap=overlap)


def report_rows(report: StatsReport) -> List[Dict[str, object]]:
    """Flatten a report into CSV-ready rows."""

    rows: List[Dict[str, object]] = []
    for name, summary in report.summaries.items():
        for key, value in summary.model_dump().items():
            rows.append({"section": "summary", "name": name, "metric": key, "value": value})
    for test in report.ks:
        name = f"{test.feature}{'_weighted' if test.weighted else ''}"
        rows.append({"section": "ks", "name": name, "metric": "d_statistic", "value": test.result.d_statistic})
        rows.append({"section": "ks", "name": name, "metric": "p_value", "value": test.result.p_value})
    for key, value in report.overlap.items():
        rows.append({"section": "overlap", "name": "a_vs_b", "metric": key, "value": value})
    return rows
