"""Corpus ingestion, normalization, deduplication and splitting."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import CorpusError
from ..schemas import DuplicateStats, SplitSet, SubdomainRecord, is_valid_subdomain
from .suffixes import SuffixRules


logger = logging.getLogger(__name__)

SPLIT_NAMES: Tuple[str, str, str] = ("train", "validation", "test")
SIDECAR_NAME = "stats.jsonl"
_MAX_LOGGED_CONFLICTS = 5


@dataclass
class NormalizationCounters:
    """Thread-safe rejection and label-conflict accumulators."""

    rejected: Counter = field(default_factory=Counter)
    accepted: Counter = field(default_factory=Counter)
    conflicts: List[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def reject(self, source: str) -> None:
        with self._lock:
            self.rejected[source] += 1

    def accept(self, source: str) -> None:
        with self._lock:
            self.accepted[source] += 1

    def conflict(self, text: str) -> None:
        with self._lock:
            self.conflicts.append(text)

    def to_json(self) -> Dict[str, object]:
        with self._lock:
            return {
                "rejected": dict(sorted(self.rejected.items())),
                "accepted": dict(sorted(self.accepted.items())),
                "label_conflicts": len(self.conflicts),
            }


def normalize_text(raw: str | bytes) -> Optional[str]:
    """Lowercase and validate one name; idempotent on valid subdomains."""

    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError:
            return None
    text = raw.strip().lower()
    if text.endswith("."):
        text = text[:-1]
    return text if is_valid_subdomain(text) else None


def extract_subdomain(name: str, psl: Optional[SuffixRules] = None) -> str:
    """Strip registrable domain and suffix; without rules drop the last two labels."""

    if psl is not None:
        subdomain, _, _ = psl.split(name)
        return subdomain
    labels = name.split(".")
    return ".".join(labels[:-2])


def normalize_record(
    raw_fqdn: str | bytes,
    psl: Optional[SuffixRules] = None,
    *,
    extract: bool = True,
    label: Optional[int] = None,
    count: int = 1,
) -> Optional[SubdomainRecord]:
    """Normalize one input row into a subdomain record.

    With ``extract=True`` the input is a full name and its registrable domain
    and suffix are stripped, so this step applies to raw FQDNs only: feeding an
    extracted subdomain back in strips further labels. Idempotence holds for
    ``normalize_text`` and for ``extract=False``.
    """

    text = normalize_text(raw_fqdn)
    if text is None:
        return None
    if extract:
        text = extract_subdomain(text, psl)
        if not text:
            return None
    return SubdomainRecord(text=text, label=label, count=count)


def _parse_row(line: str) -> Optional[Tuple[str, Optional[int], int]]:
    parts = line.rstrip("\r\n").split("\t")
    label: Optional[int] = None
    count = 1
    if len(parts) > 1 and parts[1].strip():
        if parts[1].strip() not in ("0", "1"):
            return None
        label = int(parts[1])
    if len(parts) > 2 and parts[2].strip():
        try:
            count = int(parts[2])
        except ValueError:
            return None
        if count < 1:
            return None
    return parts[0], label, count


def read_corpus(
    path: str | Path,
    psl: Optional[SuffixRules] = None,
    *,
    extract: bool = True,
    counters: Optional[NormalizationCounters] = None,
) -> List[SubdomainRecord]:
    """Read a ``name<TAB>label<TAB>count`` file, normalizing every row."""

    path = Path(path)
    counters = counters if counters is not None else NormalizationCounters()
    source = str(path)
    records: List[SubdomainRecord] = []
    with path.open("rb") as handle:
        for raw_line in handle:
            try:
                line = raw_line.decode("utf-8")
            except UnicodeDecodeError:
                counters.reject(source)
                continue
            if not line.strip() or line.startswith("#"):
                continue
            parsed = _parse_row(line)
            record = None
            if parsed is not None:
                name, label, count = parsed
                record = normalize_record(name, psl, extract=extract, label=label, count=count)
            if record is None:
                counters.reject(source)
                continue
            counters.accept(source)
            records.append(record)
    logger.info(
        "read %d rows from %s (%d rejected)", len(records), path, counters.rejected.get(source, 0)
    )
    return records


def dedup(
    records: Sequence[SubdomainRecord],
    counters: Optional[NormalizationCounters] = None,
) -> Tuple[List[SubdomainRecord], DuplicateStats]:
    """Collapse records to one per text; conflicting labels resolve to malicious."""

    if not records:
        raise CorpusError("cannot deduplicate an empty corpus")
    totals: Dict[str, int] = {}
    labels: Dict[str, set] = {}
    for record in records:
        totals[record.text] = totals.get(record.text, 0) + record.count
        if record.label is not None:
            labels.setdefault(record.text, set()).add(record.label)

    conflicts = [text for text, seen in labels.items() if len(seen) > 1]
    for text in conflicts[:_MAX_LOGGED_CONFLICTS]:
        logger.warning("label conflict in duplicate group %r; resolved to malicious", text)
    if conflicts:
        logger.warning("%d duplicate groups had conflicting labels", len(conflicts))
        if counters is not None:
            for text in conflicts:
                counters.conflict(text)

    unique = [
        SubdomainRecord(text=text, label=max(labels[text]) if text in labels else None, count=total)
        for text, total in totals.items()
    ]
    stats = DuplicateStats.from_group_sizes(list(totals.values()), label_conflicts=len(conflicts))
    return unique, stats


def expand_counts(records: Iterable[SubdomainRecord]) -> List[str]:
    """Re-expand records into the multiset of texts they stand for."""

    return [record.text for record in records for _ in range(record.count)]


def _split_key(text: str, seed: int) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16, key=str(seed).encode("ascii")).digest()


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def split_corpus(
    records: Sequence[SubdomainRecord],
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitSet:
    """Partition by unique text so no text straddles two splits.

    Texts are ordered by a seed-keyed hash and cut at the requested
    proportions, which is stable under any reordering of the input.
    """

    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise CorpusError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not records:
        raise CorpusError("corpus too small to split")
    unique, _ = dedup(records)
    n = len(unique)
    if n < 3:
        raise CorpusError("corpus too small to split")

    ordered = sorted(unique, key=lambda record: (_split_key(record.text, seed), record.text))
    n_val = max(1, _round_half_up(ratios[1] * n)) if ratios[1] > 0 else 0
    n_test = max(1, _round_half_up(ratios[2] * n)) if ratios[2] > 0 else 0
    n_train = n - n_val - n_test
    if n_train < 1:
        raise CorpusError("corpus too small to split")

    def _single(items: Sequence[SubdomainRecord]) -> List[SubdomainRecord]:
        return [item if item.count == 1 else item.model_copy(update={"count": 1}) for item in items]

    return SplitSet(
        train=list(ordered[:n_train]),
        validation=_single(ordered[n_train : n_train + n_val]),
        test=_single(ordered[n_train + n_val :]),
        seed=seed,
    )


def stratified_subsample(
    train: Sequence[SubdomainRecord],
    fraction: float,
    seed: int = 0,
) -> List[SubdomainRecord]:
    """Keep round(fraction * class instances) instances of each label."""

    if not 0.0 < fraction <= 1.0:
        raise CorpusError(f"label fraction must lie in (0, 1], got {fraction}")
    if any(record.label is None for record in train):
        raise CorpusError("stratified subsampling needs every record labeled")
    if fraction == 1.0:
        return list(train)

    rng = np.random.default_rng(seed)
    counts = np.array([record.count for record in train], dtype=np.int64)
    labels = np.array([record.label for record in train], dtype=np.int64)
    kept = np.zeros(len(train), dtype=np.int64)
    for label in (0, 1):
        members = np.flatnonzero(labels == label)
        if members.size == 0:
            continue
        instances = np.repeat(members, counts[members])
        target = _round_half_up(fraction * instances.size)
        chosen = rng.choice(instances.size, size=target, replace=False)
        kept += np.bincount(instances[chosen], minlength=len(train))
    return [
        record.model_copy(update={"count": int(c)}) for record, c in zip(train, kept) if c > 0
    ]


def write_records(path: str | Path, records: Iterable[SubdomainRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write("# subdomain\tlabel\tcount\n")
        for record in records:
            label = "" if record.label is None else str(record.label)
            handle.write(f"{record.text}\t{label}\t{record.count}\n")


def write_split_set(
    directory: str | Path,
    splits: SplitSet,
    stats: Optional[DuplicateStats] = None,
    counters: Optional[NormalizationCounters] = None,
) -> Path:
    """Write one TSV per split plus the JSON-lines statistics sidecar."""

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        write_records(directory / f"{name}.tsv", splits.split(name))
    lines = [
        {
            "kind": "split",
            "seed": splits.seed,
            "sizes": {name: len(splits.split(name)) for name in SPLIT_NAMES},
            "train_instances": sum(record.count for record in splits.train),
        }
    ]
    if stats is not None:
        lines.append({"kind": "duplicate_stats", **stats.model_dump()})
    if counters is not None:
        lines.append({"kind": "normalization", **counters.to_json()})
    with (directory / SIDECAR_NAME).open("w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(json.dumps(line, sort_keys=True) + "\n")
    logger.info("wrote splits to %s", directory)
    return directory


def read_split_set(directory: str | Path) -> SplitSet:
    directory = Path(directory)
    parts = {
        name: read_corpus(directory / f"{name}.tsv", extract=False) for name in SPLIT_NAMES
    }
    seed = 0
    sidecar = directory / SIDECAR_NAME
    if sidecar.exists():
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            entry = json.loads(line)
            if entry.get("kind") == "split":
                seed = int(entry["seed"])
    return SplitSet(seed=seed, **parts)
