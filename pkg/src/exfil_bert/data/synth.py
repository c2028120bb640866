"""Synthetic labeled subdomain corpora: benign names and tunneling payloads."""
from __future__ import annotations

import base64
import json
import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Set

import numpy as np

from ..errors import CorpusError
from ..schemas import SubdomainRecord, SynthSpec
from .corpus import write_records


logger = logging.getLogger(__name__)

SERVICES = (
    "www", "mail", "api", "cdn", "static", "img", "login", "auth", "vpn", "smtp",
    "imap", "ns1", "ns2", "m", "app", "docs", "blog", "shop", "portal", "update",
    "dl", "media", "assets", "video", "files", "git", "dev", "stage", "admin",
    "support", "status", "news", "search", "maps", "drive", "chat", "push",
    "metrics", "telemetry", "edge", "origin", "web", "secure", "accounts", "pay",
)
WORDS = (
    "prod", "internal", "corp", "office", "global", "beta", "mobile", "backend",
    "frontend", "gateway", "proxy", "cache", "lb", "node", "db", "service",
    "cluster", "eu", "us", "asia", "images", "content", "sync", "client", "live",
)
REGIONS = (
    "us-east-1", "us-west-2", "eu-west-1", "eu-central-1", "ap-south-1",
    "ap-northeast-1", "sa-east-1", "ca-central-1",
)
_ALNUM = "abcdefghijklmnopqrstuvwxyz0123456789"
_HEX = "0123456789abcdef"
_BASE32 = "abcdefghijklmnopqrstuvwxyz234567"
_MAX_LABEL = 63

BENIGN_STREAM = 0
EXFIL_STREAM = 1
SHUFFLE_STREAM = 2


def _random_string(rng: np.random.Generator, alphabet: str, length: int) -> str:
    picks = rng.integers(0, len(alphabet), size=length)
    return "".join(alphabet[i] for i in picks)


def _choice(rng: np.random.Generator, pool: Sequence[str]) -> str:
    return pool[int(rng.integers(0, len(pool)))]


def _benign_label(rng: np.random.Generator) -> str:
    kind = rng.random()
    if kind < 0.4:
        return _choice(rng, SERVICES)
    if kind < 0.6:
        return _choice(rng, WORDS)
    if kind < 0.8:
        return f"{_choice(rng, WORDS)}-{int(rng.integers(0, 100)):02d}"
    if kind < 0.9:
        return _choice(rng, REGIONS)
    return f"{_choice(rng, SERVICES)}{int(rng.integers(1, 30))}"


def _hard_benign(rng: np.random.Generator) -> str:
    """CDN/object-store style names whose first label looks random."""

    alphabet = _HEX if rng.random() < 0.5 else _ALNUM
    token = _random_string(rng, alphabet, int(rng.integers(12, 33)))
    if rng.random() < 0.5:
        return f"{token}.{_choice(rng, ('cdn', 'edge', 's3', 'static', 'media', 'assets'))}"
    return token


def _zipf_count(rng: np.random.Generator, spec: SynthSpec) -> int:
    if spec.max_group_size == 1:
        return 1
    return int(min(rng.zipf(spec.zipf_exponent), spec.max_group_size))


def _unique(n: int, make: Callable[[], str], max_draws: Optional[int] = None) -> List[str]:
    """Draw until ``n`` distinct texts; collisions are redrawn, never rewritten."""

    max_draws = 50 * n + 1000 if max_draws is None else max_draws
    taken: Set[str] = set()
    texts: List[str] = []
    draws = 0
    while len(texts) < n:
        if draws >= max_draws:
            raise CorpusError(f"drew only {len(texts)} distinct texts out of {n} after {draws} draws")
        text = make()
        draws += 1
        if text not in taken:
            taken.add(text)
            texts.append(text)
    return texts


def gen_benign(spec: SynthSpec, seed: Optional[int] = None) -> List[SubdomainRecord]:
    """Dictionary and pattern based benign subdomains with Zipf duplicate counts."""

    rng = np.random.default_rng([spec.seed if seed is None else seed, BENIGN_STREAM])

    def make() -> str:
        if rng.random() < spec.hard_benign_fraction:
            return _hard_benign(rng)
        depth = int(min(6, 1 + rng.poisson(max(spec.mean_depth - 1.0, 0.0))))
        labels = [_benign_label(rng) for _ in range(depth)]
        text = ".".join(labels)
        target = int(rng.gamma(4.0, spec.mean_length / 4.0))
        while len(text) < target and len(labels[0]) + 8 <= _MAX_LABEL:
            labels[0] = f"{labels[0]}-{_choice(rng, WORDS)}"
            text = ".".join(labels)
        return text

    texts = _unique(spec.n_benign, make)
    return [SubdomainRecord(text=text, label=0, count=_zipf_count(rng, spec)) for text in texts]


def _encode_payload(payload: bytes, encoder: str) -> str:
    if encoder == "hex":
        return payload.hex()
    return base64.b32encode(payload).decode("ascii").lower().rstrip("=")


def gen_exfil(spec: SynthSpec, seed: Optional[int] = None) -> List[SubdomainRecord]:
    """Encoded random payloads chunked into DNS labels, one query per string."""

    rng = np.random.default_rng([spec.seed if seed is None else seed, EXFIL_STREAM])
    session_alphabet = _HEX if spec.encoder == "hex" else _BASE32

    def make() -> str:
        payload = rng.bytes(int(rng.integers(16, 96)))
        encoded = _encode_payload(payload, spec.encoder)
        width = int(rng.integers(24, _MAX_LABEL + 1))
        chunks = [encoded[i : i + width] for i in range(0, len(encoded), width)]
        session = _random_string(rng, session_alphabet, int(rng.integers(1, 5)))
        return ".".join([session, *chunks])

    texts = _unique(spec.n_malicious, make)
    return [SubdomainRecord(text=text, label=1, count=1) for text in texts]


def gen_corpus(spec: SynthSpec) -> List[SubdomainRecord]:
    """Benign and exfiltration records interleaved in a seeded order."""

    records = gen_benign(spec) + gen_exfil(spec)
    order = np.random.default_rng([spec.seed, SHUFFLE_STREAM]).permutation(len(records))
    return [records[i] for i in order]


def write_synth_corpus(path: str | Path, records: Sequence[SubdomainRecord], spec: SynthSpec) -> Path:
    """Write the corpus TSV and a spec-echo JSON sidecar next to it."""

    path = Path(path)
    write_records(path, records)
    sidecar = path.with_suffix(".spec.json")
    sidecar.write_text(json.dumps(spec.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")
    logger.info("wrote %d synthetic records to %s", len(records), path)
    return sidecar
