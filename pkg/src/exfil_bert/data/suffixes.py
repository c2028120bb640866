"""Public-suffix rules used to strip the registrable domain from an FQDN."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Tuple

from publicsuffixlist import PublicSuffixList


class SuffixRules:
    """Public suffix list loaded from a local rule file.

    Matching (longest rule, ``*.`` wildcards, ``!`` exceptions, implicit ``*``
    for unknown TLDs) is delegated to ``publicsuffixlist``; rules always come
    from the caller so extraction never depends on a downloaded list.
    """

    def __init__(self, psl: PublicSuffixList) -> None:
        self._psl = psl

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "SuffixRules":
        return cls(PublicSuffixList(source=[line.strip().lower() for line in lines], accept_unknown=True))

    @classmethod
    def load(cls, path: str | Path) -> "SuffixRules":
        with Path(path).open("r", encoding="utf-8") as handle:
            return cls.from_lines(handle)

    def public_suffix(self, name: str) -> str:
        suffix = self._psl.publicsuffix(name)
        return suffix if suffix is not None else name.rsplit(".", 1)[-1]

    def split(self, name: str) -> Tuple[str, str, str]:
        """Split ``name`` into (subdomain, registrable label, public suffix)."""

        suffix = self.public_suffix(name)
        if suffix == name:
            return "", "", suffix
        labels = name[: -len(suffix) - 1].split(".")
        return ".".join(labels[:-1]), labels[-1], suffix
