"""Editable JSON resources: marker lexicons and prompt templates."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_resource(name: str) -> dict:
    return json.loads(resources.files(__package__).joinpath(name).read_text(encoding="utf-8"))


def lexicons() -> dict:
    return load_resource("lexicons.json")


def templates() -> dict:
    return load_resource("templates.json")


_TOKEN = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class MarkerSet:
    """Social-marker lexicon: single words, multi-word phrases and regexes."""

    words: frozenset[str]
    phrases: tuple[str, ...] = ()
    patterns: tuple[str, ...] = ()

    def union(self, other: "MarkerSet") -> "MarkerSet":
        return MarkerSet(
            self.words | other.words,
            tuple(dict.fromkeys(self.phrases + other.phrases)),
            tuple(dict.fromkeys(self.patterns + other.patterns)),
        )

    def scan(self, text: str) -> list[str]:
        """Every marker occurrence in ``text`` (lowercased)."""
        toks = tokens(text)
        found = [t for t in toks if t in self.words]
        joined = f" {' '.join(toks)} "
        found += [p for p in self.phrases if f" {p} " in joined]
        low = text.lower()
        for pat in self.patterns:
            found += re.findall(pat, low)
        return found


def marker_set(category: str) -> MarkerSet:
    entry = lexicons()["markers"][category]
    return MarkerSet(
        frozenset(w.lower() for w in entry["words"]),
        tuple(p.lower() for p in entry.get("phrases", [])),
        tuple(entry.get("patterns", [])),
    )
