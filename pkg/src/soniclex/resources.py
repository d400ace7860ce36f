"""Loaders for the editable text assets shipped with the package.

Stop words, the genericity lexicon, the descriptor vocabulary, and the
prompt bodies all live as plain text files so field users can tune them
without touching code.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


def _read_text(name: str) -> str:
    return resources.files("soniclex.data").joinpath(name).read_text(encoding="utf-8")


def _read_lines(name: str) -> tuple[str, ...]:
    lines = []
    for raw in _read_text(name).splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append(line.lower())
    return tuple(lines)


@lru_cache(maxsize=None)
def stop_words() -> frozenset[str]:
    return frozenset(_read_lines("stop_words.txt"))


@lru_cache(maxsize=None)
def generic_phrases() -> tuple[str, ...]:
    return _read_lines("generic_phrases.txt")


@lru_cache(maxsize=None)
def specific_descriptors() -> frozenset[str]:
    return frozenset(_read_lines("specific_descriptors.txt"))


@lru_cache(maxsize=None)
def prompt_text(name: str) -> str:
    return _read_text(name).strip()


def seed_kb_path():
    return resources.files("soniclex.data").joinpath("seed_kb.json")
