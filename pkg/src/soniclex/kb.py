"""Per-species pattern knowledge base with a quality/novelty admission gate.

Learned patterns enter only when quality(text) > quality_threshold AND
novelty against the same species' existing patterns > novelty_threshold
(both strict). Seed patterns are trusted and bypass the gate. The KB
persists as a single versioned JSON document.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from typing import Optional

from . import similarity
from .resources import generic_phrases, specific_descriptors

SCHEMA_VERSION = 1

PROV_FIXED_SEED = "fixed_seed"
PROV_VLM_LEARNED = "vlm_learned"
PROV_EXPERT_EDITED = "expert_edited"
PROVENANCES = frozenset({PROV_FIXED_SEED, PROV_VLM_LEARNED, PROV_EXPERT_EDITED})

REASON_LOW_QUALITY = "low_quality"
REASON_LOW_NOVELTY = "low_novelty"

# quality feature weights in basis points (sum 100); integer math keeps the
# all-binary cases exact
_W_FREQ = 35
_W_TIME = 25
_W_LENGTH = 15
_W_SPECIFICITY = 25
_LENGTH_RANGE = (40, 500)

_FREQ_QUANTITY_RE = re.compile(
    r"\b\d+(?:\.\d+)?(?:\s*(?:-|–|to)\s*\d+(?:\.\d+)?)?\s*k?hz\b")
_TIME_QUANTITY_RE = re.compile(
    r"\b\d+(?:\.\d+)?[\s-]*(?:ms|milliseconds?|sec|secs|seconds?|minutes?|min)\b"
    r"|\b\d+(?:\.\d+)?(?:\s+\S+){0,2}\s+per\s+(?:second|minute)\b")
_WORD_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


class KbError(Exception):
    pass


class SeedFileError(KbError):
    pass


class SchemaVersionError(KbError):
    pass


@dataclass(frozen=True)
class GateConfig:
    quality_threshold: float = 0.4
    novelty_threshold: float = 0.3

    def __post_init__(self):
        for name in ("quality_threshold", "novelty_threshold"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass
class PatternDescription:
    id: str
    text: str
    species: Optional[str] = None
    provenance: str = PROV_VLM_LEARNED
    quality: float = 0.0
    admission_novelty: Optional[float] = None
    created_iteration: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("pattern text is empty")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance: {self.provenance}")
        if not (0.0 <= self.quality <= 1.0):
            raise ValueError(f"quality out of range: {self.quality}")
        if self.created_iteration < 0:
            raise ValueError("created_iteration must be >= 0")


@dataclass
class SpeciesEntry:
    species: str
    patterns: list[PatternDescription] = field(default_factory=list)

    def add(self, pattern: PatternDescription):
        if pattern.species != self.species:
            raise KbError(
                f"pattern species {pattern.species!r} != entry {self.species!r}")
        if any(p.id == pattern.id for p in self.patterns):
            raise KbError(f"duplicate pattern id {pattern.id!r} in {self.species!r}")
        self.patterns.append(pattern)


@dataclass
class KnowledgeBase:
    entries: dict[str, SpeciesEntry] = field(default_factory=dict)
    revision: int = 0
    gate: GateConfig = field(default_factory=GateConfig)

    def species(self) -> list[str]:
        return sorted(self.entries)

    def total_patterns(self) -> int:
        return sum(len(e.patterns) for e in self.entries.values())

    def snapshot(self) -> "KnowledgeBase":
        return copy.deepcopy(self)

    def set_gate(self, gate: GateConfig):
        self.gate = gate
        self.revision += 1

    def commit(self, pattern: PatternDescription):
        """Append a pattern (no gate) and bump the revision."""
        species = pattern.species
        if species is None:
            raise KbError("pattern has no species")
        entry = self.entries.setdefault(species, SpeciesEntry(species=species))
        entry.add(pattern)
        self.revision += 1

    def restricted_to(self, species: list[str]) -> "KnowledgeBase":
        """Copy containing only the given species (for n-way tasks)."""
        kept = {s: copy.deepcopy(self.entries[s]) for s in species if s in self.entries}
        return KnowledgeBase(entries=kept, revision=self.revision, gate=self.gate)


@dataclass(frozen=True)
class KbStats:
    total_patterns: int
    per_species_counts: dict[str, int]
    per_provenance_counts: dict[str, int]


@dataclass(frozen=True)
class ProposalResult:
    accepted: bool
    pattern: Optional[PatternDescription]
    reason: Optional[str]
    quality: float
    novelty: float


def quality(text: str, *, phrases: Optional[tuple[str, ...]] = None,
            descriptors: Optional[frozenset[str]] = None) -> float:
    """Heuristic specificity score in [0, 1].

    Four features: a frequency quantity with units (0.35), a temporal
    quantity (0.25), length within [40, 500] chars (0.15), and specificity
    (0.25) = 1 - fraction of words covered by the genericity lexicon,
    zeroed when the text names no recognized acoustic descriptor at all.
    """
    if not text.strip():
        raise ValueError("empty pattern text")
    if phrases is None:
        phrases = generic_phrases()
    if descriptors is None:
        descriptors = specific_descriptors()
    lowered = text.lower()
    has_freq = _FREQ_QUANTITY_RE.search(lowered) is not None
    has_time = _TIME_QUANTITY_RE.search(lowered) is not None
    length_ok = _LENGTH_RANGE[0] <= len(text.strip()) <= _LENGTH_RANGE[1]

    words = _WORD_RE.findall(lowered)
    parts = set(words)
    for w in words:
        parts.update(w.split("-"))
    if parts.isdisjoint(descriptors):
        specificity = 0.0
    else:
        specificity = 1.0 - _generic_cover_ratio(words, phrases)

    bp = (_W_FREQ * has_freq + _W_TIME * has_time + _W_LENGTH * length_ok
          + _W_SPECIFICITY * specificity)
    return bp / 100.0


def _generic_cover_ratio(words: list[str], phrases: tuple[str, ...]) -> float:
    """Fraction of words covered by any genericity-lexicon phrase."""
    if not words:
        return 1.0
    covered = [False] * len(words)
    phrase_tokens = [tuple(_WORD_RE.findall(p)) for p in phrases]
    for toks in phrase_tokens:
        n = len(toks)
        if n == 0:
            continue
        for i in range(len(words) - n + 1):
            if tuple(words[i:i + n]) == toks:
                for j in range(i, i + n):
                    covered[j] = True
    return sum(covered) / len(words)


def _normalized(text: str) -> str:
    return " ".join(text.split()).casefold()


def novelty(text: str, entry: Optional[SpeciesEntry],
            index: similarity.TfIdfIndex) -> float:
    """1 - max cosine against the species' existing patterns; 1.0 if none.

    An exact text duplicate is pinned to novelty 0 even when the index
    vocabulary cannot see the text's terms, so duplicate proposals are
    always rejected.
    """
    if entry is None or not entry.patterns:
        return 1.0
    norm_text = _normalized(text)
    query = similarity.vectorize(index, text)
    best = 0.0
    for pattern in entry.patterns:
        if _normalized(pattern.text) == norm_text:
            return 0.0
        vec = index.pattern_vectors.get(pattern.id)
        if vec is None:
            vec = similarity.vectorize(index, pattern.text)
        best = max(best, similarity.cosine(query, vec))
    return 1.0 - best


def evaluate_gate(kb: KnowledgeBase, species: str, text: str,
                  index: Optional[similarity.TfIdfIndex] = None,
                  ) -> tuple[float, float, Optional[str]]:
    """Score a candidate against the gate without mutating the KB.

    Returns (quality, novelty, rejection_reason_or_None). Quality is
    checked first, so a generic duplicate reports low_quality.
    """
    q = quality(text)
    if not q > kb.gate.quality_threshold:
        return q, math.nan, REASON_LOW_QUALITY
    entry = kb.entries.get(species)
    if entry is None or not entry.patterns:
        n = 1.0
    else:
        if index is None:
            index = similarity.build_index(kb)
        n = novelty(text, entry, index)
    if not n > kb.gate.novelty_threshold:
        return q, n, REASON_LOW_NOVELTY
    return q, n, None


def propose_pattern(kb: KnowledgeBase, species: str, text: str, iteration: int,
                    index: Optional[similarity.TfIdfIndex] = None) -> ProposalResult:
    """Apply the admission gate; commit on accept, leave KB untouched on reject."""
    text = text.strip()
    q, n, reason = evaluate_gate(kb, species, text, index)
    if reason is not None:
        return ProposalResult(False, None, reason, q, n)
    pattern = PatternDescription(
        id=_pattern_id("vlm", species, text, iteration),
        text=text,
        species=species,
        provenance=PROV_VLM_LEARNED,
        quality=q,
        admission_novelty=n,
        created_iteration=iteration,
    )
    kb.commit(pattern)
    return ProposalResult(True, pattern, None, q, n)


def _pattern_id(prefix: str, species: str, text: str, iteration: int = 0) -> str:
    h = hashlib.sha256(f"{species}\x00{text}\x00{iteration}".encode()).hexdigest()
    return f"{prefix}-{h[:12]}"


def init_fixed(seed_path) -> KnowledgeBase:
    """Load the trusted seed tier; the admission gate is not applied."""
    try:
        raw = open(seed_path, "r", encoding="utf-8").read()
    except OSError as exc:
        raise SeedFileError(f"cannot read seed file {seed_path}: {exc}") from exc
    if not raw.strip():
        kb = KnowledgeBase()
        kb.revision = 1
        return kb
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SeedFileError(f"seed file {seed_path} is not valid JSON: {exc}") from exc

    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema_version {version}")
    gate = GateConfig(**doc["gate"]) if "gate" in doc else GateConfig()
    kb = KnowledgeBase(gate=gate)
    seen_ids = set()
    for species_doc in doc.get("species", []):
        name = species_doc.get("name", "").strip()
        if not name:
            raise SeedFileError("seed species with empty name")
        entry = kb.entries.setdefault(name, SpeciesEntry(species=name))
        for pat in species_doc.get("patterns", []):
            text = (pat.get("text") or "").strip()
            if not text:
                raise SeedFileError(f"seed pattern for {name!r} has no text")
            pid = pat.get("id") or _pattern_id("seed", name, text)
            if pid in seen_ids:
                raise SeedFileError(f"duplicate pattern id {pid!r} in seed file")
            seen_ids.add(pid)
            entry.add(PatternDescription(
                id=pid, text=text, species=name, provenance=PROV_FIXED_SEED,
                quality=quality(text), admission_novelty=None, created_iteration=0))
    kb.revision = 1
    return kb


def stats(kb: KnowledgeBase) -> KbStats:
    per_species = {s: len(e.patterns) for s, e in sorted(kb.entries.items())}
    per_prov: dict[str, int] = {}
    for entry in kb.entries.values():
        for p in entry.patterns:
            per_prov[p.provenance] = per_prov.get(p.provenance, 0) + 1
    return KbStats(total_patterns=kb.total_patterns(),
                   per_species_counts=per_species,
                   per_provenance_counts=per_prov)


def save(kb: KnowledgeBase, path) -> None:
    """Write the KB as JSON, atomically (write temp, then rename)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "revision": kb.revision,
        "gate": {
            "quality_threshold": kb.gate.quality_threshold,
            "novelty_threshold": kb.gate.novelty_threshold,
        },
        "species": [
            {
                "name": s,
                "patterns": [
                    {
                        "id": p.id,
                        "text": p.text,
                        "provenance": p.provenance,
                        "quality": p.quality,
                        "admission_novelty": p.admission_novelty,
                        "created_iteration": p.created_iteration,
                    }
                    for p in kb.entries[s].patterns
                ],
            }
            for s in sorted(kb.entries)
        ],
    }
    path = str(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kb-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> KnowledgeBase:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as exc:
        raise KbError(f"cannot read KB file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise KbError(f"KB file {path} is not valid JSON: {exc}") from exc

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"KB file {path} has schema_version {version!r}, expected {SCHEMA_VERSION}")
    kb = KnowledgeBase(gate=GateConfig(**doc["gate"]))
    seen_ids = set()
    for species_doc in doc["species"]:
        name = species_doc["name"]
        entry = SpeciesEntry(species=name)
        for pat in species_doc["patterns"]:
            if pat["id"] in seen_ids:
                raise KbError(f"duplicate pattern id {pat['id']!r} in {path}")
            seen_ids.add(pat["id"])
            entry.add(PatternDescription(
                id=pat["id"],
                text=pat["text"],
                species=name,
                provenance=pat["provenance"],
                quality=pat["quality"],
                admission_novelty=pat.get("admission_novelty"),
                created_iteration=pat.get("created_iteration", 0),
            ))
        kb.entries[name] = entry
    kb.revision = doc.get("revision", 1)
    return kb
