"""TF-IDF n-gram similarity engine and species-level classification.

Pattern texts are tokenized into 1-3-grams (stop words removed first),
weighted by smoothed IDF, and compared by cosine. Species are ranked by
0.6 * best-pattern similarity + 0.3 * mean similarity + 0.1 * diversity,
where diversity is the mean pairwise dissimilarity of a species' stored
patterns.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional

from .resources import stop_words as default_stop_words

if TYPE_CHECKING:  # avoid a runtime cycle; kb imports this module
    from .kb import KnowledgeBase

NGRAM_RANGE = (1, 3)
WEIGHT_MAX = 0.6
WEIGHT_MEAN = 0.3
WEIGHT_DIVERSITY = 0.1

# lowercase alphanumeric runs; internal hyphens glue tokens like "2-8"
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


class SimilarityError(Exception):
    pass


class EmptyKnowledgeBaseError(SimilarityError):
    """No patterns to index; callers should fall back to direct classification."""


class StaleIndexError(SimilarityError):
    """Index was built from a different KB revision than the snapshot."""


def tokenize(text: str, stop_words: Optional[frozenset[str]] = None,
             ngram_range: tuple[int, int] = NGRAM_RANGE) -> list[str]:
    """Lowercase word tokens with stop words dropped, then all n-grams.

    Stop words are removed before n-gram formation, so n-grams span the
    gaps they leave. Numeric and unit tokens ("2-8", "khz") survive.
    """
    if stop_words is None:
        stop_words = default_stop_words()
    words = [w for w in _TOKEN_RE.findall(text.lower()) if w not in stop_words]
    lo, hi = ngram_range
    terms: list[str] = []
    for n in range(lo, hi + 1):
        terms.extend(" ".join(words[i:i + n]) for i in range(len(words) - n + 1))
    return terms


@dataclass(frozen=True)
class TermVector:
    weights: Mapping[int, float]  # column id -> tf * idf
    norm: float

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("term weights must be nonnegative")


@dataclass
class TfIdfIndex:
    vocabulary: dict[str, int]
    idf: dict[int, float]
    doc_count: int
    kb_revision: int
    ngram_range: tuple[int, int] = NGRAM_RANGE
    stop_words: frozenset[str] = field(default_factory=default_stop_words)
    pattern_vectors: dict[str, TermVector] = field(default_factory=dict)


def _vector_from_counts(index: TfIdfIndex, counts: Mapping[str, float]) -> TermVector:
    weights: dict[int, float] = {}
    for term, count in counts.items():
        col = index.vocabulary.get(term)
        if col is not None:
            weights[col] = count * index.idf[col]
    norm = math.sqrt(sum(w * w for w in weights.values()))
    return TermVector(weights=weights, norm=norm)


def vectorize(index: TfIdfIndex, text: str) -> TermVector:
    """Raw term counts times IDF; out-of-vocabulary terms are dropped."""
    counts = Counter(tokenize(text, index.stop_words, index.ngram_range))
    return _vector_from_counts(index, counts)


def cosine(a: TermVector, b: TermVector) -> float:
    if a.norm == 0.0 or b.norm == 0.0:
        return 0.0
    # summing over sorted common columns keeps cosine(a, b) == cosine(b, a)
    # bit-for-bit
    common = sorted(a.weights.keys() & b.weights.keys())
    dot = sum(a.weights[col] * b.weights[col] for col in common)
    return min(1.0, max(0.0, dot / (a.norm * b.norm)))


def build_index(kb_snapshot: "KnowledgeBase",
                stop_words: Optional[frozenset[str]] = None) -> TfIdfIndex:
    """Index every pattern text in the KB, all species pooled.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, which stays positive on tiny
    corpora.
    """
    if stop_words is None:
        stop_words = default_stop_words()
    docs: list[tuple[str, list[str]]] = []
    for species in sorted(kb_snapshot.entries):
        for pattern in kb_snapshot.entries[species].patterns:
            docs.append((pattern.id, tokenize(pattern.text, stop_words)))
    if not docs:
        raise EmptyKnowledgeBaseError("knowledge base has no patterns to index")

    df: Counter[str] = Counter()
    for _, terms in docs:
        df.update(set(terms))
    vocabulary = {term: col for col, term in enumerate(sorted(df))}
    n = len(docs)
    idf = {vocabulary[t]: math.log((1 + n) / (1 + df[t])) + 1.0 for t in df}
    index = TfIdfIndex(vocabulary=vocabulary, idf=idf, doc_count=n,
                       kb_revision=kb_snapshot.revision, stop_words=stop_words)
    for pattern_id, terms in docs:
        index.pattern_vectors[pattern_id] = _vector_from_counts(index, Counter(terms))
    return index


@dataclass(frozen=True)
class SpeciesScore:
    species: str
    max_sim: float
    mean_sim: float
    diversity: float
    total: float


@dataclass(frozen=True)
class ClassificationResult:
    predicted: str
    ranked: list[SpeciesScore]
    query_pattern: str


def _pattern_vector(index: TfIdfIndex, pattern) -> TermVector:
    vec = index.pattern_vectors.get(pattern.id)
    if vec is None:
        # pattern admitted after the index snapshot; vectorize on the fly
        vec = vectorize(index, pattern.text)
        index.pattern_vectors[pattern.id] = vec
    return vec


def species_scores(index: TfIdfIndex, kb_snapshot: "KnowledgeBase",
                   query_text: str) -> list[SpeciesScore]:
    """Ranked per-species scores (descending total, species name breaks ties)."""
    if index.kb_revision != kb_snapshot.revision:
        raise StaleIndexError(
            f"index revision {index.kb_revision} != KB revision {kb_snapshot.revision}")
    query = vectorize(index, query_text)
    scores = []
    for species in sorted(kb_snapshot.entries):
        patterns = kb_snapshot.entries[species].patterns
        if not patterns:
            scores.append(SpeciesScore(species, 0.0, 0.0, 0.0, 0.0))
            continue
        vecs = [_pattern_vector(index, p) for p in patterns]
        sims = [cosine(query, v) for v in vecs]
        max_sim = max(sims)
        mean_sim = sum(sims) / len(sims)
        diversity = _diversity(vecs)
        scores.append(SpeciesScore(species, max_sim, mean_sim, diversity,
                                   aggregate_score(max_sim, mean_sim, diversity)))
    scores.sort(key=lambda s: (-s.total, s.species))
    return scores


def aggregate_score(max_sim: float, mean_sim: float, diversity: float) -> float:
    """Species-level score: 0.6 * max + 0.3 * mean + 0.1 * diversity."""
    return WEIGHT_MAX * max_sim + WEIGHT_MEAN * mean_sim + WEIGHT_DIVERSITY * diversity


def _diversity(vecs: list[TermVector]) -> float:
    """Mean pairwise dissimilarity; 0 for a single-pattern species."""
    if len(vecs) < 2:
        return 0.0
    total = 0.0
    pairs = 0
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            total += 1.0 - cosine(vecs[i], vecs[j])
            pairs += 1
    return total / pairs


def classify(index: TfIdfIndex, kb_snapshot: "KnowledgeBase",
             query_text: str) -> ClassificationResult:
    ranked = species_scores(index, kb_snapshot, query_text)
    if not ranked:
        raise EmptyKnowledgeBaseError("knowledge base has no species")
    return ClassificationResult(predicted=ranked[0].species, ranked=ranked,
                                query_pattern=query_text)
