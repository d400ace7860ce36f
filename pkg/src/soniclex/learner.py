"""Progressive knowledge accumulation loop.

Each iteration samples K training clips per selected species, extracts a
pattern description for each via the gateway, pushes it through the
quality/novelty gate, and rebuilds the similarity index once at the end.
All sampling is seeded, so mock-backend runs are fully reproducible.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from . import kb as kbmod
from . import similarity
from .gateway import (BackendConfig, GatewayError, PromptTemplate,
                      default_extract_template, extract_pattern)
from .kb import GateConfig, KnowledgeBase
from .spectro import (SpectrogramImage, StftConfig, compute_spectrogram,
                      load_audio, render_spectrogram)

logger = logging.getLogger("soniclex.learner")

RENDER_SIZE = 512


class LearnerError(Exception):
    pass


class IterationFailedError(LearnerError):
    """Every sample in an iteration failed at the backend."""


@dataclass(frozen=True)
class LearnConfig:
    iterations: int = 3
    samples_per_species: int = 3
    species_sample_size: Union[int, str] = "all"
    rng_seed: int = 0
    backend: BackendConfig = field(default_factory=BackendConfig)
    gate: Optional[GateConfig] = None  # None keeps the KB's own gate
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.samples_per_species < 1:
            raise ValueError("samples_per_species must be >= 1")
        if isinstance(self.species_sample_size, str) and \
                self.species_sample_size != "all":
            raise ValueError("species_sample_size must be an integer or 'all'")


@dataclass
class SpeciesIterationStats:
    proposed: int = 0
    accepted: int = 0
    rejected_quality: int = 0
    rejected_novelty: int = 0
    failed: int = 0
    sample_digests: list[str] = field(default_factory=list)


@dataclass
class IterationReport:
    iteration: int
    proposed: int
    accepted: int
    rejected_quality: int
    rejected_novelty: int
    failed: int
    kb_size_after: int
    per_species: dict[str, SpeciesIterationStats]

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "proposed": self.proposed,
            "accepted": self.accepted,
            "rejected_quality": self.rejected_quality,
            "rejected_novelty": self.rejected_novelty,
            "failed": self.failed,
            "kb_size_after": self.kb_size_after,
            "per_species": {
                s: {
                    "proposed": st.proposed,
                    "accepted": st.accepted,
                    "rejected_quality": st.rejected_quality,
                    "rejected_novelty": st.rejected_novelty,
                    "failed": st.failed,
                }
                for s, st in sorted(self.per_species.items())
            },
        }


@dataclass
class ProposalOutcome:
    """One gate decision, retained for review queues and audits."""
    species: str
    text: str
    quality: float
    novelty: float
    accepted: bool
    reason: Optional[str]
    sample_digest: str
    image: Optional[SpectrogramImage] = None


@dataclass
class LearnResult:
    kb: KnowledgeBase
    reports: list[IterationReport]
    index: Optional[similarity.TfIdfIndex]
    failure: Optional[str] = None


class SpectrogramCache:
    """Spectrograms keyed by (audio content digest, STFT config)."""

    def __init__(self):
        self._digests: dict[str, str] = {}
        self._images: dict[tuple, SpectrogramImage] = {}

    def audio_digest(self, path) -> str:
        path = str(path)
        digest = self._digests.get(path)
        if digest is None:
            with open(path, "rb") as f:
                digest = hashlib.sha256(f.read()).hexdigest()
            self._digests[path] = digest
        return digest

    def image_for(self, path, stft: StftConfig) -> tuple[str, SpectrogramImage]:
        digest = self.audio_digest(path)
        key = (digest, stft.cache_key())
        image = self._images.get(key)
        if image is None:
            clip = load_audio(path)
            matrix = compute_spectrogram(clip, stft)
            image = render_spectrogram(matrix, RENDER_SIZE, RENDER_SIZE)
            self._images[key] = image
        return digest, image


def _select_species(train_set: Mapping[str, Sequence], cfg: LearnConfig,
                    rng: random.Random) -> list[str]:
    names = sorted(train_set)
    if cfg.species_sample_size == "all" or cfg.species_sample_size >= len(names):
        return names
    return sorted(rng.sample(names, cfg.species_sample_size))


def run_iteration(kb: KnowledgeBase, train_set: Mapping[str, Sequence],
                  cfg: LearnConfig, iteration_index: int,
                  index: Optional[similarity.TfIdfIndex] = None,
                  cache: Optional[SpectrogramCache] = None,
                  template: Optional[PromptTemplate] = None,
                  commit: bool = True,
                  outcomes: Optional[list[ProposalOutcome]] = None,
                  ) -> tuple[IterationReport, Optional[similarity.TfIdfIndex]]:
    """One pass of the accumulation loop.

    Proposals are admitted against the start-of-iteration index (novelty
    additionally sees patterns accepted earlier in the same iteration);
    the index is rebuilt once at the end. With commit=False the gate is
    evaluated but nothing is written, so callers can queue candidates for
    expert review instead.

    Returns the report and the end-of-iteration index.
    """
    cache = cache or SpectrogramCache()
    template = template or default_extract_template()
    rng = random.Random(f"{cfg.rng_seed}:{iteration_index}")
    if index is None and kb.total_patterns() > 0:
        index = similarity.build_index(kb)

    per_species: dict[str, SpeciesIterationStats] = {}
    attempted = 0
    failed_total = 0
    for species in _select_species(train_set, cfg, rng):
        pool = list(train_set[species])
        if not pool:
            continue
        stats = per_species.setdefault(species, SpeciesIterationStats())
        k = min(cfg.samples_per_species, len(pool))
        picks = sorted(rng.sample(range(len(pool)), k))
        for pick in picks:
            attempted += 1
            path = pool[pick]
            try:
                digest, image = cache.image_for(path, cfg.stft)
                described = extract_pattern(image, template, cfg.backend)
            except (GatewayError, OSError) as exc:
                logger.warning("sample %s failed: %s", path, exc)
                stats.failed += 1
                failed_total += 1
                continue
            stats.sample_digests.append(digest)
            if commit:
                result = kbmod.propose_pattern(kb, species, described.text,
                                               iteration_index, index=index)
                q, n, accepted, reason = (result.quality, result.novelty,
                                          result.accepted, result.reason)
            else:
                q, n, reason = kbmod.evaluate_gate(kb, species, described.text,
                                                   index=index)
                accepted = reason is None
            stats.proposed += 1
            if accepted:
                stats.accepted += 1
            elif reason == kbmod.REASON_LOW_QUALITY:
                stats.rejected_quality += 1
            else:
                stats.rejected_novelty += 1
            if outcomes is not None:
                outcomes.append(ProposalOutcome(
                    species=species, text=described.text, quality=q, novelty=n,
                    accepted=accepted, reason=reason, sample_digest=digest,
                    image=image))

    if attempted > 0 and failed_total == attempted:
        raise IterationFailedError(
            f"iteration {iteration_index}: all {attempted} samples failed")

    if commit and kb.total_patterns() > 0:
        index = similarity.build_index(kb)

    report = IterationReport(
        iteration=iteration_index,
        proposed=sum(s.proposed for s in per_species.values()),
        accepted=sum(s.accepted for s in per_species.values()),
        rejected_quality=sum(s.rejected_quality for s in per_species.values()),
        rejected_novelty=sum(s.rejected_novelty for s in per_species.values()),
        failed=failed_total,
        kb_size_after=kb.total_patterns(),
        per_species=per_species,
    )
    return report, index


def run(kb: KnowledgeBase, train_set: Mapping[str, Sequence],
        cfg: LearnConfig, cache: Optional[SpectrogramCache] = None) -> LearnResult:
    """Run all iterations; on an iteration failure return partial results."""
    if cfg.gate is not None:
        kb.set_gate(cfg.gate)
    cache = cache or SpectrogramCache()
    template = default_extract_template()
    index = similarity.build_index(kb) if kb.total_patterns() > 0 else None
    reports: list[IterationReport] = []
    for t in range(1, cfg.iterations + 1):
        try:
            report, index = run_iteration(kb, train_set, cfg, t, index=index,
                                          cache=cache, template=template)
        except IterationFailedError as exc:
            logger.error("aborting run: %s", exc)
            return LearnResult(kb=kb, reports=reports, index=index,
                               failure=str(exc))
        reports.append(report)
    return LearnResult(kb=kb, reports=reports, index=index)
