"""Experiment harness: manifests, splits, synthetic data, and the
three-system comparison grid.

Systems: vanilla (direct backend classification, no KB), fixed (seed KB
only), progressive (seed KB plus gated learning before test
classification). Accuracy, confusion, learning curves, Pearson
correlation, and a paired sign-flip permutation test are reported.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import random
import wave
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kb as kbmod
from . import similarity
from .gateway import (BackendConfig, GatewayError, default_direct_template,
                      default_extract_template, classify_direct, extract_pattern)
from .kb import KnowledgeBase, init_fixed
from .learner import LearnConfig, SpectrogramCache, run_iteration
from .spectro import StftConfig

logger = logging.getLogger("soniclex.eval")

SYSTEM_VANILLA = "vanilla"
SYSTEM_FIXED = "fixed"
SYSTEM_PROGRESSIVE = "progressive"
SYSTEMS = (SYSTEM_VANILLA, SYSTEM_FIXED, SYSTEM_PROGRESSIVE)

FAILURE_BUDGET = 0.2  # abort an experiment when more than 20% of calls fail

MANIFEST_COLUMNS = ("audio_path", "species", "recorded_at")

# synthetic species cycle through these energy shapes; two species sharing a
# shape get identical seed texts, which keeps the fixed tier deliberately
# coarser than learned patterns
_SHAPE_CYCLE = ("tonal", "pulsed", "tonal", "pulsed", "sweeping",
                "broadband", "tonal", "pulsed", "sweeping", "broadband")

_SEED_TEXT_BY_SHAPE = {
    "tonal": "smooth tonal patterns holding a steady narrow tone",
    "pulsed": "pulsed patterns of regularly repeating energy bursts",
    "sweeping": "sweeping patterns with rising frequency contours",
    "broadband": "broadband patterns spanning a wide frequency range",
}

CORRUPT_EVERY = 3  # every third clip is a signal-free recording


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class DatasetEntry:
    audio_path: Path
    species: str
    recorded_at: float  # seconds since epoch


def _parse_timestamp(raw: str) -> float:
    try:
        return datetime.fromisoformat(raw.replace("Z", "+00:00")).timestamp()
    except ValueError as exc:
        raise EvalError(f"unparseable recorded_at {raw!r}: {exc}") from exc


def load_manifest(path) -> list[DatasetEntry]:
    """CSV with header audio_path,species,recorded_at (ISO-8601).

    Relative audio paths resolve against the manifest's directory.
    Duplicate rows are kept: they are legitimate repeat recordings.
    """
    path = Path(path)
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise EvalError(f"manifest {path} missing columns: {missing}")
        for row in reader:
            species = (row["species"] or "").strip()
            if not species:
                raise EvalError(f"manifest {path}: row with empty species")
            audio = Path(row["audio_path"])
            if not audio.is_absolute():
                audio = path.parent / audio
            if not audio.exists():
                raise EvalError(f"manifest {path}: missing audio file {audio}")
            entries.append(DatasetEntry(
                audio_path=audio,
                species=species,
                recorded_at=_parse_timestamp(row["recorded_at"])))
    return entries


def split_time_based(entries: Sequence[DatasetEntry], split_fraction: float,
                     ) -> tuple[list[DatasetEntry], list[DatasetEntry]]:
    """Per-species chronological split: the earliest ceil(fraction * n)
    recordings train, the rest test. Species with a single recording go
    to train only (with a warning), so the test set never sees a species
    absent from training.
    """
    if not (0.0 < split_fraction < 1.0):
        raise ValueError("split_fraction must be in (0, 1)")
    by_species: dict[str, list[DatasetEntry]] = {}
    for e in entries:
        by_species.setdefault(e.species, []).append(e)
    train: list[DatasetEntry] = []
    test: list[DatasetEntry] = []
    for species in sorted(by_species):
        group = sorted(by_species[species],
                       key=lambda e: (e.recorded_at, str(e.audio_path)))
        if len(group) < 2:
            logger.warning("species %r has %d recording(s); train only",
                           species, len(group))
            train.extend(group)
            continue
        n_train = math.ceil(split_fraction * len(group))
        train.extend(group[:n_train])
        test.extend(group[n_train:])
    return train, test


@dataclass(frozen=True)
class SpeciesSignature:
    name: str
    shape: str
    band_lo_hz: float
    band_hi_hz: float
    pulse_rate_hz: float


def synthetic_signatures(n_species: int, rng_seed: int,
                         sample_rate: int = 16000) -> list[SpeciesSignature]:
    """Distinct per-species acoustic identities, deterministic in the seed."""
    if not (1 <= n_species <= 26):
        raise ValueError("n_species must be in [1, 26]")
    nyquist = sample_rate / 2.0
    sigs = []
    pulsed_ordinal = 0
    broadband_ordinal = 0
    for i in range(n_species):
        name = f"Species {chr(ord('A') + i)}"
        shape = _SHAPE_CYCLE[i % len(_SHAPE_CYCLE)]
        jitter = random.Random(f"{rng_seed}:band:{i}").uniform(-40.0, 40.0)
        center = 600.0 + i * (0.875 * nyquist - 600.0) / max(n_species - 1, 1) + jitter
        rate = 0.0
        if shape == "pulsed":
            rate = 2.0 + 3.0 * pulsed_ordinal
            pulsed_ordinal += 1
        if shape == "sweeping":
            lo, hi = center - 400.0, center + 400.0
        elif shape == "broadband":
            lo = 600.0 + 350.0 * broadband_ordinal + jitter
            hi = min(lo + 0.72 * sample_rate / 2.0, nyquist - 200.0)
            broadband_ordinal += 1
        else:
            lo = hi = center
        sigs.append(SpeciesSignature(name=name, shape=shape, band_lo_hz=lo,
                                     band_hi_hz=hi, pulse_rate_hz=rate))
    return sigs


def _clip_rng(rng_seed: int, species_idx: int, clip_idx: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{rng_seed}:{species_idx}:{clip_idx}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _synth_samples(sig: SpeciesSignature, corrupted: bool, duration_s: float,
                   sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    n = int(duration_s * sample_rate)
    if corrupted:
        # signal-free recording: a few near-quantization-level ticks keep
        # every file (and spectrogram) unique without rising above the
        # mock's silence threshold; spacing > one STFT window so ticks
        # never stack inside a frame
        x = np.zeros(n)
        k = 6
        seg = n // (k + 1)
        jitter = max(1, min(seg // 4, (seg - 1100) // 2))
        for j in range(k):
            pos = (j + 1) * seg + int(rng.integers(-jitter, jitter + 1))
            x[pos] = float(rng.choice([-4.0, 4.0])) / 32768.0
        return x

    t = np.arange(n) / sample_rate
    if sig.shape == "tonal":
        x = 0.5 * np.sin(2 * np.pi * sig.band_lo_hz * t)
    elif sig.shape == "pulsed":
        gate = 0.5 - 0.5 * np.cos(2 * np.pi * sig.pulse_rate_hz * t)
        x = 0.5 * np.sin(2 * np.pi * sig.band_lo_hz * t) * gate
    elif sig.shape == "sweeping":
        rate = (sig.band_hi_hz - sig.band_lo_hz) / duration_s
        x = 0.5 * np.sin(2 * np.pi * (sig.band_lo_hz * t + 0.5 * rate * t * t))
    else:  # broadband: fast repeating sweep fills the band evenly
        saw = (t * 10.0) % 1.0
        inst = sig.band_lo_hz + (sig.band_hi_hz - sig.band_lo_hz) * saw
        phase = 2 * np.pi * np.cumsum(inst) / sample_rate
        x = 0.5 * np.sin(phase)
    x = x + rng.normal(0.0, 0.003, size=n)
    return np.clip(x, -1.0, 1.0)


def _write_wav(path: Path, samples: np.ndarray, sample_rate: int):
    data = np.clip(np.rint(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(data.tobytes())


def generate_synthetic_dataset(n_species: int, clips_per_species: int,
                               rng_seed: int, out_dir,
                               sample_rate: int = 16000,
                               clip_duration_s: float = 3.0) -> Path:
    """Write WAV clips, a manifest, and a shape-level seed KB.

    Every species gets a distinct signature (band, pulse rate, sweep);
    every third clip is signal-free. Identical seeds produce byte-identical
    files. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    clips_dir = out_dir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    sigs = synthetic_signatures(n_species, rng_seed, sample_rate)
    base_time = datetime(2024, 1, 1, tzinfo=timezone.utc)

    rows = []
    for i, sig in enumerate(sigs):
        for c in range(clips_per_species):
            corrupted = (c % CORRUPT_EVERY) == CORRUPT_EVERY - 1
            rng = _clip_rng(rng_seed, i, c)
            samples = _synth_samples(sig, corrupted, clip_duration_s,
                                     sample_rate, rng)
            rel = Path("clips") / f"s{i:02d}_c{c:03d}.wav"
            _write_wav(out_dir / rel, samples, sample_rate)
            stamp = base_time + timedelta(days=c, minutes=i)
            rows.append((str(rel), sig.name, stamp.isoformat()))

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)

    seed_doc = {
        "schema_version": kbmod.SCHEMA_VERSION,
        "species": [
            {"name": sig.name,
             "patterns": [{"text": _SEED_TEXT_BY_SHAPE[sig.shape]}]}
            for sig in sigs
        ],
    }
    with open(out_dir / "seed_kb.json", "w", encoding="utf-8") as f:
        json.dump(seed_doc, f, indent=2)
        f.write("\n")
    return manifest


@dataclass(frozen=True)
class ExperimentConfig:
    n_way: int
    samples_per_round: int
    system: str
    iterations: int = 3
    rng_seed: int = 0
    split_fraction: float = 0.7

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    species: list[str]
    accuracy: float
    per_species_accuracy: dict[str, float]
    pattern_count_final: int
    learning_curve: list[tuple[int, int, float]]  # (iteration, kb_size, accuracy)
    confusion: list[list[int]]
    train_digests: list[str]
    test_digests: list[str]
    learned_from_digests: list[str] = field(default_factory=list)
    partial: bool = False
    failure: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "config": {
                "n_way": self.config.n_way,
                "samples_per_round": self.config.samples_per_round,
                "system": self.config.system,
                "iterations": self.config.iterations,
                "rng_seed": self.config.rng_seed,
                "split_fraction": self.config.split_fraction,
            },
            "species": self.species,
            "accuracy": self.accuracy,
            "per_species_accuracy": self.per_species_accuracy,
            "pattern_count_final": self.pattern_count_final,
            "learning_curve": [list(p) for p in self.learning_curve],
            "confusion": self.confusion,
            "partial": self.partial,
            "failure": self.failure,
        }


class _FailureBudget:
    def __init__(self, budget_fraction: float = FAILURE_BUDGET):
        self.calls = 0
        self.failures = 0
        self.budget_fraction = budget_fraction

    def ok(self, success: bool) -> bool:
        self.calls += 1
        if not success:
            self.failures += 1
        return self.failures <= self.budget_fraction * self.calls


def _accuracy_from_confusion(confusion: np.ndarray) -> float:
    total = confusion.sum()
    return float(np.trace(confusion) / total) if total else 0.0


def _classify_with_kb(kb: KnowledgeBase, index, test: Sequence[DatasetEntry],
                      species: list[str], cache: SpectrogramCache,
                      backend: BackendConfig, text_cache: dict,
                      budget: _FailureBudget) -> Optional[np.ndarray]:
    """Confusion matrix for extract-then-match classification.

    Returns None when the failure budget is blown.
    """
    template = default_extract_template()
    col = {s: i for i, s in enumerate(species)}
    confusion = np.zeros((len(species), len(species)), dtype=int)
    snapshot = kb
    for entry in test:
        try:
            digest, image = cache.image_for(entry.audio_path, StftConfig())
            text = text_cache.get(digest)
            if text is None:
                text = extract_pattern(image, template, backend).text
                text_cache[digest] = text
            predicted = similarity.classify(index, snapshot, text).predicted
        except (GatewayError, OSError) as exc:
            logger.warning("test sample %s failed: %s", entry.audio_path, exc)
            if not budget.ok(False):
                return None
            continue
        if not budget.ok(True):
            return None
        confusion[col[entry.species], col[predicted]] += 1
    return confusion


def run_experiment(cfg: ExperimentConfig, manifest_path, seed_kb_path,
                   backend: BackendConfig,
                   cache: Optional[SpectrogramCache] = None,
                   out_path=None) -> ExperimentResult:
    """Run one system on one configuration and score the test split."""
    entries = load_manifest(manifest_path)
    all_species = sorted({e.species for e in entries})
    if cfg.n_way > len(all_species):
        raise EvalError(f"n_way={cfg.n_way} exceeds {len(all_species)} species")
    if cfg.n_way == len(all_species):
        species = all_species
    else:
        picker = random.Random(f"{cfg.rng_seed}:species")
        species = sorted(picker.sample(all_species, cfg.n_way))
    subset = [e for e in entries if e.species in species]
    train, test = split_time_based(subset, cfg.split_fraction)
    if not test:
        raise EvalError("empty test split")

    cache = cache or SpectrogramCache()
    backend = replace(backend, rng_seed=cfg.rng_seed)
    budget = _FailureBudget()
    train_digests = sorted({cache.audio_digest(e.audio_path) for e in train})
    test_digests = sorted({cache.audio_digest(e.audio_path) for e in test})
    col = {s: i for i, s in enumerate(species)}
    result = ExperimentResult(
        config=cfg, species=species, accuracy=0.0, per_species_accuracy={},
        pattern_count_final=0, learning_curve=[], confusion=[],
        train_digests=train_digests, test_digests=test_digests)

    if cfg.system == SYSTEM_VANILLA:
        template = default_direct_template()
        confusion = np.zeros((len(species), len(species)), dtype=int)
        for entry in test:
            try:
                _, image = cache.image_for(entry.audio_path, StftConfig())
                predicted = classify_direct(image, species, template, backend).label
            except (GatewayError, OSError) as exc:
                logger.warning("vanilla sample %s failed: %s", entry.audio_path, exc)
                if not budget.ok(False):
                    return _fail_partial(result, confusion, "failure budget exceeded")
                continue
            budget.ok(True)
            confusion[col[entry.species], col[predicted]] += 1
        _finalize(result, confusion, species)
        result.learning_curve = [(0, 0, result.accuracy)]
        _maybe_write(result, out_path)
        return result

    kb = init_fixed(seed_kb_path).restricted_to(species)
    if kb.total_patterns() == 0:
        raise EvalError("seed KB has no patterns for the selected species; "
                        "only the vanilla system can run without a KB")
    index = similarity.build_index(kb)
    text_cache: dict[str, str] = {}

    if cfg.system == SYSTEM_FIXED:
        confusion = _classify_with_kb(kb, index, test, species, cache, backend,
                                      text_cache, budget)
        if confusion is None:
            return _fail_partial(result, np.zeros((len(species),) * 2, dtype=int),
                                 "failure budget exceeded")
        _finalize(result, confusion, species)
        result.pattern_count_final = kb.total_patterns()
        # no learning: the curve is flat by construction
        result.learning_curve = [(t, kb.total_patterns(), result.accuracy)
                                 for t in range(cfg.iterations + 1)]
        _maybe_write(result, out_path)
        return result

    # progressive: learn on the train split, re-scoring the test set after
    # each iteration to expose the learning curve
    train_map: dict[str, list] = {s: [] for s in species}
    for entry in train:
        train_map[entry.species].append(entry.audio_path)
    learn_cfg = LearnConfig(iterations=cfg.iterations,
                            samples_per_species=cfg.samples_per_round,
                            rng_seed=cfg.rng_seed, backend=backend)
    confusion = _classify_with_kb(kb, index, test, species, cache, backend,
                                  text_cache, budget)
    if confusion is None:
        return _fail_partial(result, np.zeros((len(species),) * 2, dtype=int),
                             "failure budget exceeded")
    curve = [(0, kb.total_patterns(), _accuracy_from_confusion(confusion))]
    for t in range(1, cfg.iterations + 1):
        report, index = run_iteration(kb, train_map, learn_cfg, t, index=index,
                                      cache=cache)
        for stats in report.per_species.values():
            result.learned_from_digests.extend(stats.sample_digests)
        confusion = _classify_with_kb(kb, index, test, species, cache, backend,
                                      text_cache, budget)
        if confusion is None:
            return _fail_partial(result, np.zeros((len(species),) * 2, dtype=int),
                                 "failure budget exceeded")
        curve.append((t, kb.total_patterns(), _accuracy_from_confusion(confusion)))
    _finalize(result, confusion, species)
    result.pattern_count_final = kb.total_patterns()
    result.learning_curve = curve
    result.learned_from_digests = sorted(set(result.learned_from_digests))
    _maybe_write(result, out_path)
    return result


def _finalize(result: ExperimentResult, confusion: np.ndarray, species: list[str]):
    result.confusion = confusion.tolist()
    result.accuracy = _accuracy_from_confusion(confusion)
    per = {}
    for i, s in enumerate(species):
        row_total = confusion[i].sum()
        per[s] = float(confusion[i, i] / row_total) if row_total else 0.0
    result.per_species_accuracy = per


def _fail_partial(result: ExperimentResult, confusion: np.ndarray,
                  reason: str) -> ExperimentResult:
    result.partial = True
    result.failure = reason
    result.confusion = confusion.tolist()
    return result


def _maybe_write(result: ExperimentResult, out_path):
    if out_path is not None:
        Path(out_path).write_text(json.dumps(result.as_dict(), indent=2) + "\n",
                                  encoding="utf-8")


def improvement(base: float, value: float) -> tuple[Optional[float], float]:
    """(relative percent, absolute points) of value over base.

    Relative improvement is undefined for a zero base and reported absent.
    """
    rel = 100.0 * (value - base) / base if base > 0 else None
    return rel, value - base


def correlation(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Pearson r; None when either side has zero variance."""
    if len(xs) != len(ys):
        raise ValueError("xs and ys must have equal length")
    if len(xs) < 2:
        raise ValueError("need at least 2 pairs")
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    if vx == 0.0 or vy == 0.0:
        return None
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return cov / math.sqrt(vx * vy)


@dataclass(frozen=True)
class HypothesisTestResult:
    mean_diff: float
    p_value: float
    reject_h0: bool
    method: str
    resamples: int


def hypothesis_test(vanilla_accs: Sequence[float],
                    augmented_accs: Sequence[float],
                    resamples: int = 10000, seed: int = 0,
                    alpha: float = 0.05) -> HypothesisTestResult:
    """Paired one-sided sign-flip permutation test of H1: augmented > vanilla.

    With 2^n <= resamples the sign flips are enumerated exactly; otherwise
    a seeded Monte Carlo estimate with the add-one correction is used.
    """
    if len(vanilla_accs) != len(augmented_accs):
        raise ValueError("paired samples must have equal length")
    n = len(vanilla_accs)
    if n < 5:
        raise ValueError("need at least 5 pairs")
    diffs = [a - v for v, a in zip(vanilla_accs, augmented_accs)]
    observed = sum(diffs) / n
    tolerance = 1e-12

    if 2 ** n <= resamples:
        hits = 0
        for mask in range(2 ** n):
            total = 0.0
            for i, d in enumerate(diffs):
                total += d if (mask >> i) & 1 == 0 else -d
            if total / n >= observed - tolerance:
                hits += 1
        p = hits / 2 ** n
        method = "exact_enumeration"
        used = 2 ** n
    else:
        rng = random.Random(seed)
        hits = 0
        for _ in range(resamples):
            total = sum(d if rng.random() < 0.5 else -d for d in diffs)
            if total / n >= observed - tolerance:
                hits += 1
        p = (1 + hits) / (1 + resamples)
        method = "monte_carlo"
        used = resamples
    return HypothesisTestResult(mean_diff=observed, p_value=p,
                                reject_h0=p < alpha, method=method,
                                resamples=used)


@dataclass
class GridSummary:
    rows: list[dict]            # one per experiment
    cells: list[dict]           # aggregated per (n_way, system)
    pattern_accuracy_r: Optional[float]
    hypothesis: Optional[HypothesisTestResult]

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n_way", "system", "runs", "mean_accuracy",
                         "std_accuracy", "mean_patterns", "std_patterns",
                         "improvement_rel_pct", "improvement_abs_points"])
        for cell in self.cells:
            writer.writerow([
                cell["n_way"], cell["system"], cell["runs"],
                f"{cell['mean_accuracy']:.6f}", f"{cell['std_accuracy']:.6f}",
                f"{cell['mean_patterns']:.6f}", f"{cell['std_patterns']:.6f}",
                "" if cell["improvement_rel_pct"] is None
                else f"{cell['improvement_rel_pct']:.6f}",
                "" if cell["improvement_abs_points"] is None
                else f"{cell['improvement_abs_points']:.6f}",
            ])
        return buf.getvalue()

    def table_text(self) -> str:
        header = (f"{'n_way':>5}  {'system':<12} {'runs':>4}  "
                  f"{'accuracy':>18}  {'patterns':>16}  {'vs vanilla':>22}")
        lines = [header, "-" * len(header)]
        for cell in self.cells:
            acc = f"{cell['mean_accuracy']:.3f} +/- {cell['std_accuracy']:.3f}"
            pats = f"{cell['mean_patterns']:.1f} +/- {cell['std_patterns']:.1f}"
            if cell["improvement_rel_pct"] is None:
                imp = "-"
            else:
                imp = (f"{cell['improvement_rel_pct']:+.1f}% "
                       f"({cell['improvement_abs_points']:+.3f} abs)")
            lines.append(f"{cell['n_way']:>5}  {cell['system']:<12} "
                         f"{cell['runs']:>4}  {acc:>18}  {pats:>16}  {imp:>22}")
        if self.pattern_accuracy_r is not None:
            lines.append(f"pattern-count vs accuracy Pearson r = "
                         f"{self.pattern_accuracy_r:+.3f} (progressive runs)")
        if self.hypothesis is not None:
            h = self.hypothesis
            lines.append(f"H1 progressive > vanilla: mean diff "
                         f"{h.mean_diff:+.4f}, p = {h.p_value:.6g} "
                         f"({h.method}), reject H0 = {h.reject_h0}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.csv").write_text(self.csv_text(), encoding="utf-8")
        (out_dir / "summary.txt").write_text(self.table_text(), encoding="utf-8")


def run_grid(manifest_path, seed_kb_path, backend: BackendConfig,
             systems: Sequence[str], n_ways: Sequence[int],
             samples_per_round: Sequence[int], seeds: Sequence[int],
             iterations: int = 3, split_fraction: float = 0.7,
             out_dir=None) -> GridSummary:
    """Run the full grid and aggregate mean/std per (n_way, system) cell."""
    if not systems or not n_ways or not samples_per_round or not seeds:
        raise ValueError("grid needs at least one of each dimension")
    cache = SpectrogramCache()
    rows = []
    for n_way in sorted(n_ways):
        for system in (s for s in SYSTEMS if s in systems):
            for k in sorted(samples_per_round):
                for seed in sorted(seeds):
                    cfg = ExperimentConfig(n_way=n_way, samples_per_round=k,
                                           system=system, iterations=iterations,
                                           rng_seed=seed,
                                           split_fraction=split_fraction)
                    out_path = None
                    if out_dir is not None:
                        out_path = (Path(out_dir) /
                                    f"result_{system}_n{n_way}_k{k}_s{seed}.json")
                        Path(out_dir).mkdir(parents=True, exist_ok=True)
                    result = run_experiment(cfg, manifest_path, seed_kb_path,
                                            backend, cache=cache,
                                            out_path=out_path)
                    rows.append({
                        "n_way": n_way, "system": system, "k": k, "seed": seed,
                        "accuracy": result.accuracy,
                        "patterns": result.pattern_count_final,
                        "partial": result.partial,
                    })

    cells = []
    vanilla_mean: dict[int, float] = {}
    for n_way in sorted(n_ways):
        for system in (s for s in SYSTEMS if s in systems):
            cell_rows = [r for r in rows
                         if r["n_way"] == n_way and r["system"] == system]
            if not cell_rows:
                continue
            accs = np.array([r["accuracy"] for r in cell_rows])
            pats = np.array([float(r["patterns"]) for r in cell_rows])
            cell = {
                "n_way": n_way, "system": system, "runs": len(cell_rows),
                "mean_accuracy": float(accs.mean()),
                "std_accuracy": float(accs.std()),
                "mean_patterns": float(pats.mean()),
                "std_patterns": float(pats.std()),
                "improvement_rel_pct": None,
                "improvement_abs_points": None,
            }
            if system == SYSTEM_VANILLA:
                vanilla_mean[n_way] = cell["mean_accuracy"]
            cells.append(cell)
    for cell in cells:
        base = vanilla_mean.get(cell["n_way"])
        if base is not None and cell["system"] != SYSTEM_VANILLA:
            rel, abs_points = improvement(base, cell["mean_accuracy"])
            cell["improvement_rel_pct"] = rel
            cell["improvement_abs_points"] = abs_points

    prog_rows = [r for r in rows if r["system"] == SYSTEM_PROGRESSIVE]
    r_value = None
    if len(prog_rows) >= 2:
        r_value = correlation([r["patterns"] for r in prog_rows],
                              [r["accuracy"] for r in prog_rows])

    hyp = None
    vanilla_by_key = {(r["n_way"], r["k"], r["seed"]): r["accuracy"]
                      for r in rows if r["system"] == SYSTEM_VANILLA}
    pairs = [(vanilla_by_key[(r["n_way"], r["k"], r["seed"])], r["accuracy"])
             for r in prog_rows
             if (r["n_way"], r["k"], r["seed"]) in vanilla_by_key]
    if len(pairs) >= 5:
        hyp = hypothesis_test([p[0] for p in pairs], [p[1] for p in pairs])

    summary = GridSummary(rows=rows, cells=cells, pattern_accuracy_r=r_value,
                          hypothesis=hyp)
    if out_dir is not None:
        summary.write(out_dir)
    return summary
