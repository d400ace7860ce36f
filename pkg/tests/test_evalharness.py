import logging
import random

import numpy as np
import pytest
from scipy.stats import binom

from reference_impl import ref_pearson
from soniclex.evalharness import (CORRUPT_EVERY, DatasetEntry, EvalError,
                                  ExperimentConfig, correlation,
                                  generate_synthetic_dataset, hypothesis_test,
                                  improvement, load_manifest, run_experiment,
                                  run_grid, split_time_based)
from soniclex.gateway import BackendConfig, mock_describe
from soniclex.learner import SpectrogramCache
from soniclex.spectro import StftConfig, compute_spectrogram, load_audio


def binomial_ci(m, p, level=0.99):
    tail = (1.0 - level) / 2.0
    return binom.ppf(tail, m, p) / m, binom.ppf(1.0 - tail, m, p) / m


class TestManifest:
    def test_well_formed_rows(self, tmp_path, dataset5):
        entries = load_manifest(dataset5.manifest)
        assert len(entries) == 50
        assert all(e.audio_path.exists() for e in entries)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("audio_path,species\na.wav,X\n", encoding="utf-8")
        with pytest.raises(EvalError, match="recorded_at"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("audio_path,species,recorded_at\n"
                        "ghost.wav,X,2024-01-01T00:00:00+00:00\n",
                        encoding="utf-8")
        with pytest.raises(EvalError, match="missing audio file"):
            load_manifest(path)

    def test_bad_timestamp(self, tmp_path):
        wav = tmp_path / "a.wav"
        wav.write_bytes(b"")
        path = tmp_path / "m.csv"
        path.write_text("audio_path,species,recorded_at\na.wav,X,yesterday\n",
                        encoding="utf-8")
        with pytest.raises(EvalError, match="unparseable"):
            load_manifest(path)

    def test_duplicate_rows_kept(self, tmp_path):
        wav = tmp_path / "a.wav"
        wav.write_bytes(b"")
        path = tmp_path / "m.csv"
        row = "a.wav,X,2024-01-01T00:00:00+00:00\n"
        path.write_text("audio_path,species,recorded_at\n" + row + row,
                        encoding="utf-8")
        assert len(load_manifest(path)) == 2


def entry(species, ts, name):
    import pathlib
    return DatasetEntry(audio_path=pathlib.Path(name), species=species,
                        recorded_at=float(ts))


class TestSplit:
    def test_seventy_thirty_chronological(self):
        entries = [entry("A", 100 + i, f"{i}.wav") for i in range(10)]
        train, test = split_time_based(entries, 0.7)
        assert len(train) == 7 and len(test) == 3
        assert max(e.recorded_at for e in train) <= min(e.recorded_at for e in test)

    def test_single_entry_species_goes_to_train_with_warning(self, caplog):
        entries = [entry("A", 1, "a.wav")] + \
            [entry("B", i, f"b{i}.wav") for i in range(4)]
        with caplog.at_level(logging.WARNING):
            train, test = split_time_based(entries, 0.7)
        assert sum(1 for e in train if e.species == "A") == 1
        assert all(e.species != "A" for e in test)
        assert any("train only" in r.message for r in caplog.records)

    def test_input_order_irrelevant(self):
        entries = [entry("A", 100 + i, f"{i}.wav") for i in range(10)]
        shuffled = entries[::-1]
        assert split_time_based(entries, 0.7) == split_time_based(shuffled, 0.7)

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            split_time_based([], 1.0)


class TestSyntheticDataset:
    def test_counts(self, dataset5):
        wavs = sorted((dataset5.dir / "clips").glob("*.wav"))
        assert len(wavs) == 50
        lines = dataset5.manifest.read_text().strip().splitlines()
        assert len(lines) == 51  # header + 50 rows

    def test_same_seed_is_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_synthetic_dataset(3, 4, 99, a, clip_duration_s=1.0)
        generate_synthetic_dataset(3, 4, 99, b, clip_duration_s=1.0)
        for wav_a in sorted((a / "clips").glob("*.wav")):
            wav_b = b / "clips" / wav_a.name
            assert wav_a.read_bytes() == wav_b.read_bytes()
        assert (a / "manifest.csv").read_text() == (b / "manifest.csv").read_text()
        assert (a / "seed_kb.json").read_text() == (b / "seed_kb.json").read_text()

    def test_same_species_clips_share_band_tokens(self, dataset5):
        entries = [e for e in load_manifest(dataset5.manifest)
                   if e.species == "Species A"]
        clean = [e for i, e in enumerate(entries)
                 if i % CORRUPT_EVERY != CORRUPT_EVERY - 1]
        texts = set()
        for e in clean[:2]:
            matrix = compute_spectrogram(load_audio(e.audio_path), StftConfig())
            texts.add(mock_describe(matrix))
        assert len(texts) == 1  # same signature, same description

    def test_corrupted_clips_describe_as_silence(self, dataset5):
        entries = [e for e in load_manifest(dataset5.manifest)
                   if e.species == "Species B"]
        corrupted = entries[CORRUPT_EVERY - 1]
        matrix = compute_spectrogram(load_audio(corrupted.audio_path),
                                     StftConfig())
        assert mock_describe(matrix) == "silence with no detectable band"


class TestCorrelation:
    def test_perfect_anticorrelation(self):
        assert correlation([1, 2, 3], [3, 2, 1]) == -1.0

    def test_perfect_correlation(self):
        assert correlation([1, 2, 3], [1, 2, 3]) == 1.0

    def test_zero_variance_reported_absent(self):
        assert correlation([1, 1, 1], [1, 2, 3]) is None

    def test_matches_brute_force_on_random_pairs(self):
        rng = random.Random(8)
        xs = [rng.uniform(0, 50) for _ in range(10)]
        ys = [rng.uniform(0, 1) for _ in range(10)]
        assert correlation(xs, ys) == pytest.approx(ref_pearson(xs, ys),
                                                    abs=1e-12)

    def test_length_checks(self):
        with pytest.raises(ValueError):
            correlation([1], [1])
        with pytest.raises(ValueError):
            correlation([1, 2], [1, 2, 3])


class TestHypothesisTest:
    def test_constant_uplift_ten_pairs_exact(self):
        vanilla = [0.2] * 10
        augmented = [0.4] * 10
        result = hypothesis_test(vanilla, augmented)
        assert result.method == "exact_enumeration"
        assert result.p_value == pytest.approx(1 / 1024)
        assert result.reject_h0

    def test_identical_pairs_never_reject(self):
        vanilla = [0.3, 0.2, 0.25, 0.4, 0.35, 0.3]
        result = hypothesis_test(vanilla, list(vanilla))
        assert result.p_value == pytest.approx(1.0)
        assert not result.reject_h0

    def test_alternating_signs_zero_mean_never_reject(self):
        vanilla = [0.2, 0.3, 0.2, 0.3, 0.2]
        augmented = [0.3, 0.2, 0.3, 0.2, 0.2]  # diffs +.1 -.1 +.1 -.1 0
        result = hypothesis_test(vanilla, augmented)
        assert not result.reject_h0

    def test_minimum_pairs_enforced(self):
        with pytest.raises(ValueError):
            hypothesis_test([0.1] * 4, [0.2] * 4)

    def test_monte_carlo_path_is_seeded(self):
        rng = random.Random(0)
        vanilla = [rng.random() for _ in range(20)]
        augmented = [v + rng.uniform(-0.05, 0.15) for v in vanilla]
        a = hypothesis_test(vanilla, augmented, resamples=2000, seed=5)
        b = hypothesis_test(vanilla, augmented, resamples=2000, seed=5)
        assert a.method == "monte_carlo"
        assert a.p_value == b.p_value


class TestImprovement:
    def test_relative_and_absolute(self):
        rel, abs_points = improvement(0.203, 0.318)
        assert rel == pytest.approx(56.65, abs=0.01)
        assert abs_points == pytest.approx(0.115)

    def test_zero_base(self):
        rel, abs_points = improvement(0.0, 0.25)
        assert rel is None
        assert abs_points == 0.25


@pytest.fixture(scope="module")
def eval_cache():
    return SpectrogramCache()


class TestRunExperiment:
    def test_vanilla_sits_at_chance(self, chance_dataset5, eval_cache):
        cfg = ExperimentConfig(n_way=5, samples_per_round=1, system="vanilla",
                               iterations=0, rng_seed=123)
        result = run_experiment(cfg, chance_dataset5.manifest,
                                chance_dataset5.seed_kb, BackendConfig(),
                                cache=eval_cache)
        m = int(np.sum(result.confusion))
        assert m >= 100
        lo, hi = binomial_ci(m, 1 / 5)
        assert lo <= result.accuracy <= hi

    def test_confusion_consistency(self, dataset5, eval_cache):
        cfg = ExperimentConfig(n_way=5, samples_per_round=3, system="fixed",
                               iterations=2, rng_seed=3)
        result = run_experiment(cfg, dataset5.manifest, dataset5.seed_kb,
                                BackendConfig(), cache=eval_cache)
        confusion = np.array(result.confusion)
        entries = load_manifest(dataset5.manifest)
        subset = [e for e in entries if e.species in result.species]
        _, test = split_time_based(subset, cfg.split_fraction)
        per_species_test = {s: sum(1 for e in test if e.species == s)
                            for s in result.species}
        for i, s in enumerate(result.species):
            assert confusion[i].sum() == per_species_test[s]
        assert result.accuracy == pytest.approx(
            np.trace(confusion) / confusion.sum())

    def test_fixed_curve_is_flat(self, dataset5, eval_cache):
        cfg = ExperimentConfig(n_way=5, samples_per_round=3, system="fixed",
                               iterations=3, rng_seed=3)
        result = run_experiment(cfg, dataset5.manifest, dataset5.seed_kb,
                                BackendConfig(), cache=eval_cache)
        sizes = {size for _, size, _ in result.learning_curve}
        assert len(sizes) == 1

    def test_progressive_has_no_split_leakage(self, dataset5, eval_cache):
        cfg = ExperimentConfig(n_way=5, samples_per_round=3,
                               system="progressive", iterations=2, rng_seed=9)
        result = run_experiment(cfg, dataset5.manifest, dataset5.seed_kb,
                                BackendConfig(), cache=eval_cache)
        assert set(result.train_digests).isdisjoint(result.test_digests)
        assert set(result.learned_from_digests) <= set(result.train_digests)

    def test_n_way_larger_than_manifest_rejected(self, dataset5, eval_cache):
        cfg = ExperimentConfig(n_way=9, samples_per_round=1, system="vanilla",
                               rng_seed=0)
        with pytest.raises(EvalError):
            run_experiment(cfg, dataset5.manifest, dataset5.seed_kb,
                           BackendConfig(), cache=eval_cache)

    def test_result_json_written(self, dataset5, eval_cache, tmp_path):
        cfg = ExperimentConfig(n_way=5, samples_per_round=1, system="vanilla",
                               iterations=0, rng_seed=4)
        out = tmp_path / "result.json"
        run_experiment(cfg, dataset5.manifest, dataset5.seed_kb,
                       BackendConfig(), cache=eval_cache, out_path=out)
        import json
        doc = json.loads(out.read_text())
        assert doc["config"]["system"] == "vanilla"
        assert 0.0 <= doc["accuracy"] <= 1.0


class TestRunGrid:
    def test_identical_runs_produce_identical_csv(self, dataset5, tmp_path):
        csvs = []
        for run_dir in ("g1", "g2"):
            summary = run_grid(dataset5.manifest, dataset5.seed_kb,
                               BackendConfig(),
                               systems=["vanilla", "fixed", "progressive"],
                               n_ways=[5], samples_per_round=[3],
                               seeds=[1, 2], iterations=2,
                               out_dir=tmp_path / run_dir)
            csvs.append((tmp_path / run_dir / "summary.csv").read_bytes())
        assert csvs[0] == csvs[1]

    def test_grid_cell_structure_and_improvement(self, dataset5, tmp_path):
        summary = run_grid(dataset5.manifest, dataset5.seed_kb, BackendConfig(),
                           systems=["vanilla", "progressive"], n_ways=[5],
                           samples_per_round=[1, 3], seeds=[1], iterations=1)
        assert len(summary.rows) == 4  # 2 systems x 2 k x 1 seed
        cells = {(c["n_way"], c["system"]): c for c in summary.cells}
        vanilla = cells[(5, "vanilla")]
        prog = cells[(5, "progressive")]
        assert vanilla["improvement_rel_pct"] is None
        rel, abs_points = improvement(vanilla["mean_accuracy"],
                                      prog["mean_accuracy"])
        assert prog["improvement_rel_pct"] == pytest.approx(rel)
        assert prog["improvement_abs_points"] == pytest.approx(abs_points)

    def test_two_identical_seeds_have_zero_std(self, dataset5):
        summary = run_grid(dataset5.manifest, dataset5.seed_kb, BackendConfig(),
                           systems=["fixed"], n_ways=[5], samples_per_round=[3],
                           seeds=[21, 22], iterations=1)
        cell = summary.cells[0]
        # fixed-system accuracy is deterministic given the dataset
        assert cell["std_accuracy"] == pytest.approx(0.0)
