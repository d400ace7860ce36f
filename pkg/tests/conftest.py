import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # reference_impl

from soniclex.evalharness import generate_synthetic_dataset
from soniclex.spectro import AudioClip, StftConfig, compute_spectrogram


def _dataset(tmp_path_factory, name, n_species, clips, seed, duration=3.0):
    out = tmp_path_factory.mktemp(name)
    manifest = generate_synthetic_dataset(n_species, clips, seed, out,
                                          clip_duration_s=duration)
    return SimpleNamespace(dir=out, manifest=manifest,
                           seed_kb=out / "seed_kb.json")


@pytest.fixture(scope="session")
def dataset5(tmp_path_factory):
    """The desk-scale 5-way set: 10 clips per species, seed 42."""
    return _dataset(tmp_path_factory, "synth5", 5, 10, 42)


@pytest.fixture(scope="session")
def dataset10(tmp_path_factory):
    return _dataset(tmp_path_factory, "synth10", 10, 10, 42)


@pytest.fixture(scope="session")
def chance_dataset5(tmp_path_factory):
    """5 species x 70 clips (1 s each) -> 105 test items at a 0.7 split."""
    return _dataset(tmp_path_factory, "chance5", 5, 70, 7, duration=1.0)


@pytest.fixture(scope="session")
def chance_dataset10(tmp_path_factory):
    """10 species x 34 clips (1 s each) -> 100 test items at a 0.7 split."""
    return _dataset(tmp_path_factory, "chance10", 10, 34, 7, duration=1.0)


def sine_clip(freq_hz=1000.0, fs=16000, duration_s=1.0, amplitude=0.5):
    t = np.arange(int(fs * duration_s)) / fs
    return AudioClip(samples=amplitude * np.sin(2 * np.pi * freq_hz * t),
                     sample_rate_hz=fs)


@pytest.fixture
def sine_matrix():
    return compute_spectrogram(sine_clip(), StftConfig(window_len=512, hop_len=256))
