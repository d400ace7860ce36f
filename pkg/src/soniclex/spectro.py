"""Audio loading, STFT spectrograms, and PNG rendering.

The front end of the pipeline: a WAV clip becomes a log-magnitude
time-frequency matrix, which is rendered to a deterministic grayscale
PNG for the vision backend.
"""

from __future__ import annotations

import hashlib
import io
import wave
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

INT16_FULL_SCALE = 32768.0
DEFAULT_MAX_CLIP_S = 30.0  # longer clips are truncated before the STFT


class SpectroError(Exception):
    pass


class UnsupportedAudioError(SpectroError):
    """Not 16-bit PCM WAV; the caller must transcode first."""


class ClipTooShortError(SpectroError):
    """Clip shorter than one analysis window."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray  # float, range [-1, 1]
    sample_rate_hz: int
    source_path: str = ""
    recorded_at: Optional[float] = None

    def __post_init__(self):
        if self.samples.size == 0:
            raise ValueError("clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    hop_len: int = 256
    window_kind: str = "hann"
    log_floor_db: float = -80.0

    def __post_init__(self):
        if self.window_len <= 0 or (self.window_len & (self.window_len - 1)) != 0:
            raise ValueError("window_len must be a positive power of two")
        if not (0 < self.hop_len <= self.window_len):
            raise ValueError("hop_len must be in (0, window_len]")
        if self.window_kind != "hann":
            raise ValueError(f"unsupported window kind: {self.window_kind}")

    def cache_key(self) -> tuple:
        return (self.window_len, self.hop_len, self.window_kind, self.log_floor_db)


@dataclass(frozen=True)
class SpectrogramMatrix:
    values: np.ndarray  # [freq_bin, time_frame], dB
    freq_resolution_hz: float
    time_resolution_s: float
    sample_rate_hz: int
    log_floor_db: float

    @property
    def freq_bins(self) -> int:
        return self.values.shape[0]

    @property
    def time_frames(self) -> int:
        return self.values.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(repr((self.values.shape, self.freq_resolution_hz,
                       self.time_resolution_s, self.sample_rate_hz,
                       self.log_floor_db)).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SpectrogramImage:
    pixels: np.ndarray  # uint8 [height, width], row 0 = top = highest freq
    encoding: bytes  # PNG
    source_matrix_digest: str
    # kept so the deterministic mock backend can read real statistics;
    # never serialized
    source_matrix: Optional[SpectrogramMatrix] = field(default=None, repr=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _read_wave(fileobj, source_path: str = "") -> AudioClip:
    try:
        with wave.open(fileobj, "rb") as wav:
            sample_width = wav.getsampwidth()
            if sample_width != 2:
                raise UnsupportedAudioError(
                    f"{source_path or 'stream'}: only 16-bit PCM WAV is supported "
                    f"(got sample width {sample_width})")
            n_channels = wav.getnchannels()
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except wave.Error as exc:
        raise UnsupportedAudioError(f"{source_path or 'stream'}: {exc}") from exc
    data = np.frombuffer(raw, dtype="<i2")
    if n_channels > 1:
        data = data.reshape(-1, n_channels)[:, 0]
    samples = data.astype(np.float64) / INT16_FULL_SCALE
    return AudioClip(samples=samples, sample_rate_hz=rate, source_path=source_path)


def load_audio(path) -> AudioClip:
    """Read a 16-bit PCM WAV file; stereo input keeps channel 0 only."""
    path = str(path)
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise SpectroError(f"cannot read {path}: {exc}") from exc
    with f:
        return _read_wave(f, source_path=path)


def load_audio_bytes(data: bytes, source_path: str = "upload.wav") -> AudioClip:
    return _read_wave(io.BytesIO(data), source_path=source_path)


def compute_spectrogram(clip: AudioClip, cfg: StftConfig = StftConfig(),
                        max_duration_s: float = DEFAULT_MAX_CLIP_S) -> SpectrogramMatrix:
    """Hann-windowed STFT magnitude in dB, clamped at cfg.log_floor_db."""
    samples = clip.samples
    max_samples = int(max_duration_s * clip.sample_rate_hz)
    if samples.size > max_samples:
        samples = samples[:max_samples]
    if samples.size < cfg.window_len:
        raise ClipTooShortError(
            f"clip has {samples.size} samples, need at least {cfg.window_len}")

    n_frames = 1 + (samples.size - cfg.window_len) // cfg.hop_len
    window = np.hanning(cfg.window_len)
    offsets = cfg.hop_len * np.arange(n_frames)[:, None]
    frames = samples[offsets + np.arange(cfg.window_len)[None, :]] * window
    mag = np.abs(np.fft.rfft(frames, axis=1))  # [frame, bin]
    floor_amp = 10.0 ** (cfg.log_floor_db / 20.0)
    values = 20.0 * np.log10(np.maximum(mag, floor_amp)).T  # [bin, frame]
    return SpectrogramMatrix(
        values=values,
        freq_resolution_hz=clip.sample_rate_hz / cfg.window_len,
        time_resolution_s=cfg.hop_len / clip.sample_rate_hz,
        sample_rate_hz=clip.sample_rate_hz,
        log_floor_db=cfg.log_floor_db,
    )


def render_spectrogram(matrix: SpectrogramMatrix, width: int = 512,
                       height: int = 512) -> SpectrogramImage:
    """Min-max normalized grayscale PNG, low frequencies at the bottom.

    Nearest-neighbor resampling; identical inputs give byte-identical PNGs.
    An all-equal matrix renders uniform mid-gray rather than erroring.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    v = matrix.values
    vmin = float(v.min())
    vmax = float(v.max())
    if vmax - vmin < 1e-12:
        pixels = np.full((height, width), 128, dtype=np.uint8)
    else:
        norm = np.rint((v - vmin) / (vmax - vmin) * 255.0).astype(np.uint8)
        rows = (np.arange(height) * v.shape[0]) // height
        cols = (np.arange(width) * v.shape[1]) // width
        pixels = norm[np.ix_(rows, cols)][::-1, :].copy()  # flip: low freq at bottom

    buf = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buf, format="PNG")
    return SpectrogramImage(
        pixels=pixels,
        encoding=buf.getvalue(),
        source_matrix_digest=matrix.digest(),
        source_matrix=matrix,
    )
