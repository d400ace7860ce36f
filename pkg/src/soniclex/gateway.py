"""Vision-language backend gateway.

Two backends behind one interface: an OpenAI-compatible chat-completions
HTTP endpoint (one base64 PNG image part, temperature 0), and a
deterministic local mock that describes spectrogram statistics so the
whole pipeline can run seeded and offline.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Optional

import httpx
import numpy as np

from .kb import PROV_VLM_LEARNED, PatternDescription
from .resources import prompt_text
from .spectro import SpectrogramImage, SpectrogramMatrix

logger = logging.getLogger("soniclex.gateway")

API_KEY_ENV = "SONICLEX_API_KEY"
MAX_PATTERN_CHARS = 500

PURPOSE_EXTRACT = "extract"
PURPOSE_DIRECT = "direct_classify"

KIND_HTTP = "http_openai_compatible"
KIND_MOCK = "mock"

# mock rule-table knobs
SILENCE_MARGIN_DB = 15.0          # max within this of the floor means no signal
BAND_ENERGY_FRACTION = 0.5        # -3 dB contiguous band around the peak bin
PULSE_DEPTH_FRACTION = 0.25       # min modulation depth before peaks count
PULSE_PEAK_LEVEL = 0.5            # peaks must clear min + 0.5 * range
ACTIVE_FRAME_FRACTION = 0.1       # frames this far above silence carry the drift
SWEEP_MIN_DRIFT_HZ = 400.0
SWEEP_DRIFT_VS_BAND = 0.6
BROADBAND_SPAN_FRACTION = 0.5

_CONTROL_RE = re.compile(r"[\x00-\x1f\x7f]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


class GatewayError(Exception):
    pass


class EmptyResponseError(GatewayError):
    """Backend returned no usable text; the caller should skip the sample."""


class BackendUnavailableError(GatewayError):
    """Timeout or retryable HTTP status, retries exhausted."""


class BackendRequestError(GatewayError):
    """Non-retryable HTTP failure."""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    purpose: str

    def __post_init__(self):
        if not self.body.strip():
            raise ValueError("prompt body is empty")
        if self.purpose not in (PURPOSE_EXTRACT, PURPOSE_DIRECT):
            raise ValueError(f"unknown prompt purpose: {self.purpose}")
        if self.purpose == PURPOSE_DIRECT and "{species_list}" not in self.body:
            raise ValueError("direct_classify prompt must reference {species_list}")


def default_extract_template() -> PromptTemplate:
    return PromptTemplate(name="extract", body=prompt_text("prompt_extract.txt"),
                          purpose=PURPOSE_EXTRACT)


def default_direct_template() -> PromptTemplate:
    return PromptTemplate(name="direct_classify",
                          body=prompt_text("prompt_direct_classify.txt"),
                          purpose=PURPOSE_DIRECT)


@dataclass(frozen=True)
class BackendConfig:
    kind: str = KIND_MOCK
    endpoint_url: str = ""
    model_name: str = "mock"
    timeout_s: float = 30.0
    max_retries: int = 2
    max_in_flight: int = 4
    retry_backoff_s: float = 0.25
    rng_seed: int = 0  # drives the mock's direct-classification answers

    def __post_init__(self):
        if self.kind not in (KIND_HTTP, KIND_MOCK):
            raise ValueError(f"unknown backend kind: {self.kind}")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.kind == KIND_HTTP and not self.endpoint_url:
            raise ValueError("http backend requires endpoint_url")


@dataclass(frozen=True)
class DirectClassification:
    label: str
    unparsed: bool
    raw_reply: str


_limiters: dict[tuple[str, int], threading.BoundedSemaphore] = {}
_limiters_lock = threading.Lock()


def _limiter(backend: BackendConfig) -> threading.BoundedSemaphore:
    key = (backend.endpoint_url, backend.max_in_flight)
    with _limiters_lock:
        sem = _limiters.get(key)
        if sem is None:
            sem = threading.BoundedSemaphore(backend.max_in_flight)
            _limiters[key] = sem
        return sem


def _fmt_num(x: float) -> str:
    s = f"{x:.1f}"
    return s[:-2] if s.endswith(".0") else s


def mock_describe(matrix: SpectrogramMatrix) -> str:
    """Deterministic description from matrix statistics.

    Dominant contiguous frequency band, pulse rate from time-marginal
    energy peaks, peak-bin drift for sweep detection, and band span for
    the broadband call. Equal matrices always yield equal text.
    """
    values = matrix.values
    if float(values.max()) <= matrix.log_floor_db + SILENCE_MARGIN_DB:
        return "silence with no detectable band"

    power = 10.0 ** (values / 10.0)
    bin_energy = power.mean(axis=1)
    peak_bin = int(np.argmax(bin_energy))
    threshold = BAND_ENERGY_FRACTION * bin_energy[peak_bin]
    lo_bin = peak_bin
    while lo_bin > 0 and bin_energy[lo_bin - 1] >= threshold:
        lo_bin -= 1
    hi_bin = peak_bin
    while hi_bin < bin_energy.size - 1 and bin_energy[hi_bin + 1] >= threshold:
        hi_bin += 1
    lo_hz = lo_bin * matrix.freq_resolution_hz
    hi_hz = hi_bin * matrix.freq_resolution_hz

    frame_energy = power.sum(axis=0)
    e_min = float(frame_energy.min())
    e_max = float(frame_energy.max())
    rate = 0.0
    if e_max > 0 and (e_max - e_min) / e_max >= PULSE_DEPTH_FRACTION:
        level = e_min + PULSE_PEAK_LEVEL * (e_max - e_min)
        peaks = 0
        for t in range(1, frame_energy.size - 1):
            if (frame_energy[t - 1] < frame_energy[t] >= frame_energy[t + 1]
                    and frame_energy[t] >= level):
                peaks += 1
        duration_s = frame_energy.size * matrix.time_resolution_s
        if duration_s > 0:
            rate = round(peaks / duration_s, 1)

    active = frame_energy >= ACTIVE_FRAME_FRACTION * e_max
    drift_hz = 0.0
    if active.any():
        frame_peaks = np.argmax(power[:, active], axis=0)
        drift_hz = float(frame_peaks.max() - frame_peaks.min()) * matrix.freq_resolution_hz

    nyquist = matrix.sample_rate_hz / 2.0
    band_hz = hi_hz - lo_hz
    if band_hz > BROADBAND_SPAN_FRACTION * nyquist:
        shape = "broadband"
    elif drift_hz >= SWEEP_MIN_DRIFT_HZ and drift_hz >= SWEEP_DRIFT_VS_BAND * band_hz:
        shape = "sweeping"
    elif rate >= 0.8:
        shape = "pulsed"
    else:
        shape = "tonal"

    return (f"{shape} patterns at {_fmt_num(lo_hz / 1000.0)}-{_fmt_num(hi_hz / 1000.0)}"
            f" khz with {_fmt_num(rate)} pulses per second")


def _clean_response(text: str) -> str:
    """Single trimmed paragraph with control characters stripped."""
    return " ".join(_CONTROL_RE.sub(" ", text).split())


def _truncate_to_sentence(text: str, limit: int = MAX_PATTERN_CHARS) -> str:
    if len(text) <= limit:
        return text
    out: list[str] = []
    used = 0
    for sentence in _SENTENCE_SPLIT_RE.split(text):
        extra = len(sentence) + (1 if out else 0)
        if used + extra > limit:
            break
        out.append(sentence)
        used += extra
    if out:
        return " ".join(out)
    cut = text[:limit]
    space = cut.rfind(" ")
    return cut[:space] if space > 0 else cut


def _complete(backend: BackendConfig, prompt: str, image_png: bytes,
              transport: Optional[httpx.BaseTransport] = None) -> str:
    """One chat completion against the HTTP backend, with bounded retries.

    429 and 5xx are retried up to max_retries; other failures are fatal.
    At most max_retries + 1 attempts are made.
    """
    url = backend.endpoint_url.rstrip("/") + "/chat/completions"
    payload = {
        "model": backend.model_name,
        "temperature": 0,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {
                    "url": "data:image/png;base64,"
                           + base64.b64encode(image_png).decode()}},
            ],
        }],
    }
    headers = {}
    api_key = os.environ.get(API_KEY_ENV, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    logger.debug("POST %s model=%s prompt=%r (key %s)", url, backend.model_name,
                 prompt[:120], "redacted" if api_key else "absent")

    attempts = backend.max_retries + 1
    last_error = "no attempt made"
    with _limiter(backend):
        with httpx.Client(timeout=backend.timeout_s, transport=transport) as client:
            for attempt in range(attempts):
                if attempt:
                    time.sleep(backend.retry_backoff_s * attempt)
                try:
                    response = client.post(url, json=payload, headers=headers)
                except httpx.TimeoutException as exc:
                    last_error = f"timeout: {exc}"
                    continue
                except httpx.TransportError as exc:
                    last_error = f"transport error: {exc}"
                    continue
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                    continue
                if response.status_code != 200:
                    raise BackendRequestError(
                        f"backend returned HTTP {response.status_code}: "
                        f"{response.text[:200]}")
                try:
                    body = response.json()
                    content = body["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise BackendRequestError(
                        f"malformed backend response: {exc}") from exc
                logger.debug("backend reply: %r", str(content)[:200])
                return str(content)
    raise BackendUnavailableError(
        f"backend unavailable after {attempts} attempts ({last_error})")


def extract_pattern(image: SpectrogramImage, template: PromptTemplate,
                    backend: BackendConfig,
                    transport: Optional[httpx.BaseTransport] = None,
                    ) -> PatternDescription:
    """Stage 1: ask the backend for a pattern description of one image.

    The reply is normalized to a single paragraph of at most 500 chars
    (truncated at a sentence boundary) with provenance vlm_learned and
    quality left at 0 until the knowledge base scores it.
    """
    if template.purpose != PURPOSE_EXTRACT:
        raise ValueError(f"template {template.name!r} is not an extract prompt")
    if backend.kind == KIND_MOCK:
        if image.source_matrix is None:
            raise ValueError("mock backend needs an image with its source matrix")
        raw = mock_describe(image.source_matrix)
    else:
        raw = _complete(backend, template.body, image.encoding, transport)
    text = _truncate_to_sentence(_clean_response(raw))
    if not text:
        raise EmptyResponseError("backend returned empty description")
    return PatternDescription(
        id="ext-" + hashlib.sha256(text.encode()).hexdigest()[:12],
        text=text,
        species=None,
        provenance=PROV_VLM_LEARNED,
        quality=0.0,
    )


def classify_direct(image: SpectrogramImage, candidates: list[str],
                    template: PromptTemplate, backend: BackendConfig,
                    transport: Optional[httpx.BaseTransport] = None,
                    ) -> DirectClassification:
    """Vanilla baseline: the backend names the species directly.

    Free text is matched case-insensitively to the longest candidate name
    it contains as a whole word or phrase; with no match, the
    alphabetically first candidate is returned flagged unparsed. The mock
    backend answers with a seeded uniform choice so desk-scale baselines
    sit at chance level.
    """
    if template.purpose != PURPOSE_DIRECT:
        raise ValueError(f"template {template.name!r} is not a direct_classify prompt")
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if len(set(candidates)) != len(candidates):
        raise ValueError("candidates must be unique")
    ordered = sorted(candidates)

    if backend.kind == KIND_MOCK:
        key = f"{backend.rng_seed}|{image.source_matrix_digest}|{'|'.join(ordered)}"
        pick = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")
        return DirectClassification(label=ordered[pick % len(ordered)],
                                    unparsed=False, raw_reply="")

    prompt = template.body.format(species_list=", ".join(ordered))
    raw = _complete(backend, prompt, image.encoding, transport)
    reply = _clean_response(raw)
    if not reply:
        raise EmptyResponseError("backend returned empty classification")
    lowered = reply.lower()
    hits = [c for c in ordered
            if re.search(r"\b" + re.escape(c.lower()) + r"\b", lowered)]
    if hits:
        best = max(hits, key=lambda c: (len(c), c))
        return DirectClassification(label=best, unparsed=False, raw_reply=reply)
    return DirectClassification(label=ordered[0], unparsed=True, raw_reply=reply)
