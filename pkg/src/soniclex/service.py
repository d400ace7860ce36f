"""HTTP curation service: expert review of proposed patterns, KB browsing,
classification, and review-mode learning iterations.

All KB writes funnel through one lock and are persisted atomically after
each committed change; readers see a consistent revision. Learning runs as
a single background task whose gate-evaluated proposals land in a pending
queue for the expert instead of committing directly (novelty duplicates
are dropped; quality rejects stay reviewable so the expert can overrule
the heuristic).
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from email import policy
from email.parser import BytesParser
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import kb as kbmod
from . import similarity
from .evalharness import load_manifest
from .gateway import BackendConfig
from .kb import (KbError, KnowledgeBase, PROV_EXPERT_EDITED, PROV_VLM_LEARNED,
                 PatternDescription)
from .learner import (LearnConfig, ProposalOutcome, SpectrogramCache,
                      run_iteration)
from .spectro import (SpectroError, StftConfig, compute_spectrogram,
                      load_audio_bytes, render_spectrogram)
from .gateway import (GatewayError, default_extract_template, extract_pattern)

logger = logging.getLogger("soniclex.service")

STATUS_PENDING = "pending"
STATUS_ACCEPTED = "accepted"
STATUS_REJECTED = "rejected"
STATUS_EDITED = "edited"

ACTIONS = ("accept", "reject", "edit")

THUMB_W, THUMB_H = 192, 128


@dataclass
class QueueItem:
    id: str
    species: str
    text: str
    quality: float
    novelty: float
    gate_verdict: str  # "accepted" or "rejected:<reason>"
    iteration: int
    status: str = STATUS_PENDING
    decided_by: Optional[str] = None
    decided_at: Optional[float] = None
    committed_pattern_id: Optional[str] = None
    thumbnail_png: bytes = b""

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "species": self.species,
            "text": self.text,
            "quality": self.quality,
            "novelty": self.novelty,
            "gate_verdict": self.gate_verdict,
            "iteration": self.iteration,
            "status": self.status,
            "decided_by": self.decided_by,
            "decided_at": self.decided_at,
            "committed_pattern_id": self.committed_pattern_id,
            "spectrogram_thumbnail_url": f"/api/queue/{self.id}/thumbnail",
        }


class ConflictError(Exception):
    pass


class NotFoundError(Exception):
    pass


class CurationService:
    """Owns the KB, the review queue, and the single learning task."""

    def __init__(self, kb_path, manifest_path=None,
                 backend: Optional[BackendConfig] = None,
                 stft: Optional[StftConfig] = None):
        self.kb_path = Path(kb_path)
        self.backend = backend or BackendConfig()
        self.stft = stft or StftConfig()
        self.kb = self._load_kb(self.kb_path)
        self.lock = threading.RLock()
        self.cache = SpectrogramCache()
        self.queue: dict[str, QueueItem] = {}
        self._queue_counter = 0
        self._index_cache: Optional[tuple[int, similarity.TfIdfIndex]] = None
        self.learn_running = False
        self.last_report: Optional[dict] = None
        self.last_learn_error: Optional[str] = None
        self.train_map: dict[str, list] = {}
        if manifest_path is not None:
            for entry in load_manifest(manifest_path):
                self.train_map.setdefault(entry.species, []).append(entry.audio_path)

    @staticmethod
    def _load_kb(path: Path) -> KnowledgeBase:
        try:
            return kbmod.load(path)
        except (KbError, KeyError):
            # seed-format file (learned fields absent): trusted fixed tier
            return kbmod.init_fixed(path)

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> KnowledgeBase:
        with self.lock:
            return self.kb.snapshot()

    def index_for(self, snapshot: KnowledgeBase) -> similarity.TfIdfIndex:
        with self.lock:
            cached = self._index_cache
            if cached is not None and cached[0] == snapshot.revision:
                return cached[1]
        index = similarity.build_index(snapshot)
        with self.lock:
            self._index_cache = (snapshot.revision, index)
        return index

    # -- review queue ------------------------------------------------------

    def enqueue(self, outcome: ProposalOutcome, iteration: int):
        with self.lock:
            norm = " ".join(outcome.text.split()).casefold()
            for item in self.queue.values():
                if (item.status == STATUS_PENDING and item.species == outcome.species
                        and " ".join(item.text.split()).casefold() == norm):
                    return  # identical candidate already awaiting review
            self._queue_counter += 1
            verdict = "accepted" if outcome.accepted else f"rejected:{outcome.reason}"
            thumb = b""
            if outcome.image is not None and outcome.image.source_matrix is not None:
                thumb = render_spectrogram(outcome.image.source_matrix,
                                           THUMB_W, THUMB_H).encoding
            item = QueueItem(
                id=f"q{self._queue_counter:05d}",
                species=outcome.species,
                text=outcome.text,
                quality=outcome.quality,
                novelty=outcome.novelty,
                gate_verdict=verdict,
                iteration=iteration,
                thumbnail_png=thumb,
            )
            self.queue[item.id] = item

    def review_decision(self, item_id: str, action: str,
                        edited_text: Optional[str] = None,
                        decided_by: str = "expert") -> QueueItem:
        """Expert decision; accept and edit commit to the KB, bypassing the
        automatic gate. The queue item is retained as the audit record."""
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        if action == "edit" and not (edited_text or "").strip():
            raise ValueError("edit requires non-empty edited_text")
        with self.lock:
            item = self.queue.get(item_id)
            if item is None:
                raise NotFoundError(item_id)
            if item.status != STATUS_PENDING:
                raise ConflictError(f"item {item_id} already {item.status}")
            if action == "reject":
                item.status = STATUS_REJECTED
            else:
                if action == "accept":
                    text = item.text
                    provenance = PROV_VLM_LEARNED
                    pattern_quality = item.quality
                else:
                    text = edited_text.strip()
                    provenance = PROV_EXPERT_EDITED
                    pattern_quality = kbmod.quality(text)
                pattern = PatternDescription(
                    id=kbmod._pattern_id("cur", item.species, text, item.iteration),
                    text=text,
                    species=item.species,
                    provenance=provenance,
                    quality=pattern_quality,
                    admission_novelty=item.novelty,
                    created_iteration=item.iteration,
                )
                self.kb.commit(pattern)
                kbmod.save(self.kb, self.kb_path)
                item.committed_pattern_id = pattern.id
                item.status = STATUS_ACCEPTED if action == "accept" else STATUS_EDITED
            item.decided_by = decided_by
            item.decided_at = time.time()
            return item

    # -- learning ----------------------------------------------------------

    def trigger_iteration(self, samples_per_species: int = 1,
                          species_sample_size="all", rng_seed: int = 0) -> bool:
        """Start one review-mode iteration in the background.

        Returns False when a task is already running.
        """
        with self.lock:
            if self.learn_running:
                return False
            if not self.train_map:
                raise ValueError("no manifest loaded; learning needs training audio")
            self.learn_running = True
            self.last_learn_error = None
            iteration = (self.last_report or {}).get("iteration", 0) + 1
        thread = threading.Thread(
            target=self._learn_task,
            args=(samples_per_species, species_sample_size, rng_seed, iteration),
            daemon=True)
        thread.start()
        return True

    def _learn_task(self, samples_per_species, species_sample_size, rng_seed,
                    iteration):
        try:
            snapshot = self.snapshot()
            cfg = LearnConfig(iterations=1,
                              samples_per_species=samples_per_species,
                              species_sample_size=species_sample_size,
                              rng_seed=rng_seed, backend=self.backend,
                              stft=self.stft)
            outcomes: list[ProposalOutcome] = []
            report, _ = run_iteration(snapshot, self.train_map, cfg, iteration,
                                      cache=self.cache, commit=False,
                                      outcomes=outcomes)
            index = None
            if snapshot.total_patterns() > 0:
                index = similarity.build_index(snapshot)
            for outcome in outcomes:
                if outcome.reason == kbmod.REASON_LOW_NOVELTY:
                    continue  # an exact or near duplicate is not worth review
                if outcome.reason == kbmod.REASON_LOW_QUALITY and index is not None:
                    # quality rejects short-circuit novelty; compute it so
                    # the expert sees the full picture
                    entry = snapshot.entries.get(outcome.species)
                    outcome.novelty = kbmod.novelty(outcome.text, entry, index)
                elif outcome.reason == kbmod.REASON_LOW_QUALITY:
                    outcome.novelty = 1.0
                self.enqueue(outcome, iteration)
            with self.lock:
                self.last_report = report.as_dict()
        except Exception as exc:  # surface in /api/learn/status
            logger.exception("learning iteration failed")
            with self.lock:
                self.last_learn_error = str(exc)
        finally:
            with self.lock:
                self.learn_running = False


def _multipart_file(body: bytes, content_type: str) -> Optional[bytes]:
    """Extract the first uploaded file from a multipart/form-data body."""
    head = b"MIME-Version: 1.0\r\nContent-Type: " \
           + content_type.encode("latin-1") + b"\r\n\r\n"
    msg = BytesParser(policy=policy.default).parsebytes(head + body)
    if not msg.is_multipart():
        return None
    for part in msg.iter_parts():
        if part.get_content_disposition() == "form-data" and part.get_filename():
            return part.get_payload(decode=True)
    return None


def create_app(kb_path, manifest_path=None,
               backend: Optional[BackendConfig] = None,
               ui_dir=None, stft: Optional[StftConfig] = None) -> FastAPI:
    service = CurationService(kb_path, manifest_path, backend, stft)
    app = FastAPI(title="soniclex curation service")
    app.state.service = service

    @app.get("/api/species")
    def api_species():
        with service.lock:
            st = kbmod.stats(service.kb)
        return [{"name": name, "pattern_count": count}
                for name, count in st.per_species_counts.items()]

    @app.get("/api/kb/{species}")
    def api_kb_species(species: str):
        with service.lock:
            entry = service.kb.entries.get(species)
            if entry is None:
                return JSONResponse({"error": "unknown_species"}, status_code=404)
            return {
                "species": species,
                "patterns": [{
                    "id": p.id, "text": p.text, "provenance": p.provenance,
                    "quality": p.quality, "admission_novelty": p.admission_novelty,
                    "created_iteration": p.created_iteration,
                } for p in entry.patterns],
            }

    @app.get("/api/stats")
    def api_stats():
        with service.lock:
            st = kbmod.stats(service.kb)
            return {
                "revision": service.kb.revision,
                "total_patterns": st.total_patterns,
                "per_species_counts": st.per_species_counts,
                "per_provenance_counts": st.per_provenance_counts,
                "gate": {
                    "quality_threshold": service.kb.gate.quality_threshold,
                    "novelty_threshold": service.kb.gate.novelty_threshold,
                },
                "pending_queue": sum(1 for i in service.queue.values()
                                     if i.status == STATUS_PENDING),
            }

    @app.get("/api/queue")
    def api_queue(status: str = STATUS_PENDING):
        with service.lock:
            items = sorted(service.queue.values(), key=lambda i: i.id)
            if status != "all":
                items = [i for i in items if i.status == status]
            return [i.as_dict() for i in items]

    @app.get("/api/queue/{item_id}/thumbnail")
    def api_thumbnail(item_id: str):
        with service.lock:
            item = service.queue.get(item_id)
            if item is None or not item.thumbnail_png:
                return JSONResponse({"error": "not_found"}, status_code=404)
            return Response(content=item.thumbnail_png, media_type="image/png")

    @app.post("/api/patterns/{item_id}/decision")
    async def api_decision(item_id: str, request: Request):
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "invalid_json"}, status_code=422)
        action = payload.get("action")
        try:
            item = service.review_decision(
                item_id, action,
                edited_text=payload.get("edited_text"),
                decided_by=payload.get("decided_by", "expert"))
        except NotFoundError:
            return JSONResponse({"error": "unknown_item"}, status_code=404)
        except ConflictError as exc:
            return JSONResponse({"error": "already_decided",
                                 "detail": str(exc)}, status_code=409)
        except ValueError as exc:
            return JSONResponse({"error": "invalid_request",
                                 "detail": str(exc)}, status_code=422)
        with service.lock:
            revision = service.kb.revision
        return {"item": item.as_dict(), "revision": revision}

    @app.post("/api/classify")
    async def api_classify(request: Request):
        content_type = request.headers.get("content-type", "")
        body = await request.body()
        query_text: Optional[str] = None
        if content_type.startswith("multipart/form-data"):
            wav = _multipart_file(body, content_type)
            if wav is None:
                return JSONResponse({"error": "no_file"}, status_code=422)
            try:
                clip = load_audio_bytes(wav)
                matrix = compute_spectrogram(clip, service.stft)
                image = render_spectrogram(matrix)
                query_text = extract_pattern(image, default_extract_template(),
                                             service.backend).text
            except (SpectroError, GatewayError) as exc:
                return JSONResponse({"error": "extraction_failed",
                                     "detail": str(exc)}, status_code=422)
        else:
            try:
                payload = json.loads(body or b"{}")
            except json.JSONDecodeError:
                return JSONResponse({"error": "invalid_json"}, status_code=422)
            query_text = (payload.get("text") or "").strip()
            if not query_text:
                return JSONResponse({"error": "empty_text"}, status_code=422)

        snapshot = service.snapshot()
        if snapshot.total_patterns() == 0:
            return JSONResponse({"error": "empty_kb",
                                 "detail": "seed or learn first"},
                                status_code=409)
        index = service.index_for(snapshot)
        result = similarity.classify(index, snapshot, query_text)
        return {
            "predicted": result.predicted,
            "query_pattern": result.query_pattern,
            "revision": snapshot.revision,
            "ranked": [{
                "species": s.species, "max_sim": s.max_sim,
                "mean_sim": s.mean_sim, "diversity": s.diversity,
                "total": s.total,
            } for s in result.ranked],
        }

    @app.post("/api/learn/iteration")
    async def api_learn(request: Request):
        payload = {}
        body = await request.body()
        if body:
            try:
                payload = json.loads(body)
            except json.JSONDecodeError:
                return JSONResponse({"error": "invalid_json"}, status_code=422)
        try:
            started = service.trigger_iteration(
                samples_per_species=int(payload.get("samples_per_species", 1)),
                species_sample_size=payload.get("species_sample_size", "all"),
                rng_seed=int(payload.get("rng_seed", 0)))
        except ValueError as exc:
            return JSONResponse({"error": "invalid_request",
                                 "detail": str(exc)}, status_code=422)
        if not started:
            return JSONResponse({"error": "busy",
                                 "detail": "an iteration is already running"},
                                status_code=409)
        return JSONResponse({"status": "started"}, status_code=202)

    @app.get("/api/learn/status")
    def api_learn_status():
        with service.lock:
            return {
                "running": service.learn_running,
                "last_report": service.last_report,
                "last_error": service.last_learn_error,
            }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(kb_path, manifest_path=None, backend: Optional[BackendConfig] = None,
          bind: str = "127.0.0.1:8080", ui_dir=None):
    import uvicorn

    host, _, port = bind.partition(":")
    app = create_app(kb_path, manifest_path, backend, ui_dir=ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or "8080"),
                log_level="info")
