"""HTTP generation service: queue sketch payloads, run the cascade in a
background worker, serve results.

Jobs live in an on-disk append log plus an in-memory index; the log is
replayed on startup, re-marking jobs that were mid-flight as failed and
re-enqueueing ones that never started.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
import json
import queue
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .assets import GeneratorBundle
from .evaluation import hillshade
from .heightmap import HeightMap
from .imaging import gray_png8_bytes, heightmap_png16_bytes
from .levels import TILE_SIZE
from .sketches import SKETCH_CHANNELS

API_PREFIX = "/api/v1"

RESULT_FILES = {
    "png16": ("result.png16", "image/png"),
    "hillshade": ("result.hillshade.png", "image/png"),
    "json": ("result.json", "application/json"),
}


class SketchPayload(BaseModel):
    rivers: str | None = None
    ridges: str | None = None
    basins: str | None = None
    peaks: str | None = None
    seed: int = 0
    steps: int | None = None
    allow_missing_masks: bool = False


class PayloadError(ValueError):
    pass


def decode_payload_masks(payload: SketchPayload) -> np.ndarray:
    """Validate and decode the four base64 PNG masks to (4, 144, 144)."""
    masks = []
    for name in SKETCH_CHANNELS:
        encoded = getattr(payload, name)
        if encoded is None:
            if not payload.allow_missing_masks:
                raise PayloadError(f"mask {name!r} missing; set allow_missing_masks to send zeros")
            masks.append(np.zeros((TILE_SIZE, TILE_SIZE), dtype=np.uint8))
            continue
        try:
            raw = base64.b64decode(encoded, validate=True)
            img = Image.open(io.BytesIO(raw))
        except (binascii.Error, OSError) as exc:
            raise PayloadError(f"mask {name!r} is not a base64 PNG: {exc}") from exc
        arr = np.asarray(img.convert("L"))
        if arr.shape != (TILE_SIZE, TILE_SIZE):
            raise PayloadError(
                f"mask {name!r}: expected {TILE_SIZE}x{TILE_SIZE}, got {arr.shape[0]}x{arr.shape[1]}"
            )
        if not np.isin(np.unique(arr), (0, 1, 255)).all():
            raise PayloadError(f"mask {name!r} is not binary")
        masks.append((arr > 0).astype(np.uint8))
    return np.stack(masks)


def payload_hash(masks: np.ndarray, seed: int, steps: int | None) -> str:
    h = hashlib.sha256(masks.tobytes())
    h.update(f"seed={seed};steps={steps}".encode())
    return h.hexdigest()


class JobStore:
    """Append-log job store with an in-memory index."""

    TERMINAL = ("done", "failed")

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "payloads").mkdir(exist_ok=True)
        (self.root / "results").mkdir(exist_ok=True)
        self.log_path = self.root / "jobs.log"
        self.jobs: dict[str, dict] = {}
        self.idempotency: dict[str, str] = {}
        self._lock = threading.Lock()
        self._replay()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        for line in self.log_path.read_text().splitlines():
            event = json.loads(line)
            if event["event"] == "create":
                self.jobs[event["job"]["id"]] = event["job"]
                if event.get("idempotency_key"):
                    self.idempotency[event["idempotency_key"]] = event["job"]["id"]
            else:
                job = self.jobs.get(event["id"])
                if job:
                    job.update(event["fields"])
        for job in self.jobs.values():
            if job["state"] == "running":
                job.update(state="failed", error="interrupted by restart")
                self._append({"event": "state", "id": job["id"],
                              "fields": {"state": "failed", "error": "interrupted by restart"}})

    def _append(self, event: dict) -> None:
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def pending_ids(self) -> list[str]:
        return [j["id"] for j in self.jobs.values() if j["state"] == "queued"]

    def payload_path(self, job_id: str) -> Path:
        return self.root / "payloads" / f"{job_id}.npy"

    def result_dir(self, job_id: str) -> Path:
        return self.root / "results" / job_id

    def create(self, request: dict, masks: np.ndarray, idempotency_key: str | None) -> dict:
        with self._lock:
            job = {
                "id": str(uuid.uuid4()),
                "state": "queued",
                "request": request,
                "created_at": time.time(),
                "started_at": None,
                "finished_at": None,
                "error": None,
            }
            np.save(self.payload_path(job["id"]), masks)
            self.jobs[job["id"]] = job
            if idempotency_key:
                self.idempotency[idempotency_key] = job["id"]
            self._append({"event": "create", "job": job, "idempotency_key": idempotency_key})
            return job

    def set_state(self, job_id: str, state: str, **fields) -> None:
        with self._lock:
            job = self.jobs[job_id]
            allowed = {"queued": ("running",), "running": ("done", "failed")}
            if state not in allowed.get(job["state"], ()):
                raise RuntimeError(f"illegal transition {job['state']} -> {state}")
            job["state"] = state
            job.update(fields)
            self._append({"event": "state", "id": job_id, "fields": {"state": state, **fields}})

    def get(self, job_id: str) -> dict | None:
        return self.jobs.get(job_id)


class GenerationWorker(threading.Thread):
    def __init__(self, bundle: GeneratorBundle, store: JobStore, task_queue: "queue.Queue[str | None]"):
        super().__init__(daemon=True)
        self.bundle = bundle
        self.store = store
        self.queue = task_queue

    def run(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:
                return
            job = self.store.get(job_id)
            if job is None or job["state"] != "queued":
                continue
            self.store.set_state(job_id, "running", started_at=time.time())
            try:
                self._generate(job_id, job)
                self.store.set_state(job_id, "done", finished_at=time.time())
            except Exception as exc:  # failure belongs in the job record
                self.store.set_state(job_id, "failed", error=str(exc), finished_at=time.time())

    def _generate(self, job_id: str, job: dict) -> None:
        masks = np.load(self.store.payload_path(job_id))
        request = job["request"]
        budgets = None
        if request.get("steps"):
            from .cli import _scale_budgets

            budgets = _scale_budgets(self.bundle.stack.budgets, int(request["steps"]))
        normalized, provenance = self.bundle.generate_heightmap(
            masks, request["seed"], budgets=budgets
        )
        provenance["payload_hash"] = request["payload_hash"]
        provenance["norm"] = {"min_elev": 0.0, "range_elev": 1000.0, "degenerate": False}
        shade = hillshade(HeightMap(normalized))
        out = self.store.result_dir(job_id)
        out.mkdir(parents=True, exist_ok=True)
        (out / RESULT_FILES["png16"][0]).write_bytes(heightmap_png16_bytes(normalized))
        (out / RESULT_FILES["hillshade"][0]).write_bytes(gray_png8_bytes(shade))
        (out / RESULT_FILES["json"][0]).write_text(json.dumps(provenance, indent=2, sort_keys=True))


def _job_view(job: dict, store: JobStore) -> dict:
    view = dict(job)
    if job["state"] == "done":
        view["results"] = {
            key: f"{API_PREFIX}/jobs/{job['id']}/{fname}"
            for key, (fname, _) in RESULT_FILES.items()
        }
    return view


def create_app(
    bundle: GeneratorBundle | None,
    store_dir: str | Path,
    queue_limit: int = 32,
    workers: int = 1,
) -> FastAPI:
    store = JobStore(store_dir)
    task_queue: "queue.Queue[str | None]" = queue.Queue()
    stack_id = bundle.stack.stack_id if bundle is not None else None
    worker_threads: list[GenerationWorker] = []

    app = FastAPI(title="terradiff generation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store

    @app.on_event("startup")
    def _start_workers() -> None:
        for job_id in store.pending_ids():
            task_queue.put(job_id)
        if bundle is not None:
            for _ in range(workers):
                worker = GenerationWorker(bundle, store, task_queue)
                worker.start()
                worker_threads.append(worker)

    @app.on_event("shutdown")
    def _stop_workers() -> None:
        for _ in worker_threads:
            task_queue.put(None)
        for worker in worker_threads:
            worker.join(timeout=5)

    @app.get(API_PREFIX + "/health")
    def health() -> dict:
        return {"stack_id": stack_id, "queue_depth": task_queue.qsize()}

    @app.post(API_PREFIX + "/generate", status_code=202)
    def generate(payload: SketchPayload, idempotency_key: str | None = Header(default=None)):
        if bundle is None:
            return JSONResponse({"detail": "no model stack loaded"}, status_code=409)
        try:
            masks = decode_payload_masks(payload)
        except PayloadError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        digest = payload_hash(masks, payload.seed, payload.steps)
        if idempotency_key and idempotency_key in store.idempotency:
            existing_id = store.idempotency[idempotency_key]
            existing = store.get(existing_id)
            if existing and existing["request"]["payload_hash"] == digest:
                return {"job_id": existing_id}
            return JSONResponse(
                {"detail": "Idempotency-Key reuse with a different payload"}, status_code=409
            )
        if task_queue.qsize() >= queue_limit:
            return JSONResponse({"detail": "generation queue is full"}, status_code=429)
        request = {
            "payload_hash": digest,
            "seed": payload.seed,
            "steps": payload.steps,
            "stack_id": stack_id,
        }
        job = store.create(request, masks, idempotency_key)
        task_queue.put(job["id"])
        return {"job_id": job["id"]}

    @app.get(API_PREFIX + "/jobs/{job_id}")
    def job_state(job_id: str):
        job = store.get(job_id)
        if job is None:
            return JSONResponse({"detail": "unknown job id"}, status_code=404)
        return _job_view(job, store)

    @app.get(API_PREFIX + "/jobs/{job_id}/{filename}")
    def job_result(job_id: str, filename: str):
        job = store.get(job_id)
        if job is None:
            return JSONResponse({"detail": "unknown job id"}, status_code=404)
        match = {fname: media for fname, media in RESULT_FILES.values()}
        if filename not in match:
            return JSONResponse({"detail": "unknown result file"}, status_code=404)
        if job["state"] != "done":
            return JSONResponse(
                {"detail": f"job is {job['state']}, results not available"}, status_code=409
            )
        data = (store.result_dir(job_id) / filename).read_bytes()
        return Response(content=data, media_type=match[filename])

    return app
