"""HTTP job service: asynchronous generation/editing over a worker pool.

POST /api/jobs enqueues an EditRequest and returns an id immediately (202);
GET /api/jobs/{id} polls status; GET /api/jobs/{id}/midi streams the
refined result as a standard MIDI file once the job is DONE;
GET /api/checkpoint reports the loaded model identity. Schema violations
answer 400, semantically invalid requests 422 with the offending field.

Jobs run FIFO on a fixed pool of worker threads; the job table is guarded
by one lock and status only moves QUEUED -> RUNNING -> {DONE, FAILED}. The
result of a job is a pure function of (request, checkpoint version): the
same request replayed through the CLI reproduces it.
"""

from __future__ import annotations

import enum
import hashlib
import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .checkpoint import Checkpoint
from .denoiser import EpsScoreFunction, as_score_function
from .editor import (
    EditError,
    EditRequest,
    MissingInput,
    MissingRegion,
    RequestSchemaError,
    plan_edit,
    request_from_obj,
    request_to_obj,
    run_edit,
)
from .metrics import MetricReport, csd, overlap_ratio
from .midi_io import Score, write_smf
from .roll import onsetroll_to_score, roll_to_obj
from .sde import SdeError
from .signals import LengthMismatch, NullSignals, SignalError, extract_signals


class JobStatus(str, enum.Enum):
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"


@dataclass
class Job:
    id: str
    request: EditRequest
    status: JobStatus = JobStatus.QUEUED
    roll: np.ndarray | None = None
    score: Score | None = None
    report: MetricReport | None = None
    run_log: dict | None = None
    error: str | None = None
    created: float = field(default_factory=time.time)
    started: float | None = None
    finished: float | None = None


_FIELD_OF = {
    MissingRegion: "regions",
    MissingInput: "input",
    NullSignals: "signals",
    LengthMismatch: "signals",
}


def _semantic_field(exc: Exception) -> str:
    for klass, name in _FIELD_OF.items():
        if isinstance(exc, klass):
            return name
    return "request"


def checkpoint_version(*checkpoints: Checkpoint | None) -> str:
    """Stable digest over model kind, config, schedule and weights."""
    h = hashlib.sha256()
    for ckpt in checkpoints:
        if ckpt is None:
            h.update(b"none")
            continue
        h.update(ckpt.kind.encode())
        h.update(json.dumps(ckpt.config, sort_keys=True).encode())
        h.update(json.dumps([ckpt.schedule.beta_start, ckpt.schedule.beta_end,
                             ckpt.schedule.num_steps]).encode())
        for name in sorted(ckpt.params):
            arr = ckpt.params[name]
            h.update(name.encode())
            h.update(str(arr.dtype).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


class JobRunner:
    """FIFO queue feeding at most ``workers`` concurrent jobs."""

    def __init__(self, score_fn: EpsScoreFunction, refiner=None, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.score_fn = score_fn
        self.refiner = refiner
        self.jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._threads = [
            threading.Thread(target=self._work, daemon=True,
                             name=f"rolledit-worker-{i}")
            for i in range(workers)
        ]
        for thread in self._threads:
            thread.start()

    def submit(self, request: EditRequest) -> Job:
        job = Job(id=uuid.uuid4().hex, request=request)
        with self._lock:
            self.jobs[job.id] = job
        self._queue.put(job.id)
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self.jobs.get(job_id)

    def view(self, job_id: str) -> dict | None:
        with self._lock:
            job = self.jobs.get(job_id)
            return None if job is None else job_view(job)

    def midi_bytes(self, job_id: str) -> tuple[bytes | None, Job | None]:
        """(smf bytes, job); bytes None unless the job is DONE."""
        with self._lock:
            job = self.jobs.get(job_id)
            if job is None or job.status is not JobStatus.DONE:
                return None, job
            return write_smf(job.score), job

    def stop(self) -> None:
        for _ in self._threads:
            self._queue.put(None)
        for thread in self._threads:
            thread.join(timeout=5)

    def _report(self, request: EditRequest, grid: np.ndarray,
                score: Score) -> MetricReport:
        csd_n = csd_p = None
        if not request.signals.is_null:
            extracted = extract_signals(score, grid)
            csd_n = csd(extracted, request.signals, "n")
            csd_p = csd(extracted, request.signals, "p")
        or_ = None
        if request.input is not None and request.input.any() \
                and request.input.shape == grid.shape:
            or_ = overlap_ratio(grid, request.input)
        return MetricReport(csd_n=csd_n, csd_p=csd_p, or_=or_)

    def _work(self) -> None:
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            job = self.get(job_id)
            with self._lock:
                job.status = JobStatus.RUNNING
                job.started = time.time()
            try:
                grid, run_log = run_edit(job.request, self.score_fn,
                                         self.score_fn.schedule)
                if self.refiner is not None:
                    from .refiner import refine

                    score = refine(self.refiner, grid, seed=job.request.seed)
                else:
                    score = onsetroll_to_score(grid)
                report = self._report(job.request, grid, score)
                with self._lock:
                    job.roll = grid
                    job.score = score
                    job.report = report
                    job.run_log = run_log
                    job.status = JobStatus.DONE
                    job.finished = time.time()
            except Exception as exc:
                with self._lock:
                    job.error = f"{type(exc).__name__}: {exc}"
                    job.status = JobStatus.FAILED
                    job.finished = time.time()


def job_view(job: Job) -> dict:
    view = {
        "id": job.id,
        "status": job.status.value,
        "request": request_to_obj(job.request),
        "error": job.error,
        "created": job.created,
        "started": job.started,
        "finished": job.finished,
        "result": None,
    }
    if job.status is JobStatus.DONE:
        view["result"] = {
            "roll": roll_to_obj(job.roll),
            "report": json.loads(job.report.to_json()),
            "notes": int(job.roll.sum()),
            "run_log": job.run_log,
        }
    return view


def create_app(stage1: Checkpoint, stage2: Checkpoint | None = None,
               workers: int = 1, cors_origins=("*",)) -> FastAPI:
    score_fn = as_score_function(stage1)
    refiner = None
    if stage2 is not None:
        from .refiner import from_checkpoint as refiner_from_checkpoint

        refiner = refiner_from_checkpoint(stage2)
    runner = JobRunner(score_fn, refiner=refiner, workers=workers)
    version = checkpoint_version(stage1, stage2)

    app = FastAPI(title="rolledit service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.runner = runner
    app.state.checkpoint_version = version

    @app.post("/api/jobs", status_code=202)
    async def submit(request: Request):
        body = await request.body()
        try:
            payload = json.loads(body)
        except json.JSONDecodeError as exc:
            return JSONResponse(status_code=400,
                                content={"error": f"invalid JSON: {exc}"})
        try:
            edit_request = request_from_obj(payload)
        except RequestSchemaError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        try:
            plan_edit(edit_request)
        except (EditError, SignalError, SdeError) as exc:
            return JSONResponse(
                status_code=422,
                content={"error": str(exc), "field": _semantic_field(exc)})
        job = runner.submit(edit_request)
        return {"id": job.id}

    @app.get("/api/jobs/{job_id}")
    def status(job_id: str):
        view = runner.view(job_id)
        if view is None:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown job {job_id!r}"})
        return view

    @app.get("/api/jobs/{job_id}/midi")
    def result_midi(job_id: str):
        data, job = runner.midi_bytes(job_id)
        if job is None:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown job {job_id!r}"})
        if data is None:
            return JSONResponse(
                status_code=409,
                content={"error": f"job is {job.status.value}, not DONE",
                         "detail": job.error})
        return Response(content=data, media_type="audio/midi")

    @app.get("/api/checkpoint")
    def checkpoint_info():
        schedule = score_fn.schedule
        return {
            "version": version,
            "embed_mode": stage1.config.get("embed_mode"),
            "schedule": {
                "beta_start": schedule.beta_start,
                "beta_end": schedule.beta_end,
                "num_steps": schedule.num_steps,
            },
        }

    return app
