from __future__ import annotations

import json
import threading
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from rolledit.denoiser import Denoiser, DenoiserConfig, as_score_function
from rolledit.denoiser import to_checkpoint as denoiser_checkpoint
from rolledit.editor import EditRequest, EditTask, request_from_obj, run_edit
from rolledit.midi_io import parse_smf
from rolledit.refiner import Refiner, RefinerConfig
from rolledit.refiner import to_checkpoint as refiner_checkpoint
from rolledit.roll import roll_to_obj
from rolledit.sde import DEFAULT_SCHEDULE
from rolledit.service import (
    JobRunner,
    JobStatus,
    checkpoint_version,
    create_app,
    job_view,
)

GENERATE = {"task": "generate", "seed": 0, "out_bars": 1}


class _StubScore:
    """ScoreFunction stand-in; optionally gated or failing."""

    def __init__(self, gate: threading.Event | None = None, fail: bool = False):
        self.schedule = DEFAULT_SCHEDULE
        self.gate = gate
        self.fail = fail

    def evaluate(self, x, t, cond):
        if self.fail:
            raise RuntimeError("boom")
        if self.gate is not None:
            assert self.gate.wait(timeout=20)
        return np.zeros_like(x, dtype=np.float64)


def _request(seed: int = 0) -> EditRequest:
    return EditRequest(task=EditTask.GENERATE, seed=seed, out_bars=1)


def _wait(predicate, timeout: float = 30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(0.01)
    raise AssertionError("timed out waiting for job state")


def _poll_done(client: TestClient, job_id: str) -> dict:
    def check():
        view = client.get(f"/api/jobs/{job_id}").json()
        return view if view["status"] in ("DONE", "FAILED") else None

    view = _wait(check)
    assert view["status"] == "DONE", view.get("error")
    return view


@pytest.fixture(scope="module")
def stage1_ckpt():
    torch.manual_seed(0)
    model = Denoiser(DenoiserConfig(base_channels=4, depth=1, cond_embed_dim=4))
    return denoiser_checkpoint(model)


@pytest.fixture(scope="module")
def stage2_ckpt():
    torch.manual_seed(0)
    model = Refiner(RefinerConfig(decoder_layers=1, hidden=16, heads=2,
                                  dropout=0.0, encoder_layers=3,
                                  bar_embed_dim=4, pos_embed_dim=4))
    return refiner_checkpoint(model)


@pytest.fixture(scope="module")
def client(stage1_ckpt):
    app = create_app(stage1_ckpt, workers=1)
    with TestClient(app) as http:
        yield http
    app.state.runner.stop()


class TestRunner:
    def test_fifo_order_single_worker(self):
        gate = threading.Event()
        runner = JobRunner(_StubScore(gate=gate), workers=1)
        try:
            jobs = [runner.submit(_request(seed=i)) for i in range(3)]
            gate.set()
            _wait(lambda: all(runner.get(j.id).status is JobStatus.DONE
                              for j in jobs))
            starts = [runner.get(j.id).started for j in jobs]
            assert starts == sorted(starts)
            finishes = [runner.get(j.id).finished for j in jobs]
            assert starts[1] >= finishes[0] and starts[2] >= finishes[1]
        finally:
            gate.set()
            runner.stop()

    def test_at_most_workers_running(self):
        gate = threading.Event()
        runner = JobRunner(_StubScore(gate=gate), workers=2)
        try:
            jobs = [runner.submit(_request(seed=i)) for i in range(4)]

            def running():
                return sum(runner.get(j.id).status is JobStatus.RUNNING
                           for j in jobs)

            _wait(lambda: running() == 2)
            time.sleep(0.05)
            assert running() == 2
            assert sum(runner.get(j.id).status is JobStatus.QUEUED
                       for j in jobs) == 2
            gate.set()
            _wait(lambda: all(runner.get(j.id).status is JobStatus.DONE
                              for j in jobs))
        finally:
            gate.set()
            runner.stop()

    def test_result_present_iff_done(self):
        gate = threading.Event()
        runner = JobRunner(_StubScore(gate=gate), workers=1)
        try:
            job = runner.submit(_request())
            view = runner.view(job.id)
            assert view["status"] in ("QUEUED", "RUNNING")
            assert view["result"] is None
            data, _ = runner.midi_bytes(job.id)
            assert data is None
            gate.set()
            _wait(lambda: runner.get(job.id).status is JobStatus.DONE)
            view = runner.view(job.id)
            assert view["result"] is not None
            assert view["result"]["roll"]["m"] == 128
        finally:
            gate.set()
            runner.stop()

    def test_failed_job_records_error(self):
        runner = JobRunner(_StubScore(fail=True), workers=1)
        try:
            job = runner.submit(_request())
            _wait(lambda: runner.get(job.id).status is JobStatus.FAILED)
            view = runner.view(job.id)
            assert "boom" in view["error"]
            assert view["result"] is None
            data, got = runner.midi_bytes(job.id)
            assert data is None and got.status is JobStatus.FAILED
        finally:
            runner.stop()

    def test_rejects_zero_workers(self):
        with pytest.raises(ValueError):
            JobRunner(_StubScore(), workers=0)

    def test_unknown_id(self):
        runner = JobRunner(_StubScore(), workers=1)
        try:
            assert runner.view("nope") is None
            assert runner.midi_bytes("nope") == (None, None)
        finally:
            runner.stop()


class TestSubmit:
    def test_valid_request_returns_202_and_id(self, client):
        resp = client.post("/api/jobs", json=GENERATE)
        assert resp.status_code == 202
        job_id = resp.json()["id"]
        assert isinstance(job_id, str) and len(job_id) == 32
        _poll_done(client, job_id)

    def test_duplicate_submits_get_distinct_ids(self, client):
        first = client.post("/api/jobs", json=GENERATE).json()["id"]
        second = client.post("/api/jobs", json=GENERATE).json()["id"]
        assert first != second
        _poll_done(client, first)
        _poll_done(client, second)

    def test_invalid_json_is_400(self, client):
        resp = client.post("/api/jobs", content=b"{nope",
                           headers={"content-type": "application/json"})
        assert resp.status_code == 400
        assert "JSON" in resp.json()["error"]

    def test_unknown_field_is_400(self, client):
        resp = client.post("/api/jobs", json={"task": "generate", "tempo": 1})
        assert resp.status_code == 400
        assert "tempo" in resp.json()["error"]

    def test_missing_region_is_422_with_field(self, client):
        grid = np.zeros((128, 4), dtype=np.uint8)
        grid[60, 0] = 1
        resp = client.post("/api/jobs", json={"task": "stroke-edit",
                                              "input": roll_to_obj(grid)})
        assert resp.status_code == 422
        body = resp.json()
        assert body["field"] == "regions"

    def test_null_signals_style_transfer_is_422(self, client):
        grid = np.zeros((128, 4), dtype=np.uint8)
        grid[60, 0] = 1
        resp = client.post("/api/jobs", json={
            "task": "style-transfer",
            "input": roll_to_obj(grid),
            "signals": {"null": True},
        })
        assert resp.status_code == 422
        assert resp.json()["field"] == "signals"

    def test_missing_input_is_422(self, client):
        resp = client.post("/api/jobs", json={"task": "inpaint",
                                              "regions": [[0, 64, 0, 2]]})
        assert resp.status_code == 422
        assert resp.json()["field"] == "input"


class TestStatusAndResults:
    def test_unknown_id_is_404(self, client):
        assert client.get("/api/jobs/ffff").status_code == 404
        assert client.get("/api/jobs/ffff/midi").status_code == 404

    def test_done_job_view(self, client):
        job_id = client.post("/api/jobs", json=GENERATE).json()["id"]
        view = _poll_done(client, job_id)
        result = view["result"]
        assert result["roll"]["m"] == 128 and result["roll"]["n"] == 4
        assert result["notes"] == len(result["roll"]["cells"])
        assert result["run_log"]["seed"] == 0
        assert result["report"] == {}
        assert view["error"] is None
        assert view["finished"] >= view["started"] >= view["created"]

    def test_result_is_pure_function_of_request(self, client, stage1_ckpt):
        job_id = client.post("/api/jobs", json=GENERATE).json()["id"]
        view = _poll_done(client, job_id)
        replay = request_from_obj(view["request"])
        grid, _ = run_edit(replay, as_score_function(stage1_ckpt))
        assert view["result"]["roll"] == roll_to_obj(grid)

    def test_midi_streams_after_done(self, client):
        job_id = client.post("/api/jobs", json=GENERATE).json()["id"]
        view = _poll_done(client, job_id)
        resp = client.get(f"/api/jobs/{job_id}/midi")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "audio/midi"
        score = parse_smf(resp.content)
        assert len(score.notes) == view["result"]["notes"]

    def test_midi_before_done_is_409(self, stage1_ckpt):
        app = create_app(stage1_ckpt, workers=1)
        with TestClient(app) as http:
            body = dict(GENERATE, out_bars=32)
            job_id = http.post("/api/jobs", json=body).json()["id"]
            resp = http.get(f"/api/jobs/{job_id}/midi")
            assert resp.status_code == 409
            assert "not DONE" in resp.json()["error"]
        app.state.runner.stop()


class TestCheckpointEndpoint:
    def test_reports_model_identity(self, client):
        resp = client.get("/api/checkpoint")
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["version"]) == 16
        assert body["embed_mode"] == "word"
        assert body["schedule"] == {"beta_start": 0.1, "beta_end": 20.0,
                                    "num_steps": 100}

    def test_cors_header_present(self, client):
        resp = client.get("/api/checkpoint",
                          headers={"origin": "http://localhost:5173"})
        assert resp.headers["access-control-allow-origin"] == "*"


class TestCheckpointVersion:
    def test_stable_and_distinct(self, stage1_ckpt, stage2_ckpt):
        a = checkpoint_version(stage1_ckpt)
        assert a == checkpoint_version(stage1_ckpt)
        assert a != checkpoint_version(stage2_ckpt)
        assert checkpoint_version(stage1_ckpt, None) \
            != checkpoint_version(stage1_ckpt, stage2_ckpt)

    def test_sensitive_to_weights(self, stage1_ckpt):
        tweaked = {k: v.copy() for k, v in stage1_ckpt.params.items()}
        name = sorted(tweaked)[0]
        tweaked[name] = tweaked[name] + 1.0
        other = type(stage1_ckpt)(kind=stage1_ckpt.kind,
                                  config=stage1_ckpt.config,
                                  schedule=stage1_ckpt.schedule,
                                  params=tweaked)
        assert checkpoint_version(stage1_ckpt) != checkpoint_version(other)


class TestStageTwoService:
    def test_refined_midi_round_trip(self, stage1_ckpt, stage2_ckpt):
        app = create_app(stage1_ckpt, stage2=stage2_ckpt, workers=1)
        with TestClient(app) as http:
            job_id = http.post("/api/jobs", json=GENERATE).json()["id"]
            view = _poll_done(http, job_id)
            resp = http.get(f"/api/jobs/{job_id}/midi")
            assert resp.status_code == 200
            score = parse_smf(resp.content)
            assert all(0 <= n.pitch < 128 for n in score.notes)
            assert view["result"]["roll"]["m"] == 128
        app.state.runner.stop()


class TestJobView:
    def test_transitions_only_forward(self):
        gate = threading.Event()
        runner = JobRunner(_StubScore(gate=gate), workers=1)
        try:
            job = runner.submit(_request())
            seen = {runner.get(job.id).status}
            gate.set()
            _wait(lambda: runner.get(job.id).status is JobStatus.DONE)
            seen.add(JobStatus.DONE)
            assert JobStatus.FAILED not in seen
            view = job_view(runner.get(job.id))
            assert view["status"] == "DONE"
        finally:
            gate.set()
            runner.stop()
