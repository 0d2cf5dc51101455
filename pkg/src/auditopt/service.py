"""HTTP/JSON service backing the web UI.

Thin wrappers over the library: design searches and simulations run as
background jobs on a bounded worker pool (poll ``GET /v1/jobs/{id}`` for
progress), fits respond synchronously, and multi-wave sessions live in an
embedded SQLite store with optimistic version checks.

Status mapping: 400 malformed input, 404 unknown resource, 409 illegal
session transitions (including ingest capacity violations and version
conflicts), 422 numeric failures with a diagnostic payload.
"""

from __future__ import annotations

import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse

from . import io as aio
from .cli import compute_design_document
from .errors import (
    AuditOptError,
    CapacityExceeded,
    IllegalTransition,
    InvalidInput,
    NonDivisibleStep,
)
from .likelihood import fit_mle
from .model import ModelSpec, ParamVector, StratumTable
from .session import Session, SqliteSessionStore
from .simulate import run_replicates

MAX_BODY_BYTES = 16 * 1024 * 1024
_VALIDATION = (InvalidInput, NonDivisibleStep)
_CONFLICT = (IllegalTransition, CapacityExceeded)


class JobRegistry:
    """In-process job table with a bounded worker pool."""

    def __init__(self, max_workers: int = 2):
        self.pool = ThreadPoolExecutor(max_workers=max_workers)
        self.lock = threading.Lock()
        self.jobs: dict[str, dict] = {}

    def submit(self, fn) -> str:
        job_id = uuid.uuid4().hex
        with self.lock:
            self.jobs[job_id] = {"id": job_id, "status": "queued",
                                 "progress": None, "result": None, "error": None}

        def progress(**kw):
            with self.lock:
                self.jobs[job_id]["progress"] = kw

        def run():
            with self.lock:
                self.jobs[job_id]["status"] = "running"
            try:
                result = fn(progress)
            except AuditOptError as exc:
                with self.lock:
                    self.jobs[job_id].update(
                        status="failed",
                        error={"type": type(exc).__name__, "message": str(exc)},
                    )
                return
            with self.lock:
                self.jobs[job_id].update(status="done", result=result)

        self.pool.submit(run)
        return job_id

    def get(self, job_id: str) -> dict:
        with self.lock:
            job = self.jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            return dict(job)


def create_app(db_path: str = ":memory:", frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="auditopt", version="0.1.0",
                  description="Two-phase validation study design service")
    store = SqliteSessionStore(db_path)
    jobs = JobRegistry()
    session_lock = threading.Lock()  # single-writer across session mutations

    @app.middleware("http")
    async def limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and int(length) > MAX_BODY_BYTES:
            return JSONResponse({"error": {"type": "PayloadTooLarge",
                                           "message": "request body too large"}},
                                status_code=413)
        return await call_next(request)

    @app.exception_handler(AuditOptError)
    async def map_errors(request: Request, exc: AuditOptError):
        if isinstance(exc, _CONFLICT):
            status = 409
        elif isinstance(exc, _VALIDATION):
            status = 400
        else:
            status = 422
        return JSONResponse({"error": {"type": type(exc).__name__, "message": str(exc)}},
                            status_code=status)

    # -- design -----------------------------------------------------------

    @app.post("/v1/design", status_code=202)
    async def post_design(body: dict):
        strata = aio.strata_from_document(_require(body, "strata"))
        params = None
        if body.get("params") is not None:
            params = aio.params_from_document(body["params"])
        n = _require(body, "n")
        strategy = _require(body, "strategy")
        m = body.get("m", 10)
        max_rows = body.get("max_rows", 10_000)
        seed = body.get("seed", 0)
        weighting = body.get("weighting", "observed")
        steps = body.get("steps")
        if steps is not None:
            steps = ",".join(str(s) for s in steps)

        def work(progress):
            doc = compute_design_document(strata, params, n, m, max_rows, strategy,
                                          seed, weighting, steps, progress=progress)
            aio.validate_document(doc, "design_output")
            return doc

        return {"job_id": jobs.submit(work)}

    # -- fit ----------------------------------------------------------------

    @app.post("/v1/fit")
    async def post_fit(body: dict):
        spec, level_codes = aio.spec_from_document(_require(body, "model"))
        if "csv" in body:
            data = aio.dataset_from_csv_text(body["csv"], spec, level_codes)
        elif "records" in body:
            data = _dataset_from_records(body["records"], spec)
        else:
            raise InvalidInput("fit request needs 'csv' or 'records'")
        result = fit_mle(data)
        return {
            "theta": result.theta_hat.to_json_dict(),
            "loglik": result.loglik,
            "gradient_norm": result.gradient_norm,
            "converged": result.converged,
            "n_iter": result.n_iter,
            "n_records": len(data),
            "n_validated": data.n_validated,
        }

    # -- simulate -------------------------------------------------------------

    @app.post("/v1/simulate", status_code=202)
    async def post_simulate(body: dict):
        scenario = aio.scenario_from_document(_require(body, "scenario"))

        def work(progress):
            rows, _ = run_replicates(scenario, progress=progress)
            return {"metrics": [r.to_json_dict() for r in rows]}

        return {"job_id": jobs.submit(work)}

    # -- jobs -------------------------------------------------------------

    @app.get("/v1/jobs/{job_id}")
    async def get_job(job_id: str):
        try:
            return jobs.get(job_id)
        except KeyError:
            raise HTTPException(404, detail=f"unknown job {job_id}")

    # -- sessions ----------------------------------------------------------

    @app.post("/v1/sessions", status_code=201)
    async def post_session(body: dict):
        strata = aio.strata_from_document(_require(body, "strata"))
        spec = ModelSpec.from_json_dict(_require(body, "model"))
        prior = None
        if body.get("prior_theta") is not None:
            prior = ParamVector.from_json_dict(body["prior_theta"])
        session = Session.create(
            strata, spec, n=_require(body, "n"), m=body.get("m", 10),
            waves=body.get("waves", 2), prior_theta=prior,
            max_rows=body.get("max_rows", 10_000),
        )
        with session_lock:
            store.save(session)
        return session.to_json_dict()

    def _load_session(session_id: str) -> Session:
        try:
            return store.load(session_id)
        except KeyError:
            raise HTTPException(404, detail=f"unknown session {session_id}")

    @app.get("/v1/sessions/{session_id}")
    async def get_session(session_id: str):
        return _load_session(session_id).to_json_dict()

    def _mutate(session_id: str, fn):
        with session_lock:
            session = _load_session(session_id)
            result = fn(session)
            store.save(session)
            return session, result

    @app.post("/v1/sessions/{session_id}/plan-wave")
    async def plan_wave(session_id: str, body: dict | None = None):
        body = body or {}
        _, plan = _mutate(session_id, lambda s: s.plan_wave(
            seed=body.get("seed", 0), expected_version=body.get("version")))
        return {"plan": plan}

    @app.post("/v1/sessions/{session_id}/ingest")
    async def ingest(session_id: str, body: dict):
        records = _require(body, "records")
        _, result = _mutate(session_id, lambda s: s.ingest(
            records, expected_version=body.get("version")))
        return result

    @app.post("/v1/sessions/{session_id}/refit")
    async def refit(session_id: str, body: dict | None = None):
        body = body or {}
        _, result = _mutate(session_id, lambda s: s.refit(
            expected_version=body.get("version")))
        return result

    @app.post("/v1/sessions/{session_id}/finalize")
    async def finalize(session_id: str, body: dict | None = None):
        body = body or {}
        _, result = _mutate(session_id, lambda s: s.finalize(
            expected_version=body.get("version")))
        return result

    if frontend_dir is not None:
        from pathlib import Path

        from fastapi.staticfiles import StaticFiles

        if Path(frontend_dir).is_dir():
            app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app


def _require(body: dict, key: str):
    if not isinstance(body, dict) or key not in body:
        raise InvalidInput(f"request body needs {key!r}")
    return body[key]


def _dataset_from_records(records, spec):
    import numpy as np

    from .likelihood import Dataset

    if not isinstance(records, list) or not records:
        raise InvalidInput("'records' must be a non-empty list")
    v, ystar, xstar, y, x, z = [], [], [], [], [], []
    for i, r in enumerate(records):
        try:
            vi = int(r["v"])
            v.append(vi)
            ystar.append(int(r["ystar"]))
            xstar.append(int(r["xstar"]))
            z.append(int(r["z"]))
            y.append(int(r["y"]) if vi == 1 else -1)
            x.append(int(r["x"]) if vi == 1 else -1)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"record {i} malformed: {exc}") from exc
    return Dataset.from_arrays(np.array(v), np.array(ystar), np.array(xstar),
                               np.array(y), np.array(x), np.array(z), spec)
