"""HTTP service for run control and human-guided sample selection.

Single-process: each run embeds its own loop, executed on a background
thread. Run handles are not persisted across restarts (the result file
is). GET endpoints are side-effect free and serve immutable snapshots.
"""

from __future__ import annotations

import tempfile
import threading
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse

from .config import ConfigError, parse_run_config
from .export import KINDS, export_plot_data


class RunHandle:
    def __init__(self, run_id: str, setup, loop):
        self.run_id = run_id
        self.setup = setup
        self.loop = loop
        self.thread: Optional[threading.Thread] = None
        self._thread_lock = threading.Lock()

    def ensure_running(self):
        """Start (or restart) the loop thread if the loop can make progress."""
        with self._thread_lock:
            old = self.thread
            if old is not None and old.is_alive():
                # the previous thread may be about to exit after parking the
                # loop in awaiting_human; give it a moment before re-checking
                old.join(timeout=5.0)
                if old.is_alive():
                    return
            if self.loop.state.status != "running":
                return
            self.thread = threading.Thread(target=self.loop.run, daemon=True)
            self.thread.start()

    def join(self, timeout: Optional[float] = None):
        if self.thread is not None:
            self.thread.join(timeout)


def create_app(workdir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="formopt")
    runs: dict[str, RunHandle] = {}
    base = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="formopt_runs_"))

    def _get(run_id: str) -> Optional[RunHandle]:
        return runs.get(run_id)

    @app.post("/runs", status_code=201)
    def create_run(body: dict):
        run_id = uuid.uuid4().hex[:12]
        run_dir = base / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            setup = parse_run_config(body.get("config", body), base_dir=run_dir)
            loop = setup.build_loop()
            loop._effective_ranges()  # surface missing-range errors now
        except (ConfigError, ValueError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        handle = RunHandle(run_id, setup, loop)
        runs[run_id] = handle
        handle.ensure_running()
        return {"run_id": run_id, "mode": setup.config.mode}

    @app.get("/runs/{run_id}/state")
    def get_state(run_id: str):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        return handle.loop.state_snapshot()

    @app.get("/runs/{run_id}/acquisition")
    def get_acquisition(run_id: str):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        return handle.loop.acquisition_profile()

    @app.get("/runs/{run_id}/parameters")
    def get_parameters(run_id: str):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        out = []
        for spec in handle.setup.config.specs:
            out.append(
                {
                    "name": spec.name,
                    "kind": spec.kind,
                    "lower": spec.lower,
                    "upper": spec.upper,
                    "values": list(spec.add_values) or None,
                }
            )
        return {"parameters": out}

    @app.post("/runs/{run_id}/select", status_code=202)
    def select(run_id: str, body: dict):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        loop = handle.loop
        if not loop.awaiting_human:
            return JSONResponse(
                {"error": f"run is {loop.state.status}, not awaiting_human"},
                status_code=409,
            )
        point = body.get("design_point", body)
        problems = loop.validate_point(point)
        if problems:
            return JSONResponse({"errors": problems}, status_code=422)
        loop.submit_selection(point)
        handle.ensure_running()
        return {"queued": point}

    @app.post("/runs/{run_id}/stop", status_code=202)
    def stop(run_id: str):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        handle.loop.interrupt()
        return {"stopping": True}

    @app.get("/runs/{run_id}/history")
    def history(run_id: str):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        records = handle.loop.store.query()
        return {"records": [r.to_dict() for r in records]}

    @app.get("/runs/{run_id}/export/{kind}")
    def export(run_id: str, kind: str):
        handle = _get(run_id)
        if handle is None:
            return JSONResponse({"error": "unknown run"}, status_code=404)
        if kind not in KINDS:
            return JSONResponse(
                {"error": f"unknown kind {kind!r}", "kinds": list(KINDS)},
                status_code=422,
            )
        csv = export_plot_data(
            kind, handle.loop.store.query(), handle.loop.state.ei_sum_history
        )
        return PlainTextResponse(csv, media_type="text/csv")

    app.state.runs = runs
    return app
