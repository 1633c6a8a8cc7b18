"""HTTP/JSON surface of the annotation workflow.

Endpoints:

    GET  /                                  service info and session list
    POST /sessions                          create or reopen a session
    GET  /sessions                          session summaries
    GET  /sessions/{sid}/status             phase, progress, effort, checkpoints
    GET  /sessions/{sid}/report             per-checkpoint CMC / mAP table
    GET  /sessions/{sid}/tasks?batch=b      pending annotation tasks for a batch
    POST /sessions/{sid}/tasks/{tid}/label  submit or skip one label
    GET  /sessions/{sid}/files/{path}       images referenced by records
    /ui                                     static annotation panel, when built

Long-running model updates happen off the request path; clients poll status
until the phase returns to "ready".
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles

from .. import __version__
from ..data import DatasetError
from .schemas import (CreateSessionRequest, CreateSessionResponse, LabelRequest,
                      LabelResponse, ReportResponse, ServiceInfo, SessionSummary,
                      StatusResponse, TaskModel)
from .store import (ManagedSession, SessionNotFound, SessionStore, TaskConflict,
                    UpdateInProgress)


def _task_model(managed: ManagedSession, record) -> TaskModel:
    session = managed.session
    probe = session.probes_by_id[record.probe_id][0]
    gallery = session.gallery_by_id[record.gallery_id][0]
    base = f"/sessions/{managed.session_id}/files"
    return TaskModel(
        task_id=record.task_id,
        batch=record.batch,
        probe_id=record.probe_id,
        gallery_id=record.gallery_id,
        state=record.state,
        label=record.label,
        probe_image_url=f"{base}/{probe.image_path}" if probe.image_path else None,
        gallery_image_url=f"{base}/{gallery.image_path}" if gallery.image_path else None,
        probe_feature=None if probe.image_path else [float(v) for v in probe.feature],
        gallery_feature=None if gallery.image_path else [float(v) for v in gallery.feature],
    )


def create_app(data_dir: str | Path = "sessions", ui_dir: str | Path | None = None) -> FastAPI:
    store = SessionStore(data_dir)
    app = FastAPI(title="reidloop annotation service", version=__version__)
    app.state.store = store

    def _get(sid: str) -> ManagedSession:
        try:
            return store.get(sid)
        except SessionNotFound:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")

    @app.get("/api", response_model=ServiceInfo)
    def service_info():
        return ServiceInfo(
            service="reidloop", version=__version__,
            sessions=[SessionSummary(session_id=m.session_id, status=m.phase,
                                     dataset=m.dataset.name,
                                     batches_consumed=m.session.batches_consumed,
                                     num_batches=m.session.num_batches)
                      for m in store.list_sessions()])

    @app.get("/sessions", response_model=list[SessionSummary])
    def list_sessions():
        return [SessionSummary(session_id=m.session_id, status=m.phase,
                               dataset=m.dataset.name,
                               batches_consumed=m.session.batches_consumed,
                               num_batches=m.session.num_batches)
                for m in store.list_sessions()]

    @app.post("/sessions", response_model=CreateSessionResponse, status_code=201)
    def create_session(req: CreateSessionRequest):
        try:
            managed, resumed = store.create(req.manifest, req.config, req.session_id)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=400, detail=f"manifest not found: {exc}")
        except (DatasetError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return CreateSessionResponse(session_id=managed.session_id,
                                     status=managed.phase, resumed=resumed)

    @app.get("/sessions/{sid}/status", response_model=StatusResponse)
    def status(sid: str):
        return StatusResponse(**_get(sid).status_dict())

    @app.get("/sessions/{sid}/report", response_model=ReportResponse)
    def report(sid: str):
        return ReportResponse(**_get(sid).report_dict())

    @app.get("/sessions/{sid}/tasks", response_model=list[TaskModel])
    def tasks(sid: str, batch: int = Query(ge=1)):
        managed = _get(sid)
        try:
            records = managed.ensure_tasks(batch)
        except UpdateInProgress as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return [_task_model(managed, r) for r in records if r.state == "pending"]

    @app.post("/sessions/{sid}/tasks/{tid}/label", response_model=LabelResponse)
    def label(sid: str, tid: str, req: LabelRequest):
        managed = _get(sid)
        if not req.skip and req.label is None:
            raise HTTPException(status_code=400, detail="provide a label or skip=true")
        try:
            record, pending = managed.submit_label(tid, req.label, req.skip, req.source)
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except TaskConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return LabelResponse(task=_task_model(managed, record), batch_pending=pending)

    @app.get("/sessions/{sid}/files/{file_path:path}")
    def files(sid: str, file_path: str):
        managed = _get(sid)
        root = managed.dataset.root
        if root is None:
            raise HTTPException(status_code=404, detail="dataset has no file root")
        target = (root / file_path).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            raise HTTPException(status_code=404, detail="file not found")
        return FileResponse(target)

    ui_dir = ui_dir or os.environ.get("REIDLOOP_UI_DIR")
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
