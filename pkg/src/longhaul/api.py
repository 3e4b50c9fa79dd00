"""HTTP operator surface: snapshots, plan review, approval, halt/resume,
task detail, and a resumable event stream.

Every GET is a pure function of the journal; every successful mutating
POST corresponds to exactly one journaled event, deduplicated by
client-supplied request ids.  The event stream replays the journal from
any sequence number and then follows the live tail.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, StreamingResponse
from pydantic import BaseModel

from .journal import open_journal
from .model import (
    Event,
    JournalCorruption,
    ProjectState,
    canonical_json,
    display_states,
    fold_state,
)
from .orchestrator import Engine, EngineStateError
from .workspace import Workspace

logger = logging.getLogger(__name__)

STREAM_POLL_SECONDS = 0.1


def snapshot_from_state(project_id: str, state: ProjectState) -> dict[str, Any]:
    """The ApiSnapshot: derivable purely from the journal fold."""
    tasks = []
    plan = state.plan or state.proposed_plan
    if state.plan is not None and all(t.task_id in state.task_states for t in state.plan.tasks):
        shown = display_states(state.plan, state.task_states)
    else:
        shown = dict(state.task_states)
    if plan is not None:
        for task in plan.tasks:
            task_state = shown.get(task.task_id)
            tasks.append({
                "task_id": task.task_id,
                "title": task.title,
                "state": task_state.to_dict() if task_state else {"kind": "unplanned"},
                "attempt": state.attempts.get(task.task_id, 0),
            })
    return {
        "project_id": project_id,
        "plan_version": state.approved_version,
        "proposed_version": state.proposed_plan.version if state.proposed_plan else 0,
        "tasks": tasks,
        "halt": state.halt.to_dict() if state.halt else None,
        "completed": state.completed,
        "last_event": state.last_sequence,
    }


@dataclass
class ProjectHandle:
    """One registered project: its workspace plus, when live, its engine."""

    project_id: str
    workspace: Workspace
    engine: Engine | None = None
    runner: Callable[[], None] | None = None  # restarts the engine loop after resume
    request_ids: dict[str, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def read_events(self) -> list[Event]:
        journal = open_journal(self.workspace.journal_path)
        return journal.read_events()

    def state(self) -> ProjectState:
        return fold_state(self.read_events())

    def snapshot(self) -> dict[str, Any]:
        return snapshot_from_state(self.project_id, self.state())


class ProjectHub:
    def __init__(self) -> None:
        self._projects: dict[str, ProjectHandle] = {}

    def register(self, project_id: str, workspace: Workspace, *,
                 engine: Engine | None = None,
                 runner: Callable[[], None] | None = None) -> ProjectHandle:
        handle = ProjectHandle(project_id=project_id, workspace=workspace,
                               engine=engine, runner=runner)
        self._projects[project_id] = handle
        return handle

    def get(self, project_id: str) -> ProjectHandle:
        if project_id not in self._projects:
            raise HTTPException(status_code=404, detail=f"unknown project {project_id!r}")
        return self._projects[project_id]

    def ids(self) -> list[str]:
        return sorted(self._projects)


class ApproveBody(BaseModel):
    actor: str = "operator"
    request_id: str


class ResumeBody(BaseModel):
    instruction: str = ""
    request_id: str


class HaltBody(BaseModel):
    reason: str
    request_id: str


def create_app(hub: ProjectHub, *, api_token: str | None = None,
               static_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="longhaul", docs_url=None, redoc_url=None)
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    async def check_auth(request: Request) -> None:
        if api_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {api_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    auth = Depends(check_auth)

    @app.get("/projects", dependencies=[auth])
    def list_projects() -> list[dict[str, Any]]:
        out = []
        for pid in hub.ids():
            handle = hub.get(pid)
            state = handle.state()
            out.append({
                "project_id": pid,
                "plan_version": state.approved_version,
                "completed": state.completed,
                "halted": state.halt is not None,
                "last_event": state.last_sequence,
            })
        return out

    @app.get("/projects/{pid}/snapshot", dependencies=[auth])
    def get_snapshot(pid: str) -> dict[str, Any]:
        return hub.get(pid).snapshot()

    @app.get("/projects/{pid}/plan/{version}", dependencies=[auth])
    def get_plan(pid: str, version: int) -> dict[str, Any]:
        handle = hub.get(pid)
        try:
            return handle.workspace.load_plan(version).to_dict()
        except Exception as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    def _idempotent(handle: ProjectHandle, request_id: str,
                    action: Callable[[], dict]) -> dict:
        with handle.lock:
            if request_id in handle.request_ids:
                return handle.request_ids[request_id]
            result = action()
            handle.request_ids[request_id] = result
            return result

    @app.post("/projects/{pid}/approve", dependencies=[auth])
    def post_approve(pid: str, body: ApproveBody) -> dict[str, Any]:
        handle = hub.get(pid)

        def action() -> dict:
            engine = handle.engine
            if engine is None:
                raise HTTPException(status_code=409,
                                    detail="project is read-only (no live engine)")
            was_halted = engine.state.halt is not None
            try:
                event = engine.approve(actor=body.actor)
            except EngineStateError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            if event is None:
                raise HTTPException(status_code=409, detail="plan version already approved")
            if was_halted and engine.state.halt is None and handle.runner is not None:
                handle.runner()
            elif engine.state.approved_version == 1 and handle.runner is not None:
                handle.runner()
            return {"approved_version": engine.state.approved_version,
                    "sequence_no": event.sequence_no}

        return _idempotent(handle, body.request_id, action)

    @app.post("/projects/{pid}/resume", dependencies=[auth])
    def post_resume(pid: str, body: ResumeBody) -> dict[str, Any]:
        handle = hub.get(pid)

        def action() -> dict:
            engine = handle.engine
            if engine is None:
                raise HTTPException(status_code=409,
                                    detail="project is read-only (no live engine)")
            try:
                plan = engine.resume(body.instruction)
            except EngineStateError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            return {"proposed_version": plan.version}

        return _idempotent(handle, body.request_id, action)

    @app.post("/projects/{pid}/halt", dependencies=[auth])
    def post_halt(pid: str, body: HaltBody) -> dict[str, Any]:
        handle = hub.get(pid)

        def action() -> dict:
            engine = handle.engine
            if engine is None:
                raise HTTPException(status_code=409,
                                    detail="project is read-only (no live engine)")
            if engine.state.halt is not None:
                raise HTTPException(status_code=409, detail="project already halted")
            if engine.state.completed:
                raise HTTPException(status_code=409, detail="project already completed")
            engine.request_halt(body.reason, actor="operator")
            return {"requested": True}

        return _idempotent(handle, body.request_id, action)

    @app.get("/projects/{pid}/events", dependencies=[auth])
    def get_events(pid: str, from_seq: int = 0) -> StreamingResponse:
        handle = hub.get(pid)

        def frames() -> Iterator[str]:
            last = from_seq
            stumbles = 0
            while True:
                try:
                    events = handle.read_events()
                except JournalCorruption:
                    # A read can race a live append mid-write; transient.
                    stumbles += 1
                    if stumbles > 50:
                        yield "event: error\ndata: journal unreadable\n\n"
                        return
                    time.sleep(STREAM_POLL_SECONDS)
                    continue
                stumbles = 0
                for event in events:
                    if event.sequence_no > last:
                        last = event.sequence_no
                        yield (f"id: {event.sequence_no}\n"
                               f"data: {canonical_json(event.to_dict())}\n\n")
                state = fold_state(events)
                live = handle.engine is not None
                if state.completed or (state.halt is not None and not live):
                    yield "event: end\ndata: {}\n\n"
                    return
                time.sleep(STREAM_POLL_SECONDS)

        return StreamingResponse(frames(), media_type="text/event-stream")

    @app.get("/projects/{pid}/tasks/{task_id}", dependencies=[auth])
    def get_task(pid: str, task_id: int) -> dict[str, Any]:
        handle = hub.get(pid)
        state = handle.state()
        plan = state.plan or state.proposed_plan
        if plan is None or not plan.has_task(task_id):
            raise HTTPException(status_code=404, detail=f"unknown task {task_id}")
        workspace = handle.workspace
        task_state = state.task_states.get(task_id)
        summary = None
        if workspace.has_summary(task_id):
            summary = workspace.read_summary(task_id).to_dict()
        attempt = state.attempts.get(task_id, 0)
        assessment = None
        assessment_path = workspace.assessment_path(task_id, attempt)
        if attempt and assessment_path.exists():
            assessment = json.loads(assessment_path.read_text(encoding="utf-8"))
        transcripts = []
        task_dir = workspace.task_dir(task_id)
        if task_dir.exists():
            for path in sorted(task_dir.glob("transcript.attempt-*.jsonl")):
                transcripts.append({
                    "path": str(path.relative_to(workspace.root)),
                    "bytes": path.stat().st_size,
                })
        return {
            "task_id": task_id,
            "spec": plan.task(task_id).to_dict(),
            "state": task_state.to_dict() if task_state else {"kind": "unplanned"},
            "attempt": attempt,
            "summary": summary,
            "assessment": assessment,
            "transcripts": transcripts,
        }

    if static_dir is not None and static_dir.is_dir():
        @app.get("/")
        def index() -> FileResponse:
            return FileResponse(static_dir / "index.html")

        @app.get("/static/{path:path}")
        def static(path: str) -> FileResponse:
            target = (static_dir / path).resolve()
            if not str(target).startswith(str(static_dir.resolve())) or not target.is_file():
                raise HTTPException(status_code=404, detail="not found")
            return FileResponse(target)

    return app


def serve_readonly(workspace_roots: list[Path], *, host: str = "127.0.0.1",
                   port: int = 8080, api_token: str | None = None) -> None:
    """Serve completed or halted project journals without an engine."""
    import uvicorn

    hub = ProjectHub()
    for root in workspace_roots:
        ws = Workspace.open(root)
        try:
            header = open_journal(ws.journal_path).read_header()
        except JournalCorruption as exc:
            logger.warning("skipping %s: %s", root, exc)
            continue
        hub.register(header.get("project_id") or root.name, ws)
    app = create_app(hub, api_token=api_token)
    uvicorn.run(app, host=host, port=port, log_level="warning")
