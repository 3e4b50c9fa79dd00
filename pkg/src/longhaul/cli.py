"""Command-line lifecycle: init, plan, approve, run, status, halt, resume,
inspect, replay, serve.

Exit codes: 0 success / run completed, 2 wrong-state or usage error,
3 run ended halted, 1 unexpected fatal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from . import fixtures as fixture_mod
from .api import ProjectHub, create_app, snapshot_from_state
from .backend import OpenAICompatibleBackend
from .journal import open_journal
from .model import (
    JournalCorruption,
    PlanApproved,
    ProjectHalted,
    ProjectResumed,
    ProjectSpec,
    RunConfig,
    TaskStateKind,
)
from .orchestrator import Engine, EngineStateError, RoleBackends
from .planner import InteractionChannel, PlanningError, ScriptedChannel, UnattendedChannel
from .workspace import Workspace, WorkspaceError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_USAGE = 2
EXIT_HALTED = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        return RunConfig.from_dict(data)
    workspace = getattr(args, "workspace", None)
    if workspace:
        project_file = Path(workspace) / "project.json"
        if project_file.exists():
            spec = ProjectSpec.from_dict(json.loads(project_file.read_text(encoding="utf-8")))
            return spec.config
    return RunConfig()


def _load_project(workspace: Workspace) -> ProjectSpec:
    if not workspace.project_file.exists():
        raise CliError("workspace has no project.json; run init first")
    return ProjectSpec.from_dict(
        json.loads(workspace.project_file.read_text(encoding="utf-8")))


def _open_workspace(args) -> Workspace:
    try:
        return Workspace.open(Path(args.workspace))
    except WorkspaceError as exc:
        raise CliError(str(exc))


def _backends(args, config: RunConfig) -> RoleBackends:
    if getattr(args, "fixture", None):
        return fixture_mod.get_fixture(args.fixture).backends()
    try:
        return RoleBackends.uniform(OpenAICompatibleBackend(timeout=config.tool_timeout))
    except Exception as exc:
        raise CliError(
            f"no backend available ({exc}); pass --fixture or configure the "
            "live provider environment")


def _channel(args) -> InteractionChannel:
    if getattr(args, "answer_file", None):
        answers = [line for line in Path(args.answer_file)
                   .read_text(encoding="utf-8").splitlines() if line.strip()]
        return ScriptedChannel(answers)
    if getattr(args, "yes", False):
        return UnattendedChannel()

    class _Prompt:
        def ask(self, question: str) -> str:
            print(f"[planner] {question}")
            return input("> ")

    return _Prompt()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_init(args) -> int:
    config = _load_config(args)
    root = Path(args.workspace)
    instruction = args.instruction
    if args.instruction_file:
        instruction = Path(args.instruction_file).read_text(encoding="utf-8")
    if args.fixture:
        fixture = fixture_mod.get_fixture(args.fixture)
        spec = fixture.spec(args.project_id)
        if not getattr(args, "config", None):
            config = fixture.config
            spec = ProjectSpec(project_id=spec.project_id, instruction=spec.instruction,
                               config=config)
    else:
        if not instruction:
            raise CliError("init needs --instruction, --instruction-file, or --fixture")
        spec = ProjectSpec(project_id=args.project_id or "project",
                           instruction=instruction, config=config)
    try:
        workspace = Workspace.initialize(root)
    except WorkspaceError as exc:
        raise CliError(str(exc))
    workspace.project_file.write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"initialized workspace {root} for project {spec.project_id!r}")
    return EXIT_OK


def cmd_plan(args) -> int:
    workspace = _open_workspace(args)
    spec = _load_project(workspace)
    config = spec.config if not getattr(args, "config", None) else _load_config(args)
    backends = _backends(args, config)
    engine = Engine(workspace, config, backends, project_id=spec.project_id)
    try:
        plan = engine.propose_plan(spec, _channel(args))
    except PlanningError as exc:
        raise CliError(f"planning failed: {exc}")
    print(f"proposed plan version {plan.version} with {len(plan.tasks)} tasks:")
    for task in plan.tasks:
        deps = ",".join(str(d) for d in sorted(task.dependencies)) or "-"
        print(f"  {task.task_id:>3}  {task.title}  (deps: {deps})")
    print("review and approve with: longhaul approve --workspace "
          f"{args.workspace}")
    return EXIT_OK


def cmd_approve(args) -> int:
    workspace = _open_workspace(args)
    journal = open_journal(workspace.journal_path)
    state = journal.fold()
    if state.proposed_plan is None:
        raise CliError("no plan has been proposed")
    if state.approved_version >= state.proposed_plan.version:
        raise CliError("plan already approved")
    if not args.yes:
        print(f"plan version {state.proposed_plan.version}: "
              f"{len(state.proposed_plan.tasks)} tasks for goal "
              f"{state.proposed_plan.goal!r}")
        answer = input("approve? [y/N] ").strip().lower()
        if answer not in ("y", "yes"):
            print("not approved")
            return EXIT_USAGE
    journal.append(PlanApproved(version=state.proposed_plan.version, actor=args.actor))
    pending = workspace.root / "resume-pending.json"
    if state.halt is not None:
        instruction = ""
        if pending.exists():
            instruction = json.loads(pending.read_text(encoding="utf-8")).get("instruction", "")
            pending.unlink()
        journal.append(ProjectResumed(instruction=instruction))
        print(f"approved plan version {state.proposed_plan.version}; project resumed")
    else:
        print(f"approved plan version {state.proposed_plan.version}")
    return EXIT_OK


def cmd_run(args) -> int:
    workspace = _open_workspace(args)
    spec = _load_project(workspace)
    config = spec.config if not getattr(args, "config", None) else _load_config(args)
    backends = _backends(args, config)
    try:
        engine = Engine.recover(workspace, config, backends, project_id=spec.project_id)
    except JournalCorruption as exc:
        raise CliError(f"journal is corrupt: {exc}", EXIT_FATAL)

    server = None
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        hub = ProjectHub()
        hub.register(spec.project_id, workspace, engine=engine)
        app = create_app(hub, api_token=args.api_token)
        import uvicorn

        server = uvicorn.Server(uvicorn.Config(
            app, host=host or "127.0.0.1", port=int(port), log_level="warning"))
        threading.Thread(target=server.run, daemon=True).start()

    try:
        outcome = engine.run()
    except EngineStateError as exc:
        raise CliError(str(exc))
    finally:
        if server is not None:
            server.should_exit = True
    if outcome.completed:
        print("Completed")
        return EXIT_OK
    print(f"Halted: {outcome.halt.reason if outcome.halt else 'unknown'}")
    return EXIT_HALTED


def _render_snapshot(snapshot: dict) -> str:
    lines = [
        f"project: {snapshot['project_id']}",
        f"plan version: {snapshot['plan_version']} "
        f"(proposed: {snapshot['proposed_version']})",
        f"completed: {snapshot['completed']}",
        f"last event: {snapshot['last_event']}",
    ]
    if snapshot["halt"]:
        lines.append(f"halted: {snapshot['halt']['reason']} "
                     f"(by {snapshot['halt']['issued_by']})")
    for task in snapshot["tasks"]:
        state = task["state"]
        extra = ""
        if "attempt" in state:
            extra = f" attempt {state['attempt']}"
        if "cause" in state:
            extra = f" cause {state['cause']}"
        lines.append(f"  task {task['task_id']:>3} [{state['kind']}{extra}] {task['title']}")
    return "\n".join(lines)


def cmd_status(args) -> int:
    workspace = _open_workspace(args)
    try:
        journal = open_journal(workspace.journal_path)
    except (JournalCorruption, FileNotFoundError) as exc:
        raise CliError(f"no readable journal: {exc}")
    state = journal.fold()
    snapshot = snapshot_from_state(_load_project(workspace).project_id, state)
    if args.json:
        print(json.dumps(snapshot, indent=2, sort_keys=True))
    else:
        print(_render_snapshot(snapshot))
    return EXIT_OK


def cmd_halt(args) -> int:
    if args.api:
        import httpx

        response = httpx.post(f"{args.api}/projects/{args.project_id}/halt",
                              json={"reason": args.reason, "request_id": args.request_id},
                              headers=_auth_headers(args), timeout=10.0)
        if response.status_code >= 400:
            raise CliError(f"halt refused: {response.text}")
        print("halt requested")
        return EXIT_OK
    workspace = _open_workspace(args)
    journal = open_journal(workspace.journal_path)
    state = journal.fold()
    if state.halt is not None:
        raise CliError("project already halted")
    if state.completed:
        raise CliError("project already completed")
    frontier = tuple(sorted(t for t, s in state.task_states.items()
                            if s.kind in (TaskStateKind.RUNNING,
                                          TaskStateKind.AWAITING_ASSESSMENT)))
    journal.append(ProjectHalted(reason=args.reason, frontier=frontier,
                                 issued_by="operator", failed_task=None))
    print("halted")
    return EXIT_OK


def _auth_headers(args) -> dict:
    token = getattr(args, "api_token", None)
    return {"Authorization": f"Bearer {token}"} if token else {}


def cmd_resume(args) -> int:
    workspace = _open_workspace(args)
    spec = _load_project(workspace)
    config = spec.config if not getattr(args, "config", None) else _load_config(args)
    backends = _backends(args, config)
    engine = Engine(workspace, config, backends, project_id=spec.project_id)
    try:
        plan = engine.resume(args.instruction)
    except (EngineStateError, PlanningError) as exc:
        raise CliError(str(exc))
    (workspace.root / "resume-pending.json").write_text(
        json.dumps({"instruction": args.instruction}) + "\n", encoding="utf-8")
    print(f"proposed resume plan version {plan.version}")
    if args.yes:
        args.actor = "operator"
        cmd_approve(args)
        if args.run:
            return cmd_run(args)
    elif args.run:
        raise CliError("--run requires --yes (the revision must be approved first)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    workspace = _open_workspace(args)
    journal = open_journal(workspace.journal_path)
    state = journal.fold()
    plan = state.plan or state.proposed_plan
    if plan is None or not plan.has_task(args.task_id):
        raise CliError(f"unknown task {args.task_id}")
    task = plan.task(args.task_id)
    task_state = state.task_states.get(args.task_id)
    print(f"task {task.task_id}: {task.title}")
    print(f"  state: {task_state.to_dict() if task_state else 'unplanned'}")
    print(f"  attempt: {state.attempts.get(args.task_id, 0)}")
    print(f"  objective: {task.objective}")
    for criterion in task.success_criteria:
        print(f"  criterion: {criterion}")
    if workspace.has_summary(args.task_id):
        print("  summary:")
        print(json.dumps(workspace.read_summary(args.task_id).to_dict(), indent=4,
                         sort_keys=True))
    attempt = state.attempts.get(args.task_id, 0)
    if attempt:
        manifest = workspace.assessment_path(args.task_id, attempt)
        if manifest.exists():
            print(f"  assessment manifest: {manifest.relative_to(workspace.root)}")
        transcript = workspace.transcript_path(args.task_id, attempt)
        if transcript.exists():
            print(f"  transcript: {transcript.relative_to(workspace.root)} "
                  f"({transcript.stat().st_size} bytes)")
    return EXIT_OK


def cmd_replay(args) -> int:
    workspace = _open_workspace(args)
    try:
        journal = open_journal(workspace.journal_path)
        events = journal.read_events()
    except JournalCorruption as exc:
        raise CliError(f"journal is corrupt: {exc}", EXIT_FATAL)
    state = journal.fold()
    project_id = journal.read_header().get("project_id", "project")
    snapshot = snapshot_from_state(project_id, state)
    if args.json:
        print(json.dumps({"snapshot": snapshot, "events": len(events),
                          "digest": journal.digest()}, indent=2, sort_keys=True))
    else:
        print(_render_snapshot(snapshot))
        print(f"events: {len(events)}")
        print(f"journal digest: {journal.digest()}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .api import serve_readonly

    serve_readonly([Path(w) for w in args.workspace], host=args.host, port=args.port,
                   api_token=args.api_token)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longhaul",
        description="Durable plan-and-execute orchestration for long-horizon projects.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workspace: bool = True):
        if workspace:
            p.add_argument("--workspace", required=True, help="project workspace directory")
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--fixture", help="use a built-in scripted fixture backend")
        p.add_argument("--api-token", help="bearer token for --listen / --api")

    p = sub.add_parser("init", help="create a workspace for a new project")
    common(p)
    p.add_argument("--project-id", default=None,
                   help="defaults to the fixture name, else 'project'")
    p.add_argument("--instruction", help="project brief text")
    p.add_argument("--instruction-file", help="file containing the project brief")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("plan", help="run the planner and propose a plan")
    common(p)
    p.add_argument("--yes", action="store_true", help="answer questions unattended")
    p.add_argument("--answer-file", help="scripted answers, one per line")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("approve", help="approve the proposed plan")
    common(p)
    p.add_argument("--actor", default="operator")
    p.add_argument("--yes", action="store_true", help="approve without prompting")
    p.set_defaults(func=cmd_approve)

    p = sub.add_parser("run", help="execute the approved plan to completion or halt")
    common(p)
    p.add_argument("--listen", help="serve the HTTP API at HOST:PORT during the run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("status", help="show the current project state")
    common(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("halt", help="halt the project")
    common(p)
    p.add_argument("--reason", required=True)
    p.add_argument("--api", help="URL of a live engine API to halt through")
    p.add_argument("--project-id", default="project")
    p.add_argument("--request-id", default="cli-halt")
    p.set_defaults(func=cmd_halt)

    p = sub.add_parser("resume", help="revise the plan of a halted project")
    common(p)
    p.add_argument("--instruction", default="")
    p.add_argument("--yes", action="store_true", help="approve the revision immediately")
    p.add_argument("--run", action="store_true", help="continue the run after approval")
    p.add_argument("--listen", help="serve the HTTP API during the resumed run")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("inspect", help="show one task's state, summary, and artifacts")
    common(p)
    p.add_argument("task_id", type=int)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("replay", help="fold the journal and print the derived state")
    common(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="serve journals over HTTP (read-only)")
    p.add_argument("--workspace", action="append", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--api-token")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except JournalCorruption as exc:
        print(f"error: journal corrupt: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
