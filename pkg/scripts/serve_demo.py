#!/usr/bin/env python3
"""Serve a live scripted project over the HTTP API for the dashboard.

Builds a 12-stage chain fixture in a temp workspace, proposes its plan,
and waits for approval through the API.  Each task sleeps for a scripted
duration so the board is watchable; operator halt and resume work at any
point.  The browser UI is served from frontend/dist when built.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
import threading
from pathlib import Path

import uvicorn

from longhaul.api import ProjectHub, create_app
from longhaul.fixtures import (
    Fixture,
    accept_entry,
    chain_plan,
    plan_entry,
    standard_worker_entries,
)
from longhaul.model import RunConfig
from longhaul.orchestrator import Engine
from longhaul.workspace import Workspace


def demo_fixture(n: int, step_delay: float) -> Fixture:
    plan = chain_plan(n, goal=f"Demonstration project in {n} watchable stages")
    entries = [plan_entry(plan, repeat=True)]  # reusable for any resume round
    for i in range(1, n + 1):
        entries += standard_worker_entries(i, tag="demo", sleep=step_delay)
        entries.append(accept_entry(i))
    config = RunConfig(concurrency_limit=1, step_budget=8, revise_budget=2)
    return Fixture(name="demo-twelve", plan=plan, entries=entries, config=config)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--tasks", type=int, default=12)
    parser.add_argument("--step-delay", type=float, default=0.5,
                        help="scripted seconds per task")
    parser.add_argument("--workspace", help="directory for the demo workspace")
    parser.add_argument("--frontend", help="built dashboard directory to serve",
                        default=str(Path(__file__).resolve().parents[1]
                                    / "frontend" / "dist"))
    parser.add_argument("--api-token", default=None)
    args = parser.parse_args()

    fixture = demo_fixture(args.tasks, args.step_delay)
    root = Path(args.workspace) if args.workspace else \
        Path(tempfile.mkdtemp(prefix="longhaul-demo-")) / "ws"
    workspace = Workspace.initialize(root)
    engine = Engine(workspace, fixture.config, fixture.backends(),
                    project_id=fixture.name)
    plan = engine.propose_plan(fixture.spec())

    def run_engine() -> None:
        outcome = engine.run()
        print(f"[demo] engine finished: {outcome.status}", flush=True)

    def runner() -> None:
        threading.Thread(target=run_engine, daemon=True, name="demo-engine").start()

    hub = ProjectHub()
    hub.register(fixture.name, workspace, engine=engine, runner=runner)
    static_dir = Path(args.frontend) if args.frontend else None
    app = create_app(hub, api_token=args.api_token, static_dir=static_dir)

    print(f"[demo] workspace: {root}", flush=True)
    print(f"[demo] proposed plan v{plan.version} with {len(plan.tasks)} tasks; "
          f"approve it via the dashboard or the API", flush=True)
    print(f"[demo] listening on http://{args.host}:{args.port}", flush=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
