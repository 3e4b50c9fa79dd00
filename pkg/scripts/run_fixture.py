#!/usr/bin/env python3
"""Run a built-in scripted fixture project end to end in a fresh workspace
and report the outcome, journal digest, and timing."""

from __future__ import annotations

import argparse
import sys
import tempfile
import time
from pathlib import Path

from longhaul.fixtures import FIXTURES, get_fixture
from longhaul.journal import open_journal
from longhaul.orchestrator import Engine
from longhaul.workspace import Workspace


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("fixture", choices=sorted(FIXTURES), nargs="?",
                        default="polymer-twelve")
    parser.add_argument("--workspace", help="use this directory instead of a temp one")
    parser.add_argument("--resume-instruction", default="continue with the fix",
                        help="used automatically if the fixture halts")
    args = parser.parse_args()

    fixture = get_fixture(args.fixture)
    root = Path(args.workspace) if args.workspace else \
        Path(tempfile.mkdtemp(prefix="longhaul-")) / args.fixture
    workspace = Workspace.initialize(root)
    engine = Engine(workspace, fixture.config, fixture.backends(),
                    project_id=fixture.name)

    start = time.monotonic()
    plan = engine.propose_plan(fixture.spec())
    print(f"proposed plan v{plan.version}: {len(plan.tasks)} tasks")
    engine.approve("script")
    outcome = engine.run()
    if outcome.status == "halted":
        print(f"halted: {outcome.halt.reason}")
        engine.resume(args.resume_instruction)
        engine.approve("script")
        outcome = engine.run()
    elapsed = time.monotonic() - start

    journal = open_journal(workspace.journal_path)
    events = journal.read_events()
    print(f"outcome: {outcome.status} in {elapsed:.2f}s")
    print(f"workspace: {root}")
    print(f"events: {len(events)}")
    print(f"journal digest: {journal.digest()}")
    print(f"summaries: {workspace.summary_task_ids()}")
    return 0 if outcome.completed else 3


if __name__ == "__main__":
    sys.exit(main())
