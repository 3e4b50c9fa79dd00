from __future__ import annotations

import pytest

from longhaul.model import Plan, TaskSpec
from longhaul.workspace import Workspace


def make_plan(edges: dict[int, set[int]], n: int | None = None, *, goal: str = "test goal",
              version: int = 1) -> Plan:
    """Build a plan from a dependency map {task: deps}."""
    ids = sorted(set(edges) | {d for deps in edges.values() for d in deps})
    if n is not None:
        ids = sorted(set(ids) | set(range(1, n + 1)))
    tasks = tuple(
        TaskSpec(
            task_id=i,
            title=f"Task {i}",
            objective=f"Do stage {i}",
            success_criteria=(f"stage {i} done",),
            dependencies=frozenset(edges.get(i, set())),
        )
        for i in ids
    )
    return Plan(goal=goal, tasks=tasks, version=version)


def linear_plan(n: int, **kwargs) -> Plan:
    return make_plan({i: ({i - 1} if i > 1 else set()) for i in range(1, n + 1)}, **kwargs)


@pytest.fixture
def workspace(tmp_path):
    return Workspace.initialize(tmp_path / "ws")
