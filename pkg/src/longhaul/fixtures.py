"""Scripted fixture projects at realistic plan scales.

Each fixture bundles a project brief, its plan, and the scripted backend
entries that deterministically drive the planner, every worker step, and
every assessment.  Worker steps plant per-task canary strings in their
assistant text so isolation tests can prove nothing leaks across task
contexts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .backend import ChatRequest, ChatResponse, ScriptEntry, ScriptedBackend, ToolCall
from .model import Plan, ProjectSpec, RunConfig, TaskSpec, canonical_json
from .orchestrator import RoleBackends


def canary(task_id: int, tag: str) -> str:
    return f"CANARY-TASK-{task_id}-{tag}"


def tool_call(name: str, arguments: dict, call_id: str) -> ToolCall:
    return ToolCall(name=name, arguments=canonical_json(arguments), call_id=call_id)


def worker_entry(task_id: int, step_no: int, calls: Sequence[ToolCall], *,
                 text: str = "", repeat: bool = True) -> ScriptEntry:
    return ScriptEntry(role_tag="worker", task_id=task_id, step_no=step_no,
                       response=ChatResponse(assistant_text=text, tool_calls=tuple(calls)),
                       repeat=repeat)


def verdict_entry(task_id: int, arguments: dict, *, step_no: int | None = 1,
                  repeat: bool = False, text: str = "") -> ScriptEntry:
    """Assessment entry; step_no matches the attempt number (None = any)."""
    call = tool_call("verdict", arguments, f"verdict-{task_id}")
    return ScriptEntry(role_tag="assessor", task_id=task_id, step_no=step_no,
                       response=ChatResponse(assistant_text=text, tool_calls=(call,)),
                       repeat=repeat)


def accept_entry(task_id: int, *, repeat: bool = True) -> ScriptEntry:
    return verdict_entry(task_id, {"kind": "accept"}, step_no=None, repeat=repeat)


def plan_entry(plan: Plan, *, repeat: bool = False) -> ScriptEntry:
    args = {"goal": plan.goal, "tasks": [t.to_dict() for t in plan.tasks]}
    call = tool_call("propose_plan", args, f"plan-v{plan.version}")
    return ScriptEntry(role_tag="planner",
                       response=ChatResponse(assistant_text="", tool_calls=(call,)),
                       repeat=repeat)


def chain_plan(n: int, *, goal: str) -> Plan:
    tasks = []
    for i in range(1, n + 1):
        deps = frozenset({i - 1}) if i > 1 else frozenset()
        tasks.append(TaskSpec(
            task_id=i,
            title=f"Stage {i}",
            objective=f"Produce the stage-{i} output from the prior stage.",
            success_criteria=(f"shared/task-{i}.txt exists and records stage {i}",),
            dependencies=deps,
            expected_artifacts=(f"shared/task-{i}.txt",),
        ))
    return Plan(goal=goal, tasks=tuple(tasks), version=1)


def dag_plan(edges: dict[int, Iterable[int]], n: int, *, goal: str) -> Plan:
    tasks = []
    for i in range(1, n + 1):
        deps = frozenset(edges.get(i, ()))
        tasks.append(TaskSpec(
            task_id=i,
            title=f"Stage {i}",
            objective=f"Produce the stage-{i} output.",
            success_criteria=(f"shared/task-{i}.txt exists and records stage {i}",),
            dependencies=deps,
            expected_artifacts=(f"shared/task-{i}.txt",),
        ))
    return Plan(goal=goal, tasks=tuple(tasks), version=1)


def standard_worker_entries(task_id: int, *, tag: str, sleep: float | None = None,
                            use_command: bool = False) -> list[ScriptEntry]:
    """The default worker script for one task: do the work, write the
    artifact, declare completion with an honest summary.  With ``sleep``
    the whole task collapses into a single timed step so wall-clock
    measurements see exactly one scripted duration per task."""
    if sleep is not None:
        return [worker_entry(
            task_id, 1,
            [
                tool_call("run_command", {"command": f"sleep {sleep}"}, f"t{task_id}s1r"),
                tool_call("write_file",
                          {"path": f"shared/task-{task_id}.txt",
                           "content": f"output of stage {task_id}\n"},
                          f"t{task_id}s1w"),
                tool_call("task_complete",
                          {"outcome": f"stage {task_id} complete",
                           "artifacts": [{"path": f"shared/task-{task_id}.txt",
                                          "description": f"stage {task_id} output"}],
                           "usage_notes": f"read shared/task-{task_id}.txt as UTF-8 text",
                           "data_formats": "plain text",
                           "metrics": [{"name": "stage", "value": task_id,
                                        "unit": "index"}]},
                          f"t{task_id}s1c"),
            ],
            text=f"Working on stage {task_id}. [{canary(task_id, tag)}]")]
    entries = []
    step = 1
    if use_command:
        entries.append(worker_entry(
            task_id, step,
            [tool_call("run_command", {"command": f"echo stage-{task_id}-output"},
                       f"t{task_id}s{step}")],
            text=f"Running stage {task_id} computation. [{canary(task_id, tag)}]"))
        step += 1
    entries.append(worker_entry(
        task_id, step,
        [
            tool_call("write_file",
                      {"path": f"shared/task-{task_id}.txt",
                       "content": f"output of stage {task_id}\n"},
                      f"t{task_id}s{step}w"),
            tool_call("task_complete",
                      {"outcome": f"stage {task_id} complete",
                       "artifacts": [{"path": f"shared/task-{task_id}.txt",
                                      "description": f"stage {task_id} output"}],
                       "usage_notes": f"read shared/task-{task_id}.txt as UTF-8 text",
                       "data_formats": "plain text",
                       "metrics": [{"name": "stage", "value": task_id, "unit": "index"}]},
                      f"t{task_id}s{step}c"),
        ],
        text=f"Stage {task_id} artifacts ready. [{canary(task_id, tag)}]"))
    return entries


@dataclass
class Fixture:
    name: str
    plan: Plan
    entries: list[ScriptEntry]
    config: RunConfig
    description: str = ""

    def spec(self, project_id: str | None = None) -> ProjectSpec:
        return ProjectSpec(project_id=project_id or self.name,
                           instruction=f"Scripted fixture project: {self.plan.goal}",
                           config=self.config)

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.entries)

    def backends(self) -> RoleBackends:
        return RoleBackends.uniform(self.backend())


class RequestLog:
    """Backend wrapper capturing every request, for isolation assertions."""

    def __init__(self, inner):
        self.inner = inner
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
        return self.inner.complete(request)


def logged_backends(fixture: Fixture) -> tuple[RoleBackends, RequestLog]:
    log = RequestLog(fixture.backend())
    return RoleBackends.uniform(log), log


# ---------------------------------------------------------------------------
# Named fixtures


def chain_fixture(n: int, *, name: str, goal: str, use_command_for: frozenset[int] = frozenset(),
                  concurrency: int = 1) -> Fixture:
    plan = chain_plan(n, goal=goal)
    entries = [plan_entry(plan)]
    for i in range(1, n + 1):
        entries += standard_worker_entries(i, tag=name, use_command=i in use_command_for)
        entries.append(accept_entry(i))
    config = RunConfig(concurrency_limit=concurrency, step_budget=8, revise_budget=2)
    return Fixture(name=name, plan=plan, entries=entries, config=config,
                   description=f"{n}-stage chain, all accepted")


def parallel_fixture(n: int = 35, *, limit: int = 8, sleep: float = 0.3,
                     name: str = "parallel-thirtyfive") -> Fixture:
    plan = dag_plan({}, n, goal=f"Run {n} independent simulations under supervision")
    entries = [plan_entry(plan)]
    for i in range(1, n + 1):
        entries += standard_worker_entries(i, tag=name, sleep=sleep)
        entries.append(accept_entry(i))
    config = RunConfig(concurrency_limit=limit, step_budget=8, revise_budget=2)
    return Fixture(name=name, plan=plan, entries=entries, config=config,
                   description=f"{n} independent tasks, limit {limit}, {sleep}s each")


def redo_fixture(name: str = "redo-eleven") -> Fixture:
    """11-stage chain where assessing stage 11 exposes weak upstream results
    and rolls the project back to stage 8."""
    plan = chain_plan(11, goal="Simulation study with a statistical rollback")
    entries = [plan_entry(plan)]
    for i in range(1, 12):
        entries += standard_worker_entries(i, tag=name)
    for i in range(1, 11):
        entries.append(accept_entry(i))
    entries.append(verdict_entry(11, {
        "kind": "redo_from", "target": 8,
        "reason": "statistically weak upstream results; redo stage 8 onward "
                  "under stricter conditions"}))
    entries.append(accept_entry(11))
    config = RunConfig(concurrency_limit=1, step_budget=8, revise_budget=2)
    return Fixture(name=name, plan=plan, entries=entries, config=config,
                   description="11-stage chain with RedoFrom(8) at stage 11")


def halt_resume_fixture(name: str = "halt-twelve") -> Fixture:
    """12-stage chain halted at stage 6; the scripted resume revision keeps
    stages 1-5 byte-identical and adjusts stage 6."""
    plan = chain_plan(12, goal="Long project halted and resumed at stage 6")
    revised_tasks = []
    for task in plan.tasks:
        if task.task_id == 6:
            revised_tasks.append(TaskSpec(
                task_id=6, title=task.title,
                objective=task.objective + " Apply the operator-supplied fix.",
                success_criteria=task.success_criteria,
                dependencies=task.dependencies,
                expected_artifacts=task.expected_artifacts))
        else:
            revised_tasks.append(task)
    revised = Plan(goal=plan.goal, tasks=tuple(revised_tasks), version=2)

    entries = [plan_entry(plan), plan_entry(revised)]
    for i in range(1, 13):
        entries += standard_worker_entries(i, tag=name)
    for i in range(1, 6):
        entries.append(accept_entry(i))
    entries.append(verdict_entry(6, {
        "kind": "halt",
        "reason": "stage 6 lacks a prerequisite the plan assumed; operator help needed"}))
    entries.append(accept_entry(6))
    for i in range(7, 13):
        entries.append(accept_entry(i))
    config = RunConfig(concurrency_limit=1, step_budget=8, revise_budget=2)
    return Fixture(name=name, plan=plan, entries=entries, config=config,
                   description="12-stage chain with halt at 6 and scripted resume")


def nine_stage_fixture(name: str = "alloy-nine") -> Fixture:
    """9 stages shaped like a simulation campaign: setup chain, a parallel
    middle, then analysis and report."""
    edges = {2: [1], 3: [2], 4: [3], 5: [4], 6: [4], 7: [4], 8: [5, 6, 7], 9: [8]}
    plan = dag_plan(edges, 9, goal="Monte-Carlo campaign: implement, verify, run, analyze")
    entries = [plan_entry(plan)]
    for i in range(1, 10):
        entries += standard_worker_entries(i, tag=name, use_command=i in (5, 6, 7))
        entries.append(accept_entry(i))
    config = RunConfig(concurrency_limit=1, step_budget=8, revise_budget=2)
    return Fixture(name=name, plan=plan, entries=entries, config=config,
                   description="9-stage campaign DAG")


FIXTURES: dict[str, Callable[[], Fixture]] = {
    "alloy-nine": nine_stage_fixture,
    "polymer-twelve": lambda: chain_fixture(
        12, name="polymer-twelve", goal="Predictive modeling pipeline in 12 stages",
        use_command_for=frozenset({3, 7})),
    "efield-sixteen": lambda: chain_fixture(
        16, name="efield-sixteen", goal="Field-driven simulation study in 16 stages"),
    "santa-twentyseven": lambda: chain_fixture(
        27, name="santa-twentyseven", goal="Search-and-optimize pipeline in 27 stages"),
    "parallel-thirtyfive": parallel_fixture,
    "redo-eleven": redo_fixture,
    "halt-twelve": halt_resume_fixture,
}


def get_fixture(name: str) -> Fixture:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
    return FIXTURES[name]()
