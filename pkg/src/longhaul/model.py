"""Domain types and the pure graph/state algebra shared by every module.

Everything here is an immutable value or a pure function over immutable
values: plan validation, the ready-set computation, invalidation closures
for rollback, and the deterministic fold of the event journal into a
project state.  Nothing in this module touches the filesystem or a clock.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

JOURNAL_SCHEMA_VERSION = 1


class ModelError(ValueError):
    """Raised when a value violates a structural invariant."""


class JournalCorruption(ModelError):
    """Raised when an event sequence could not have been written by the engine."""


def canonical_json(value: Any) -> str:
    """Serialize to the canonical compact JSON form used for digests and journals."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_digest(value: Any) -> str:
    """SHA-256 hex digest of the canonical JSON encoding of ``value``."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


_SEVERITIES = ("minor", "major")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ModelError(message)


def _check_relative_path(path: str, what: str) -> str:
    _require(isinstance(path, str) and path != "", f"{what} must be a non-empty string")
    _require(not path.startswith("/"), f"{what} must be relative: {path!r}")
    _require("\x00" not in path, f"{what} must not contain NUL bytes")
    parts = path.split("/")
    _require(".." not in parts, f"{what} must not contain parent-directory segments: {path!r}")
    return path


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """Operational budgets and limits for a project run.

    ``concurrency_limit`` bounds simultaneously running workers,
    ``step_budget`` is the hard step ceiling per task attempt, and
    ``revise_budget`` the number of Revise retries granted per task before
    escalation to a project-level assessment.
    """

    concurrency_limit: int = 4
    step_budget: int = 32
    revise_budget: int = 2
    assess_reprompt_limit: int = 3
    tool_timeout: float = 60.0
    output_truncation: int = 65536
    # Plumbing limits beyond the core budgets.
    max_tool_timeout: float = 3600.0
    summary_cap: int = 16384
    context_budget: int = 262144
    keep_recent_steps: int = 10
    drain_seconds: float = 5.0
    poll_interval: float = 2.0
    unattended: bool = False
    unattended_answer: str = "Proceed with stated assumptions."
    env_allowlist: tuple[str, ...] = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR")

    def __post_init__(self) -> None:
        _require(self.concurrency_limit >= 1, "concurrency_limit must be >= 1")
        _require(self.step_budget >= 1, "step_budget must be >= 1")
        _require(self.revise_budget >= 0, "revise_budget must be >= 0")
        _require(self.assess_reprompt_limit >= 1, "assess_reprompt_limit must be >= 1")
        for name in ("tool_timeout", "max_tool_timeout", "drain_seconds", "poll_interval"):
            _require(getattr(self, name) > 0, f"{name} must be positive")
        _require(self.output_truncation >= 1, "output_truncation must be >= 1")
        _require(self.summary_cap >= 1, "summary_cap must be >= 1")
        _require(self.context_budget >= 1, "context_budget must be >= 1")
        _require(self.keep_recent_steps >= 1, "keep_recent_steps must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "concurrency_limit": self.concurrency_limit,
            "step_budget": self.step_budget,
            "revise_budget": self.revise_budget,
            "assess_reprompt_limit": self.assess_reprompt_limit,
            "tool_timeout": self.tool_timeout,
            "output_truncation": self.output_truncation,
            "max_tool_timeout": self.max_tool_timeout,
            "summary_cap": self.summary_cap,
            "context_budget": self.context_budget,
            "keep_recent_steps": self.keep_recent_steps,
            "drain_seconds": self.drain_seconds,
            "poll_interval": self.poll_interval,
            "unattended": self.unattended,
            "unattended_answer": self.unattended_answer,
            "env_allowlist": list(self.env_allowlist),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        kwargs = dict(data)
        if "env_allowlist" in kwargs:
            kwargs["env_allowlist"] = tuple(kwargs["env_allowlist"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ProjectSpec:
    """The user-provided brief for a project."""

    project_id: str
    instruction: str
    attachments: tuple[tuple[str, int], ...] = ()
    config: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self) -> None:
        _require(bool(self.project_id), "project_id must be non-empty")
        _require(bool(self.instruction.strip()), "instruction must be non-empty")
        for path, length in self.attachments:
            _check_relative_path(path, "attachment path")
            _require(length >= 0, f"attachment byte length must be >= 0: {path!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "project_id": self.project_id,
            "instruction": self.instruction,
            "attachments": [[p, n] for p, n in self.attachments],
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProjectSpec":
        return cls(
            project_id=data["project_id"],
            instruction=data["instruction"],
            attachments=tuple((p, int(n)) for p, n in data.get("attachments", [])),
            config=RunConfig.from_dict(data.get("config", {})),
        )


# ---------------------------------------------------------------------------
# Plans and tasks


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    title: str
    objective: str
    success_criteria: tuple[str, ...]
    dependencies: frozenset[int] = frozenset()
    expected_artifacts: tuple[str, ...] = ()
    hints: str | None = None

    def __post_init__(self) -> None:
        _require(isinstance(self.task_id, int) and self.task_id > 0,
                 f"task_id must be a positive integer, got {self.task_id!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "title": self.title,
            "objective": self.objective,
            "success_criteria": list(self.success_criteria),
            "dependencies": sorted(self.dependencies),
            "expected_artifacts": list(self.expected_artifacts),
            "hints": self.hints,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskSpec":
        return cls(
            task_id=int(data["task_id"]),
            title=data["title"],
            objective=data["objective"],
            success_criteria=tuple(data["success_criteria"]),
            dependencies=frozenset(int(d) for d in data.get("dependencies", [])),
            expected_artifacts=tuple(data.get("expected_artifacts", [])),
            hints=data.get("hints"),
        )


@dataclass(frozen=True)
class Plan:
    goal: str
    tasks: tuple[TaskSpec, ...]
    version: int = 1

    def task_ids(self) -> list[int]:
        return [t.task_id for t in self.tasks]

    def task(self, task_id: int) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise ModelError(f"plan has no task {task_id}")

    def has_task(self, task_id: int) -> bool:
        return any(t.task_id == task_id for t in self.tasks)

    def dependents_of(self, task_id: int) -> set[int]:
        return {t.task_id for t in self.tasks if task_id in t.dependencies}

    def to_dict(self) -> dict[str, Any]:
        return {
            "goal": self.goal,
            "version": self.version,
            "tasks": [t.to_dict() for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Plan":
        return cls(
            goal=data["goal"],
            version=int(data.get("version", 1)),
            tasks=tuple(TaskSpec.from_dict(t) for t in data["tasks"]),
        )


@dataclass(frozen=True)
class Violation:
    """One plan-validation failure, naming the offending task and rule."""

    rule: str
    message: str
    task_id: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"rule": self.rule, "message": self.message, "task_id": self.task_id}


def validate_plan(plan: Plan) -> list[Violation]:
    """Check every plan invariant; an empty report means the plan is valid.

    Violations are data, not errors: callers feed them back to the planner
    for a reprompt round.
    """
    violations: list[Violation] = []
    if not plan.tasks:
        violations.append(Violation("empty-plan", "plan has no tasks"))
        return violations
    if not plan.goal.strip():
        violations.append(Violation("empty-goal", "plan goal is empty"))
    if plan.version < 1:
        violations.append(Violation("bad-version", f"plan version must be >= 1, got {plan.version}"))

    seen: set[int] = set()
    for task in plan.tasks:
        if task.task_id in seen:
            violations.append(Violation(
                "duplicate-id", f"task id {task.task_id} appears more than once", task.task_id))
        seen.add(task.task_id)

    ids = {t.task_id for t in plan.tasks}
    for task in plan.tasks:
        if not task.title.strip():
            violations.append(Violation("empty-title", f"task {task.task_id} has an empty title", task.task_id))
        if not task.objective.strip():
            violations.append(Violation(
                "empty-objective", f"task {task.task_id} has an empty objective", task.task_id))
        if not task.success_criteria or not any(c.strip() for c in task.success_criteria):
            violations.append(Violation(
                "empty-criteria", f"task {task.task_id} has no success criteria", task.task_id))
        if task.task_id in task.dependencies:
            violations.append(Violation(
                "self-dependency", f"task {task.task_id} depends on itself", task.task_id))
        for dep in sorted(task.dependencies):
            if dep not in ids:
                violations.append(Violation(
                    "unknown-dependency",
                    f"task {task.task_id} depends on unknown task {dep}", task.task_id))
        for path in task.expected_artifacts:
            try:
                _check_relative_path(path, f"task {task.task_id} expected artifact")
            except ModelError as exc:
                violations.append(Violation("bad-artifact-path", str(exc), task.task_id))

    cycle = _find_cycle(plan)
    if cycle:
        names = ",".join(str(t) for t in cycle)
        violations.append(Violation("cycle", f"cycle through {names}", cycle[0]))
    return violations


def _find_cycle(plan: Plan) -> list[int] | None:
    """Return the node ids of one dependency cycle, or None if acyclic."""
    ids = {t.task_id for t in plan.tasks}
    deps = {t.task_id: [d for d in sorted(t.dependencies) if d in ids] for t in plan.tasks}
    WHITE, GREY, BLACK = 0, 1, 2
    color = {i: WHITE for i in deps}
    stack: list[int] = []

    def visit(node: int) -> list[int] | None:
        color[node] = GREY
        stack.append(node)
        for dep in deps[node]:
            if color[dep] == GREY:
                idx = stack.index(dep)
                return sorted(stack[idx:])
            if color[dep] == WHITE:
                found = visit(dep)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for start in sorted(deps):
        if color[start] == WHITE:
            found = visit(start)
            if found:
                return found
    return None


# ---------------------------------------------------------------------------
# Task states


class TaskStateKind(str, Enum):
    PENDING = "pending"
    READY = "ready"
    RUNNING = "running"
    AWAITING_ASSESSMENT = "awaiting_assessment"
    ACCEPTED = "accepted"
    INVALIDATED = "invalidated"
    FAILED = "failed"
    HALTED_WITH_PROJECT = "halted_with_project"


@dataclass(frozen=True)
class TaskState:
    kind: TaskStateKind
    attempt: int | None = None
    cause: int | None = None

    @staticmethod
    def pending() -> "TaskState":
        return TaskState(TaskStateKind.PENDING)

    @staticmethod
    def running(attempt: int) -> "TaskState":
        return TaskState(TaskStateKind.RUNNING, attempt=attempt)

    @staticmethod
    def awaiting_assessment(attempt: int) -> "TaskState":
        return TaskState(TaskStateKind.AWAITING_ASSESSMENT, attempt=attempt)

    @staticmethod
    def accepted() -> "TaskState":
        return TaskState(TaskStateKind.ACCEPTED)

    @staticmethod
    def invalidated(cause: int) -> "TaskState":
        return TaskState(TaskStateKind.INVALIDATED, cause=cause)

    @staticmethod
    def failed() -> "TaskState":
        return TaskState(TaskStateKind.FAILED)

    @staticmethod
    def halted_with_project() -> "TaskState":
        return TaskState(TaskStateKind.HALTED_WITH_PROJECT)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.attempt is not None:
            out["attempt"] = self.attempt
        if self.cause is not None:
            out["cause"] = self.cause
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskState":
        return cls(TaskStateKind(data["kind"]), attempt=data.get("attempt"), cause=data.get("cause"))


# ---------------------------------------------------------------------------
# Summaries and verdicts


@dataclass(frozen=True)
class TaskSummary:
    """The compact cross-task record through which later tasks inherit results."""

    task_id: int
    outcome: str
    artifact_index: tuple[tuple[str, str], ...] = ()
    usage_notes: str = ""
    data_formats: str = ""
    metrics: tuple[tuple[str, float, str], ...] = ()

    def __post_init__(self) -> None:
        for path, _desc in self.artifact_index:
            _check_relative_path(path, "summary artifact path")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "outcome": self.outcome,
            "artifact_index": [{"path": p, "description": d} for p, d in self.artifact_index],
            "usage_notes": self.usage_notes,
            "data_formats": self.data_formats,
            "metrics": [{"name": n, "value": v, "unit": u} for n, v, u in self.metrics],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskSummary":
        return cls(
            task_id=int(data["task_id"]),
            outcome=data["outcome"],
            artifact_index=tuple((a["path"], a.get("description", "")) for a in data.get("artifact_index", [])),
            usage_notes=data.get("usage_notes", ""),
            data_formats=data.get("data_formats", ""),
            metrics=tuple((m["name"], float(m["value"]), m.get("unit", ""))
                          for m in data.get("metrics", [])),
        )


@dataclass(frozen=True)
class Accept:
    final_summary: TaskSummary | None = None


@dataclass(frozen=True)
class Revise:
    feedback: str
    severity: str = "minor"

    def __post_init__(self) -> None:
        _require(bool(self.feedback.strip()), "Revise feedback must be non-empty")
        _require(self.severity in _SEVERITIES, f"severity must be one of {_SEVERITIES}")


@dataclass(frozen=True)
class RedoFrom:
    target: int
    reason: str

    def __post_init__(self) -> None:
        _require(bool(self.reason.strip()), "RedoFrom reason must be non-empty")


@dataclass(frozen=True)
class Halt:
    reason: str

    def __post_init__(self) -> None:
        _require(bool(self.reason.strip()), "Halt reason must be non-empty")


Verdict = Accept | Revise | RedoFrom | Halt


def verdict_to_dict(verdict: Verdict) -> dict[str, Any]:
    if isinstance(verdict, Accept):
        return {
            "kind": "accept",
            "final_summary": verdict.final_summary.to_dict() if verdict.final_summary else None,
        }
    if isinstance(verdict, Revise):
        return {"kind": "revise", "feedback": verdict.feedback, "severity": verdict.severity}
    if isinstance(verdict, RedoFrom):
        return {"kind": "redo_from", "target": verdict.target, "reason": verdict.reason}
    if isinstance(verdict, Halt):
        return {"kind": "halt", "reason": verdict.reason}
    raise ModelError(f"unknown verdict type {type(verdict).__name__}")


def verdict_from_dict(data: Mapping[str, Any]) -> Verdict:
    kind = data.get("kind")
    if kind == "accept":
        summary = data.get("final_summary")
        return Accept(TaskSummary.from_dict(summary) if summary else None)
    if kind == "revise":
        return Revise(feedback=data["feedback"], severity=data.get("severity", "minor"))
    if kind == "redo_from":
        return RedoFrom(target=int(data["target"]), reason=data["reason"])
    if kind == "halt":
        return Halt(reason=data["reason"])
    raise ModelError(f"unknown verdict kind {kind!r}")


# ---------------------------------------------------------------------------
# Events


@dataclass(frozen=True)
class PlanProposed:
    plan: Plan


@dataclass(frozen=True)
class PlanApproved:
    version: int
    actor: str = "operator"


@dataclass(frozen=True)
class TaskDispatched:
    task_id: int
    attempt: int


@dataclass(frozen=True)
class StepExecuted:
    task_id: int
    attempt: int
    step_no: int
    digest: str


@dataclass(frozen=True)
class VerdictIssued:
    task_id: int
    attempt: int
    verdict: Verdict


@dataclass(frozen=True)
class TasksInvalidated:
    task_ids: tuple[int, ...]
    cause: int


@dataclass(frozen=True)
class ProjectHalted:
    reason: str
    frontier: tuple[int, ...] = ()
    issued_by: str = "assessor"
    failed_task: int | None = None


@dataclass(frozen=True)
class ProjectResumed:
    instruction: str


@dataclass(frozen=True)
class ProjectCompleted:
    pass


@dataclass(frozen=True)
class ContextCompacted:
    task_id: int
    attempt: int
    step_no: int
    dropped_steps: int


EventPayload = (
    PlanProposed | PlanApproved | TaskDispatched | StepExecuted | VerdictIssued
    | TasksInvalidated | ProjectHalted | ProjectResumed | ProjectCompleted | ContextCompacted
)

_PAYLOAD_TYPES: dict[str, type] = {
    "plan_proposed": PlanProposed,
    "plan_approved": PlanApproved,
    "task_dispatched": TaskDispatched,
    "step_executed": StepExecuted,
    "verdict_issued": VerdictIssued,
    "tasks_invalidated": TasksInvalidated,
    "project_halted": ProjectHalted,
    "project_resumed": ProjectResumed,
    "project_completed": ProjectCompleted,
    "context_compacted": ContextCompacted,
}
_PAYLOAD_NAMES = {v: k for k, v in _PAYLOAD_TYPES.items()}


@dataclass(frozen=True)
class Event:
    sequence_no: int
    timestamp: str
    payload: EventPayload

    def payload_type(self) -> str:
        return _PAYLOAD_NAMES[type(self.payload)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence_no": self.sequence_no,
            "timestamp": self.timestamp,
            "payload": payload_to_dict(self.payload),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Event":
        return cls(
            sequence_no=int(data["sequence_no"]),
            timestamp=data["timestamp"],
            payload=payload_from_dict(data["payload"]),
        )


def payload_to_dict(payload: EventPayload) -> dict[str, Any]:
    out: dict[str, Any] = {"type": _PAYLOAD_NAMES[type(payload)]}
    if isinstance(payload, PlanProposed):
        out["plan"] = payload.plan.to_dict()
    elif isinstance(payload, PlanApproved):
        out.update(version=payload.version, actor=payload.actor)
    elif isinstance(payload, TaskDispatched):
        out.update(task_id=payload.task_id, attempt=payload.attempt)
    elif isinstance(payload, StepExecuted):
        out.update(task_id=payload.task_id, attempt=payload.attempt,
                   step_no=payload.step_no, digest=payload.digest)
    elif isinstance(payload, VerdictIssued):
        out.update(task_id=payload.task_id, attempt=payload.attempt,
                   verdict=verdict_to_dict(payload.verdict))
    elif isinstance(payload, TasksInvalidated):
        out.update(task_ids=sorted(payload.task_ids), cause=payload.cause)
    elif isinstance(payload, ProjectHalted):
        out.update(reason=payload.reason, frontier=sorted(payload.frontier),
                   issued_by=payload.issued_by, failed_task=payload.failed_task)
    elif isinstance(payload, ProjectResumed):
        out["instruction"] = payload.instruction
    elif isinstance(payload, ContextCompacted):
        out.update(task_id=payload.task_id, attempt=payload.attempt,
                   step_no=payload.step_no, dropped_steps=payload.dropped_steps)
    return out


def payload_from_dict(data: Mapping[str, Any]) -> EventPayload:
    kind = data.get("type")
    if kind not in _PAYLOAD_TYPES:
        raise JournalCorruption(f"unknown event payload type {kind!r}")
    if kind == "plan_proposed":
        return PlanProposed(Plan.from_dict(data["plan"]))
    if kind == "plan_approved":
        return PlanApproved(version=int(data["version"]), actor=data.get("actor", "operator"))
    if kind == "task_dispatched":
        return TaskDispatched(task_id=int(data["task_id"]), attempt=int(data["attempt"]))
    if kind == "step_executed":
        return StepExecuted(task_id=int(data["task_id"]), attempt=int(data["attempt"]),
                            step_no=int(data["step_no"]), digest=data["digest"])
    if kind == "verdict_issued":
        return VerdictIssued(task_id=int(data["task_id"]), attempt=int(data["attempt"]),
                             verdict=verdict_from_dict(data["verdict"]))
    if kind == "tasks_invalidated":
        return TasksInvalidated(task_ids=tuple(int(t) for t in data["task_ids"]),
                                cause=int(data["cause"]))
    if kind == "project_halted":
        return ProjectHalted(reason=data["reason"],
                             frontier=tuple(int(t) for t in data.get("frontier", [])),
                             issued_by=data.get("issued_by", "assessor"),
                             failed_task=data.get("failed_task"))
    if kind == "project_resumed":
        return ProjectResumed(instruction=data.get("instruction", ""))
    if kind == "project_completed":
        return ProjectCompleted()
    return ContextCompacted(task_id=int(data["task_id"]), attempt=int(data["attempt"]),
                            step_no=int(data["step_no"]), dropped_steps=int(data["dropped_steps"]))


def event_content_digest(event: Event) -> str:
    """Digest of an event excluding its timestamp, so journals of identical
    runs digest identically regardless of wall-clock."""
    return content_digest({"sequence_no": event.sequence_no,
                           "payload": payload_to_dict(event.payload)})


def journal_digest(events: Iterable[Event]) -> str:
    """Deterministic digest of a whole journal (timestamps excluded)."""
    h = hashlib.sha256()
    for event in events:
        h.update(event_content_digest(event).encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Halt record and project state


@dataclass(frozen=True)
class HaltRecord:
    reason: str
    frontier: tuple[int, ...]
    issued_by: str
    timestamp: str

    def to_dict(self) -> dict[str, Any]:
        return {"reason": self.reason, "frontier": sorted(self.frontier),
                "issued_by": self.issued_by, "timestamp": self.timestamp}


@dataclass
class ProjectState:
    """The fold of the event journal: everything the scheduler needs to
    decide what happens next.

    ``attempts`` carries the last dispatched attempt number per task
    (monotone across invalidations, so archive names never collide), and
    ``revise_counts`` the Revise retries charged against the current
    incarnation of each task.
    """

    proposed_plan: Plan | None = None
    plan: Plan | None = None
    approved_version: int = 0
    task_states: dict[int, TaskState] = field(default_factory=dict)
    attempts: dict[int, int] = field(default_factory=dict)
    revise_counts: dict[int, int] = field(default_factory=dict)
    last_feedback: dict[int, str] = field(default_factory=dict)
    halt: HaltRecord | None = None
    completed: bool = False
    last_sequence: int = 0

    def clone(self) -> "ProjectState":
        return ProjectState(
            proposed_plan=self.proposed_plan,
            plan=self.plan,
            approved_version=self.approved_version,
            task_states=dict(self.task_states),
            attempts=dict(self.attempts),
            revise_counts=dict(self.revise_counts),
            last_feedback=dict(self.last_feedback),
            halt=self.halt,
            completed=self.completed,
            last_sequence=self.last_sequence,
        )

    def snapshot_dict(self) -> dict[str, Any]:
        """Canonical dict form, used to compare states field by field."""
        return {
            "proposed_plan": self.proposed_plan.to_dict() if self.proposed_plan else None,
            "plan": self.plan.to_dict() if self.plan else None,
            "approved_version": self.approved_version,
            "task_states": {str(t): s.to_dict() for t, s in sorted(self.task_states.items())},
            "attempts": {str(t): a for t, a in sorted(self.attempts.items())},
            "revise_counts": {str(t): c for t, c in sorted(self.revise_counts.items())},
            "last_feedback": {str(t): f for t, f in sorted(self.last_feedback.items())},
            "halt": self.halt.to_dict() if self.halt else None,
            "completed": self.completed,
            "last_sequence": self.last_sequence,
        }


def initial_state() -> ProjectState:
    return ProjectState()


def fold_step(state: ProjectState, event: Event) -> ProjectState:
    """Apply one journal event to a state, returning the new state.

    Total over any journal the engine wrote; raises JournalCorruption on
    sequence gaps or duplicates.
    """
    if event.sequence_no != state.last_sequence + 1:
        raise JournalCorruption(
            f"event sequence {event.sequence_no} after {state.last_sequence}; "
            "journal has a gap or duplicate")
    state = state.clone()
    state.last_sequence = event.sequence_no
    payload = event.payload

    if isinstance(payload, PlanProposed):
        state.proposed_plan = payload.plan
    elif isinstance(payload, PlanApproved):
        plan = state.proposed_plan
        if plan is None or plan.version != payload.version:
            raise JournalCorruption(
                f"approval of version {payload.version} without a matching proposal")
        state.plan = plan
        state.approved_version = payload.version
        new_states: dict[int, TaskState] = {}
        for task in plan.tasks:
            prior = state.task_states.get(task.task_id)
            if prior is not None and prior.kind == TaskStateKind.ACCEPTED:
                new_states[task.task_id] = prior
            else:
                new_states[task.task_id] = TaskState.pending()
        state.task_states = new_states
        state.attempts = {t: a for t, a in state.attempts.items() if t in new_states}
        state.revise_counts = {t: 0 for t in new_states}
        state.last_feedback = {}
    elif isinstance(payload, TaskDispatched):
        state.task_states[payload.task_id] = TaskState.running(payload.attempt)
        state.attempts[payload.task_id] = payload.attempt
    elif isinstance(payload, StepExecuted):
        pass
    elif isinstance(payload, VerdictIssued):
        verdict = payload.verdict
        if isinstance(verdict, Accept):
            state.task_states[payload.task_id] = TaskState.accepted()
            state.revise_counts[payload.task_id] = 0
            state.last_feedback.pop(payload.task_id, None)
        elif isinstance(verdict, Revise):
            state.task_states[payload.task_id] = TaskState.pending()
            state.revise_counts[payload.task_id] = state.revise_counts.get(payload.task_id, 0) + 1
            state.last_feedback[payload.task_id] = verdict.feedback
        # RedoFrom and Halt act through their follow-up events.
    elif isinstance(payload, TasksInvalidated):
        for task_id in payload.task_ids:
            state.task_states[task_id] = TaskState.invalidated(payload.cause)
            state.revise_counts[task_id] = 0
            state.last_feedback.pop(task_id, None)
    elif isinstance(payload, ProjectHalted):
        state.halt = HaltRecord(reason=payload.reason, frontier=tuple(sorted(payload.frontier)),
                                issued_by=payload.issued_by, timestamp=event.timestamp)
        for task_id, task_state in list(state.task_states.items()):
            if task_state.kind == TaskStateKind.ACCEPTED:
                continue
            if payload.failed_task is not None and task_id == payload.failed_task:
                state.task_states[task_id] = TaskState.failed()
            else:
                state.task_states[task_id] = TaskState.halted_with_project()
    elif isinstance(payload, ProjectResumed):
        state.halt = None
        for task_id, task_state in list(state.task_states.items()):
            if task_state.kind in (TaskStateKind.FAILED, TaskStateKind.HALTED_WITH_PROJECT):
                state.task_states[task_id] = TaskState.pending()
    elif isinstance(payload, ProjectCompleted):
        state.completed = True
    elif isinstance(payload, ContextCompacted):
        pass
    else:  # pragma: no cover - union is closed
        raise JournalCorruption(f"unhandled payload {type(payload).__name__}")
    return state


def fold_state(events: Sequence[Event]) -> ProjectState:
    """Fold a journal prefix into the project state it determines."""
    state = initial_state()
    for event in events:
        state = fold_step(state, event)
    return state


# ---------------------------------------------------------------------------
# Graph algebra


def ready_set(plan: Plan, states: Mapping[int, TaskState]) -> set[int]:
    """Tasks that may be dispatched now: Pending with every dependency Accepted."""
    for task in plan.tasks:
        if task.task_id not in states:
            raise ModelError(f"states mapping is missing task {task.task_id}")
    out: set[int] = set()
    for task in plan.tasks:
        if states[task.task_id].kind != TaskStateKind.PENDING:
            continue
        if all(states[d].kind == TaskStateKind.ACCEPTED for d in task.dependencies):
            out.add(task.task_id)
    return out


def invalidation_closure(plan: Plan, target: int, states: Mapping[int, TaskState]) -> set[int]:
    """The target plus every transitive dependent with work to discard.

    Dependents still Pending have produced nothing and are left alone.
    An unknown target signals a corrupt verdict and raises.
    """
    if not plan.has_task(target):
        raise ModelError(f"invalidation target {target} does not exist in the plan")
    closure = {target}
    frontier = [target]
    reached: set[int] = {target}
    while frontier:
        current = frontier.pop()
        for dependent in plan.dependents_of(current):
            if dependent in reached:
                continue
            reached.add(dependent)
            frontier.append(dependent)
            if states.get(dependent, TaskState.pending()).kind != TaskStateKind.PENDING:
                closure.add(dependent)
    return closure


def display_states(plan: Plan, states: Mapping[int, TaskState]) -> dict[int, TaskState]:
    """States for presentation: Pending tasks whose dependencies are all
    Accepted are shown as Ready."""
    ready = ready_set(plan, states) if plan.tasks and all(t.task_id in states for t in plan.tasks) else set()
    out = dict(states)
    for task_id in ready:
        out[task_id] = TaskState(TaskStateKind.READY)
    return out


def validate_revision(old_plan: Plan, new_plan: Plan,
                      states: Mapping[int, TaskState]) -> list[Violation]:
    """Check that a resume revision leaves every accepted task untouched."""
    violations = validate_plan(new_plan)
    if new_plan.version != old_plan.version + 1:
        violations.append(Violation(
            "bad-version",
            f"revision must bump version to {old_plan.version + 1}, got {new_plan.version}"))
    for task in old_plan.tasks:
        if states.get(task.task_id, TaskState.pending()).kind != TaskStateKind.ACCEPTED:
            continue
        if not new_plan.has_task(task.task_id):
            violations.append(Violation(
                "accepted-task-removed",
                f"accepted task {task.task_id} is missing from the revision", task.task_id))
            continue
        if new_plan.task(task.task_id) != task:
            violations.append(Violation(
                "accepted-task-changed",
                f"accepted task {task.task_id} was modified by the revision", task.task_id))
    return violations


_SLUG_RE = re.compile(r"[^a-z0-9]+")


def slugify(text: str, fallback: str = "project") -> str:
    slug = _SLUG_RE.sub("-", text.lower()).strip("-")
    return slug or fallback
