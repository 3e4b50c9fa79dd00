"""The project driver: scheduling, quality gating, retries, rollback,
halting, resuming, and crash recovery over the event journal.

A single scheduler owns every state transition and applies verdicts in
arrival order; workers and assessors run in parallel threads and talk to
the scheduler only through a completion queue.  Every transition is
journaled before its externally visible effects, and summaries are written
before the verdict that asserts them (write-then-log), so a fold of the
journal is always a safe place to resume from.
"""

from __future__ import annotations

import json
import logging
import queue as queue_mod
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Callable

from .assessor import assess_project, assess_task, build_assessment_input
from .executor import Executor
from .journal import Journal, open_journal
from .model import (
    Accept,
    Event,
    Halt,
    HaltRecord,
    ModelError,
    Plan,
    PlanApproved,
    PlanProposed,
    ProjectCompleted,
    ProjectHalted,
    ProjectResumed,
    ProjectSpec,
    RedoFrom,
    Revise,
    RunConfig,
    TaskDispatched,
    TaskState,
    TaskStateKind,
    TasksInvalidated,
    Verdict,
    VerdictIssued,
    fold_step,
    invalidation_closure,
    ready_set,
    validate_plan,
)
from .planner import InteractionChannel, UnattendedChannel, plan_project, revise_plan_for_resume
from .worker import TaskResult, assemble_brief, run_task
from .workspace import MissingArtifactsError, Workspace

logger = logging.getLogger(__name__)


class EngineStateError(Exception):
    """An operation was invoked in the wrong project state."""


class EngineInvariantError(Exception):
    """The engine detected a broken internal invariant (corrupt script or bug)."""


@dataclass
class RoleBackends:
    planner: Any
    worker: Any
    assessor: Any

    @classmethod
    def uniform(cls, backend: Any) -> "RoleBackends":
        return cls(planner=backend, worker=backend, assessor=backend)


@dataclass(frozen=True)
class RunOutcome:
    status: str  # completed | halted
    halt: HaltRecord | None = None

    @property
    def completed(self) -> bool:
        return self.status == "completed"


class Engine:
    """Lifecycle owner for one project in one workspace."""

    def __init__(self, workspace: Workspace, config: RunConfig, backends: RoleBackends, *,
                 project_id: str = "project", executor: Executor | None = None,
                 clock: Callable[[], str] | None = None,
                 journal_fault_hook: Callable[[str], None] | None = None) -> None:
        self.workspace = workspace
        self.config = config
        self.backends = backends
        self.project_id = project_id
        journal_kwargs: dict[str, Any] = {}
        if clock is not None:
            journal_kwargs["clock"] = clock
        if journal_fault_hook is not None:
            journal_kwargs["fault_hook"] = journal_fault_hook
        if workspace.journal_path.exists():
            self.journal = open_journal(workspace.journal_path, project_id, **journal_kwargs)
        else:
            self.journal = Journal(workspace.journal_path, project_id, create=True,
                                   **journal_kwargs)
        self.state = self.journal.fold()
        self.executor = executor or Executor(
            workspace,
            default_timeout=config.tool_timeout,
            max_timeout=config.max_tool_timeout,
            output_truncation=config.output_truncation,
            env_allowlist=config.env_allowlist,
        )
        self._queue: queue_mod.Queue = queue_mod.Queue()
        self._inflight: dict[int, Any] = {}
        self._cancelled_attempts: set[tuple[int, int]] = set()
        self._global_cancel = threading.Event()
        self._halt_request: tuple[str, str] | None = None
        self._control_lock = threading.Lock()
        self._resume_instruction: str | None = None

    # -- journaling -----------------------------------------------------------

    def _append(self, payload) -> Event:
        event = self.journal.append(payload)
        # Worker threads append state-neutral events (steps, compactions)
        # directly to the journal, so the live cursor may lag; only the
        # journal's own counter owes the gap-free guarantee.
        if event.sequence_no > self.state.last_sequence + 1:
            self.state.last_sequence = event.sequence_no - 1
        self.state = fold_step(self.state, event)
        return event

    # -- planning lifecycle ------------------------------------------------------

    def propose_plan(self, spec: ProjectSpec, channel: InteractionChannel | None = None,
                     *, extra_context: str | None = None) -> Plan:
        """Run a planning session and journal the proposal (unapproved)."""
        channel = channel or UnattendedChannel(self.config.unattended_answer)
        version = (self.state.proposed_plan.version + 1) if self.state.proposed_plan else 1
        plan, _session = plan_project(spec, self.backends.planner, channel,
                                      config=self.config, version=version,
                                      extra_context=extra_context)
        self.workspace.persist_plan(plan)
        self._append(PlanProposed(plan))
        return plan

    def propose_fixed_plan(self, plan: Plan) -> Plan:
        """Journal an externally constructed plan proposal (used by fixtures
        and by operators supplying a plan document directly)."""
        violations = validate_plan(plan)
        if violations:
            raise EngineStateError(
                "plan is invalid: " + "; ".join(v.message for v in violations))
        self.workspace.persist_plan(plan)
        self._append(PlanProposed(plan))
        return plan

    def approve(self, actor: str = "operator") -> Event | None:
        """Approve the proposed plan; idempotent on double approval.

        While halted, approval of a resume revision also journals
        ProjectResumed, re-opening dispatch.
        """
        proposed = self.state.proposed_plan
        if proposed is None:
            raise EngineStateError("no plan has been proposed")
        if self.state.approved_version >= proposed.version:
            logger.warning("plan version %s already approved; ignoring", proposed.version)
            return None
        event = self._append(PlanApproved(version=proposed.version, actor=actor))
        if self.state.halt is not None:
            instruction = self._resume_instruction if self._resume_instruction is not None else ""
            self._append(ProjectResumed(instruction=instruction))
            self._resume_instruction = None
        return event

    def resume(self, instruction: str, *, replan: bool = True) -> Plan:
        """Start the resume flow for a halted project: revise the plan and
        journal the proposal.  The revision still needs approval."""
        if self.state.halt is None:
            raise EngineStateError("project is not halted; nothing to resume")
        if self.state.plan is None:
            raise EngineStateError("halted project has no approved plan")
        if replan:
            plan, _session = revise_plan_for_resume(
                self.state.plan, self.state.halt, instruction,
                self.backends.planner, self.state.task_states, config=self.config)
        else:
            plan = replace(self.state.plan, version=self.state.plan.version + 1)
        self.workspace.persist_plan(plan)
        self._append(PlanProposed(plan))
        self._resume_instruction = instruction
        return plan

    def request_halt(self, reason: str, actor: str = "operator") -> None:
        """Ask the running scheduler to halt gracefully (thread-safe)."""
        with self._control_lock:
            self._halt_request = (reason, actor)

    # -- the scheduler ---------------------------------------------------------

    def run(self) -> RunOutcome:
        """Drive the approved plan to Completed or Halted."""
        state = self.state
        if state.plan is None:
            raise EngineStateError("plan not approved")
        if state.proposed_plan is not None and state.proposed_plan.version > state.approved_version:
            raise EngineStateError("plan not approved")
        if state.halt is not None:
            raise EngineStateError("project is halted; use resume")
        if state.completed:
            raise EngineStateError("project already completed")
        for task_id, task_state in state.task_states.items():
            if task_state.kind in (TaskStateKind.RUNNING, TaskStateKind.INVALIDATED):
                raise EngineStateError(
                    f"task {task_id} is {task_state.kind.value} in the journal; use recover")

        self._global_cancel.clear()
        pool = ThreadPoolExecutor(max_workers=self.config.concurrency_limit,
                                  thread_name_prefix="worker")
        fatal: BaseException | None = None
        try:
            while True:
                with self._control_lock:
                    halt_request, self._halt_request = self._halt_request, None
                if halt_request is not None and self.state.halt is None:
                    self._halt(halt_request[0], issued_by=halt_request[1], failed_task=None)

                self._drain_queue()

                if self.state.halt is not None:
                    break
                if self._all_accepted():
                    self._append(ProjectCompleted())
                    break

                self._dispatch_ready(pool)

                if not self._inflight:
                    if self._all_accepted():
                        self._append(ProjectCompleted())
                        break
                    if not ready_set(self.state.plan, self.state.task_states):
                        raise EngineInvariantError(
                            "scheduler stuck: nothing running, nothing ready, "
                            f"states {self._brief_states()}")
                try:
                    message = self._queue.get(timeout=0.05)
                    self._handle_message(message)
                except queue_mod.Empty:
                    pass
        except BaseException as exc:
            fatal = exc
            raise
        finally:
            self._global_cancel.set()
            pool.shutdown(wait=True)
            self.executor.kill_all_jobs(
                drain_seconds=0.0 if fatal else self.config.drain_seconds)
            self._inflight.clear()

        if self.state.completed:
            return RunOutcome("completed")
        return RunOutcome("halted", halt=self.state.halt)

    # -- scheduling internals ---------------------------------------------------

    def _brief_states(self) -> dict[int, str]:
        return {t: s.kind.value for t, s in sorted(self.state.task_states.items())}

    def _all_accepted(self) -> bool:
        plan = self.state.plan
        return plan is not None and all(
            self.state.task_states.get(t.task_id, TaskState.pending()).kind
            == TaskStateKind.ACCEPTED
            for t in plan.tasks)

    def _active_count(self) -> int:
        return sum(1 for s in self.state.task_states.values()
                   if s.kind in (TaskStateKind.RUNNING, TaskStateKind.AWAITING_ASSESSMENT))

    def _dispatch_ready(self, pool: ThreadPoolExecutor) -> None:
        # Deterministic order: ascending task id among the ready set.
        for task_id in sorted(ready_set(self.state.plan, self.state.task_states)):
            if self._active_count() >= self.config.concurrency_limit:
                break
            if task_id in self._inflight:
                continue  # an older cancelled attempt is still winding down
            self._dispatch(pool, task_id)

    def _dispatch(self, pool: ThreadPoolExecutor, task_id: int) -> None:
        attempt = self.state.attempts.get(task_id, 0) + 1
        feedback = self.state.last_feedback.get(task_id)
        task = self.state.plan.task(task_id)
        self._append(TaskDispatched(task_id=task_id, attempt=attempt))
        future = pool.submit(self._run_attempt, task, attempt, feedback)
        self._inflight[task_id] = future
        future.add_done_callback(
            lambda _f, t=task_id, a=attempt: self._queue.put(("done", t, a, None, None)))

    def _run_attempt(self, task, attempt: int, feedback: str | None) -> None:
        task_id = task.task_id
        try:
            brief = assemble_brief(task, self.workspace, revise_feedback=feedback)
            cancelled = lambda: (self._global_cancel.is_set()
                                 or (task_id, attempt) in self._cancelled_attempts)
            result = run_task(brief, attempt, backend=self.backends.worker,
                              executor=self.executor, config=self.config,
                              journal=self.journal, workspace=self.workspace,
                              cancel=cancelled)
            self._queue.put(("result", task_id, attempt, result, None))
            if result.terminal == "cancelled" or cancelled():
                return
            accepted = [self.workspace.read_summary(t)
                        for t in self.workspace.summary_task_ids()]
            inp = build_assessment_input(task, result, self.workspace,
                                         self.state.plan, accepted)
            verdict = assess_task(inp, self.backends.assessor, self.config,
                                  workspace=self.workspace, plan=self.state.plan,
                                  attempt=attempt)
            self._queue.put(("verdict", task_id, attempt, result, verdict))
        except BaseException as exc:
            self._queue.put(("fatal", task_id, attempt, None, exc))

    def _drain_queue(self) -> None:
        while True:
            try:
                message = self._queue.get_nowait()
            except queue_mod.Empty:
                return
            self._handle_message(message)

    def _handle_message(self, message) -> None:
        kind, task_id, attempt, payload, extra = message
        if kind == "done":
            future = self._inflight.get(task_id)
            if future is not None and future.done():
                del self._inflight[task_id]
            return
        if kind == "fatal":
            raise extra
        current = self.state.task_states.get(task_id)
        if kind == "result":
            result: TaskResult = payload
            if result.terminal == "cancelled":
                return
            if current != TaskState.running(attempt):
                logger.info("dropping stale result for task %s attempt %s", task_id, attempt)
                return
            self.state.task_states[task_id] = TaskState.awaiting_assessment(attempt)
            return
        if kind == "verdict":
            if current != TaskState.awaiting_assessment(attempt):
                logger.info("dropping stale verdict for task %s attempt %s", task_id, attempt)
                return
            self.apply_verdict(task_id, attempt, extra, payload)
            return
        raise EngineInvariantError(f"unknown scheduler message {kind!r}")

    # -- verdict application -------------------------------------------------------

    def apply_verdict(self, task_id: int, attempt: int, verdict: Verdict,
                      result: TaskResult | None) -> None:
        """The single gate on progression; only the scheduler calls this."""
        current = self.state.task_states.get(task_id)
        if current != TaskState.awaiting_assessment(attempt):
            raise EngineInvariantError(
                f"verdict for task {task_id} attempt {attempt} but state is {current}")

        if isinstance(verdict, Accept):
            if result is None or not result.completed:
                raise EngineInvariantError(
                    f"accept verdict for non-completed attempt of task {task_id}")
            summary = verdict.final_summary or result.draft_summary
            if summary is None:
                raise EngineInvariantError(f"accept verdict without a summary for task {task_id}")
            if summary.task_id != task_id:
                summary = replace(summary, task_id=task_id)
            try:
                # Write-then-log: the summary must be durable before the
                # verdict event asserting it.
                self.workspace.write_summary(task_id, summary, cap=self.config.summary_cap)
            except MissingArtifactsError as exc:
                logger.warning("dishonest summary for task %s: %s", task_id, exc)
                verdict = Revise(feedback=f"summary lists missing artifacts: {exc}",
                                 severity="minor")
            else:
                self.workspace.register_artifacts(task_id, summary)
                self._append(VerdictIssued(task_id, attempt, Accept(final_summary=summary)))
                return

        if isinstance(verdict, Revise):
            self._append(VerdictIssued(task_id, attempt, verdict))
            if self.state.revise_counts.get(task_id, 0) <= self.config.revise_budget:
                if verdict.severity == "major":
                    self.workspace.archive_attempt(task_id, attempt)
                return
            self._escalate(task_id, attempt)
            return

        if isinstance(verdict, RedoFrom):
            self._redo_from(task_id, attempt, verdict)
            return

        if isinstance(verdict, Halt):
            self._append(VerdictIssued(task_id, attempt, verdict))
            self._halt(verdict.reason, issued_by="assessor", failed_task=task_id)
            return

        raise EngineInvariantError(f"unknown verdict {verdict!r}")

    def _escalate(self, task_id: int, attempt: int) -> None:
        """Revision budget exhausted: let the project-level assessment decide."""
        accepted = [self.workspace.read_summary(t)
                    for t in self.workspace.summary_task_ids()]
        reason = (f"task {task_id} exhausted its revision budget "
                  f"({self.config.revise_budget}) at attempt {attempt}")
        verdict = assess_project(self.state.plan, self.state.task_states, accepted,
                                 task_id, reason, self.backends.assessor, self.config)
        if isinstance(verdict, Accept):
            # Continue: grant a fresh incarnation, archiving the failed one.
            self._append(TasksInvalidated(task_ids=(task_id,), cause=task_id))
            self.workspace.archive_attempt(task_id, attempt)
            self.state.task_states[task_id] = TaskState.pending()
            return
        if isinstance(verdict, RedoFrom):
            self._redo_from(task_id, attempt, verdict)
            return
        if isinstance(verdict, Halt):
            self._append(VerdictIssued(task_id, attempt, verdict))
            self._halt(verdict.reason, issued_by="assessor", failed_task=task_id)
            return
        raise EngineInvariantError(f"project assessment returned {verdict!r}")

    def _redo_from(self, task_id: int, attempt: int, verdict: RedoFrom) -> None:
        try:
            closure = invalidation_closure(self.state.plan, verdict.target,
                                           self.state.task_states)
        except ModelError as exc:
            raise EngineInvariantError(f"corrupt RedoFrom verdict: {exc}") from exc
        closure |= {task_id}
        self._append(VerdictIssued(task_id, attempt, verdict))
        self._append(TasksInvalidated(task_ids=tuple(sorted(closure)), cause=verdict.target))

        # Cancel any member still in flight; its messages will be stale.
        for member in closure:
            member_attempt = self.state.attempts.get(member)
            if member in self._inflight and member_attempt is not None:
                self._cancelled_attempts.add((member, member_attempt))

        redo_dir = self.workspace.root / "archive" / f"redo-{self.journal.next_sequence - 1}"
        retained: list[str] = []
        produced = [r for r in self.workspace.registered_artifacts()
                    if r.producer in closure]
        named = [r.path for r in produced if r.path in verdict.reason]
        if named:
            redo_dir.mkdir(parents=True, exist_ok=True)
            self.workspace.retract_shared(named, redo_dir)
        retained = sorted({r.path for r in produced} - set(named))

        for member in sorted(closure):
            member_attempt = self.state.attempts.get(member, 0)
            if member_attempt:
                self.workspace.archive_attempt(member, member_attempt)
            self.state.task_states[member] = TaskState.pending()

        report = {
            "cause": verdict.target,
            "reason": verdict.reason,
            "invalidated": sorted(closure),
            "retracted_shared": sorted(named),
            "retained_shared": retained,
        }
        redo_dir.mkdir(parents=True, exist_ok=True)
        (redo_dir / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def _halt(self, reason: str, *, issued_by: str, failed_task: int | None) -> None:
        frontier = {t for t, s in self.state.task_states.items()
                    if s.kind in (TaskStateKind.RUNNING, TaskStateKind.AWAITING_ASSESSMENT,
                                  TaskStateKind.INVALIDATED)}
        if failed_task is not None:
            frontier.add(failed_task)
        self._global_cancel.set()
        for t in self._inflight:
            a = self.state.attempts.get(t)
            if a is not None:
                self._cancelled_attempts.add((t, a))
        self.executor.kill_all_jobs(drain_seconds=self.config.drain_seconds)
        self._append(ProjectHalted(reason=reason, frontier=tuple(sorted(frontier)),
                                   issued_by=issued_by, failed_task=failed_task))

    # -- recovery ------------------------------------------------------------------

    @classmethod
    def recover(cls, workspace: Workspace, config: RunConfig, backends: RoleBackends, *,
                project_id: str = "project", **kwargs) -> "Engine":
        """Open a crashed or interrupted workspace and normalize it so run()
        can continue: in-flight attempts are archived for re-dispatch and
        stale summaries retired.  Corrupt journals are refused with a
        diagnosis, never silently truncated."""
        engine = cls(workspace, config, backends, project_id=project_id, **kwargs)
        state = engine.state
        for task_id, task_state in list(state.task_states.items()):
            if task_state.kind in (TaskStateKind.RUNNING, TaskStateKind.INVALIDATED):
                last_attempt = state.attempts.get(task_id, 0)
                if last_attempt:
                    workspace.archive_attempt(task_id, last_attempt)
                state.task_states[task_id] = TaskState.pending()
        for task_id in workspace.summary_task_ids():
            current = state.task_states.get(task_id)
            if current is None or current.kind != TaskStateKind.ACCEPTED:
                workspace.archive_attempt(task_id, state.attempts.get(task_id, 0) or 1)
        return engine


def run_project(workspace: Workspace, config: RunConfig, backends: RoleBackends, *,
                project_id: str = "project", **kwargs) -> RunOutcome:
    """Run an approved plan in an initialized workspace to a terminal state."""
    engine = Engine(workspace, config, backends, project_id=project_id, **kwargs)
    return engine.run()
