"""One task attempt in an isolated context.

A worker sees only its brief (the task contract plus its dependencies'
summaries) and its own prior steps; it advances by a reason -> tool ->
observe loop until the model calls task_complete, the step budget runs
out, or a tool fails fatally.  Failed tool outcomes are fed straight back
into the next step, which is the local half of the self-correction story;
holistic judgement belongs to the assessor.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Callable

from . import prompts
from .backend import (
    BackendError,
    ChatRequest,
    ChatResponse,
    Message,
    ScriptExhausted,
    ToolCall,
    ToolSchema,
)
from .executor import ExecutionRequest, Executor, ExecutorError, UnknownJobError
from .journal import Journal
from .model import (
    ContextCompacted,
    ModelError,
    RunConfig,
    StepExecuted,
    TaskSpec,
    TaskSummary,
    canonical_json,
    content_digest,
)
from .workspace import PathEscapeError, Workspace

logger = logging.getLogger(__name__)

WORKER_TOOLS = (
    ToolSchema("run_command", "Run a shell command inside the workspace.",
               '{"type":"object","properties":{"command":{"type":"string"},'
               '"working_dir":{"type":"string"},"timeout":{"type":"number"}},'
               '"required":["command"]}'),
    ToolSchema("write_file", "Write a file (workspace-relative path).",
               '{"type":"object","properties":{"path":{"type":"string"},'
               '"content":{"type":"string"}},"required":["path","content"]}'),
    ToolSchema("read_file", "Read a file (workspace-relative path).",
               '{"type":"object","properties":{"path":{"type":"string"},'
               '"offset":{"type":"integer"},"length":{"type":"integer"}},'
               '"required":["path"]}'),
    ToolSchema("spawn_job", "Start a long-running command; returns a job id.",
               '{"type":"object","properties":{"command":{"type":"string"},'
               '"working_dir":{"type":"string"}},"required":["command"]}'),
    ToolSchema("poll_job", "Check a job without blocking.",
               '{"type":"object","properties":{"job_id":{"type":"string"}},'
               '"required":["job_id"]}'),
    ToolSchema("kill_job", "Terminate a job; idempotent.",
               '{"type":"object","properties":{"job_id":{"type":"string"}},'
               '"required":["job_id"]}'),
    ToolSchema("task_complete", "Submit the draft summary and finish the task.",
               '{"type":"object","properties":{"outcome":{"type":"string"},'
               '"artifacts":{"type":"array"},"usage_notes":{"type":"string"},'
               '"data_formats":{"type":"string"},"metrics":{"type":"array"}},'
               '"required":["outcome"]}'),
)


@dataclass(frozen=True)
class TaskBrief:
    """Everything a worker is allowed to know before its first step."""

    task: TaskSpec
    dependency_summaries: tuple[TaskSummary, ...]
    task_dir: str
    shared_dir: str
    revise_feedback: str | None = None

    def render(self) -> str:
        """Deterministic text form; this is the only project context the
        worker's backend requests may carry."""
        lines = [
            f"Task {self.task.task_id}: {self.task.title}",
            "",
            "Objective:",
            self.task.objective,
            "",
            "Success criteria:",
        ]
        lines += [f"- {c}" for c in self.task.success_criteria]
        if self.task.expected_artifacts:
            lines += ["", "Expected artifacts:"]
            lines += [f"- {p}" for p in self.task.expected_artifacts]
        if self.task.hints:
            lines += ["", "Hints:", self.task.hints]
        lines += [
            "",
            f"Your scratch directory: {self.task_dir}",
            f"Shared artifact directory: {self.shared_dir}",
        ]
        if self.dependency_summaries:
            lines += ["", "Summaries of the tasks you depend on:"]
            for summary in self.dependency_summaries:
                lines.append(canonical_json(summary.to_dict()))
        else:
            lines += ["", "This task has no dependencies."]
        if self.revise_feedback:
            lines += ["", "Reviewer feedback on your previous attempt:", self.revise_feedback]
        return "\n".join(lines)


@dataclass(frozen=True)
class StepRecord:
    step_no: int
    request_digest: str
    tool_calls: tuple[ToolCall, ...]
    outcome_digests: tuple[str, ...]
    local_failure: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_no": self.step_no,
            "request_digest": self.request_digest,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "outcome_digests": list(self.outcome_digests),
            "local_failure": self.local_failure,
        }

    def digest(self) -> str:
        return content_digest(self.to_dict())


@dataclass(frozen=True)
class TaskResult:
    task_id: int
    attempt: int
    steps: tuple[StepRecord, ...]
    terminal: str  # completed | budget_exhausted | tool_fatal | cancelled
    draft_summary: TaskSummary | None = None
    detail: str = ""

    @property
    def completed(self) -> bool:
        return self.terminal == "completed"


def assemble_brief(task: TaskSpec, workspace: Workspace, *,
                   revise_feedback: str | None = None) -> TaskBrief:
    """Build the isolated context for a task whose dependencies are Accepted.

    Carries exactly the dependency summaries the plan's edges call for;
    a missing summary for an accepted dependency means the journal and the
    workspace diverged, which is an integrity error.
    """
    summaries = workspace.read_dependency_summaries(task)
    return TaskBrief(
        task=task,
        dependency_summaries=tuple(summaries),
        task_dir=f"tasks/{task.task_id}",
        shared_dir="shared",
        revise_feedback=revise_feedback,
    )


# ---------------------------------------------------------------------------
# Context compaction


@dataclass
class _StepBlock:
    step_no: int  # 0 is the brief block
    messages: list[Message]


def _block_bytes(blocks: list[_StepBlock]) -> int:
    return sum(len(m.content.encode("utf-8")) for b in blocks for m in b.messages)


def _digest_block(blocks: list[_StepBlock]) -> Message:
    """Mechanical summary of dropped steps: tool names, failure flags, and
    the tail of the last observation."""
    lines = [f"[context digest of steps {blocks[0].step_no}-{blocks[-1].step_no}]"]
    for block in blocks:
        calls = []
        failed = False
        last_obs = ""
        for message in block.messages:
            if message.speaker == "assistant":
                try:
                    data = json.loads(message.content)
                    calls = [c.get("name", "?") for c in data.get("tool_calls", [])]
                except (json.JSONDecodeError, AttributeError):
                    calls = []
            elif message.speaker == "tool":
                last_obs = message.content[-160:]
                if '"failed": true' in message.content or '"error"' in message.content:
                    failed = True
        status = "failed" if failed else "ok"
        lines.append(f"step {block.step_no}: tools={','.join(calls) or 'none'} {status}")
        if last_obs:
            lines.append(f"  last observation tail: {last_obs}")
    return Message(speaker="user", content="\n".join(lines))


def compact_context(blocks: list[_StepBlock], budget: int, keep_recent: int) -> tuple[list[_StepBlock], int]:
    """Shrink an over-budget transcript: brief and the most recent
    ``keep_recent`` steps stay verbatim, older steps collapse into one
    digest block.  Returns (blocks, dropped_step_count)."""
    if _block_bytes(blocks) <= budget:
        return blocks, 0
    brief = blocks[0]
    if len(brief.messages) and _block_bytes([brief]) > budget:
        raise ModelError("context budget smaller than the brief alone")
    steps = blocks[1:]
    if len(steps) <= keep_recent:
        return blocks, 0
    dropped = steps[:-keep_recent]
    kept = steps[-keep_recent:]
    digest = _StepBlock(step_no=dropped[-1].step_no, messages=[_digest_block(dropped)])
    return [brief, digest] + kept, len(dropped)


# ---------------------------------------------------------------------------
# The step loop


def _render_assistant(response: ChatResponse) -> Message:
    return Message(speaker="assistant", content=canonical_json(response.to_dict()))


def _observation(call: ToolCall, payload: dict[str, Any]) -> Message:
    return Message(speaker="tool", content=canonical_json(payload), tool_call_id=call.call_id)


def _summary_from_arguments(task_id: int, args: dict[str, Any]) -> TaskSummary:
    artifacts = []
    for item in args.get("artifacts", []):
        if isinstance(item, str):
            artifacts.append((item, ""))
        else:
            artifacts.append((item["path"], item.get("description", "")))
    metrics = tuple((m["name"], float(m["value"]), m.get("unit", ""))
                    for m in args.get("metrics", []))
    return TaskSummary(
        task_id=task_id,
        outcome=args.get("outcome", ""),
        artifact_index=tuple(artifacts),
        usage_notes=args.get("usage_notes", ""),
        data_formats=args.get("data_formats", ""),
        metrics=metrics,
    )


class TaskRunner:
    """Drives one (task, attempt) through the step loop."""

    def __init__(self, brief: TaskBrief, attempt: int, *,
                 backend, executor: Executor, config: RunConfig,
                 journal: Journal, workspace: Workspace,
                 cancel: Callable[[], bool] | None = None) -> None:
        self.brief = brief
        self.attempt = attempt
        self.backend = backend
        self.executor = executor
        self.config = config
        self.journal = journal
        self.workspace = workspace
        self._cancel = cancel or (lambda: False)
        self.task_id = brief.task.task_id
        self._log_dir = workspace.task_dir(self.task_id, create=True) / "logs"
        self._transcript_path = workspace.transcript_path(self.task_id, attempt)

    # -- transcript persistence ------------------------------------------

    def _persist_step(self, record: StepRecord, messages: list[Message]) -> None:
        entry = {"record": record.to_dict(),
                 "messages": [m.to_dict() for m in messages]}
        with open(self._transcript_path, "a", encoding="utf-8") as fh:
            fh.write(canonical_json(entry) + "\n")

    # -- tool dispatch -----------------------------------------------------

    def _execute_call(self, call: ToolCall, step_no: int) -> tuple[dict[str, Any], bool]:
        """Run one tool call; returns (observation payload, failed)."""
        args = call.parsed_arguments()
        name = call.name
        if name == "run_command":
            req = ExecutionRequest(
                command=args["command"],
                working_dir=args.get("working_dir", f"tasks/{self.task_id}"),
                timeout=args.get("timeout"))
            outcome = self.executor.run_command(
                req, log_path=self._log_dir / f"step-{step_no}.log")
            return outcome.observation_dict(), outcome.failed
        if name == "write_file":
            digest = self.executor.write_file(args["path"], args["content"].encode("utf-8"))
            return {"written": args["path"], "digest": digest, "failed": False}, False
        if name == "read_file":
            result = self.executor.read_file(
                args["path"], offset=int(args.get("offset", 0)),
                length=args.get("length"))
            return {
                "path": args["path"],
                "content": result.data.decode("utf-8", errors="replace"),
                "short_read": result.short_read,
                "failed": False,
            }, False
        if name == "spawn_job":
            req = ExecutionRequest(command=args["command"],
                                   working_dir=args.get("working_dir", f"tasks/{self.task_id}"))
            handle = self.executor.spawn_job(
                req, log_dir=self.workspace.task_dir(self.task_id) / "jobs")
            return {"job_id": handle.job_id, "status": handle.status, "failed": False}, False
        if name == "poll_job":
            handle, tail = self.executor.poll_job(args["job_id"])
            failed = handle.status == "exited" and handle.exit_code not in (0, None)
            return {"job_id": handle.job_id, "status": handle.status,
                    "exit_code": handle.exit_code, "log_tail": tail,
                    "failed": failed}, failed
        if name == "kill_job":
            handle = self.executor.kill_job(args["job_id"])
            return {"job_id": handle.job_id, "status": handle.status, "failed": False}, False
        return {"error": f"unknown tool {name!r}", "failed": True}, True

    # -- main loop ------------------------------------------------------------

    def run(self) -> TaskResult:
        rendered_brief = self.brief.render()
        blocks: list[_StepBlock] = [
            _StepBlock(step_no=0, messages=[Message(speaker="user", content=rendered_brief)])
        ]
        steps: list[StepRecord] = []
        with open(self._transcript_path, "a", encoding="utf-8") as fh:
            fh.write(canonical_json({"attempt": self.attempt, "brief": rendered_brief}) + "\n")

        for step_no in range(1, self.config.step_budget + 1):
            if self._cancel():
                return TaskResult(self.task_id, self.attempt, tuple(steps), "cancelled")

            compacted, dropped = compact_context(
                blocks, self.config.context_budget, self.config.keep_recent_steps)
            if dropped:
                blocks = compacted
                self.journal.append(ContextCompacted(
                    task_id=self.task_id, attempt=self.attempt,
                    step_no=step_no, dropped_steps=dropped))

            messages = tuple(m for b in blocks for m in b.messages)
            request = ChatRequest(role_tag="worker", system=prompts.WORKER_SYSTEM,
                                  messages=messages, tools=WORKER_TOOLS,
                                  task_id=self.task_id, step_no=step_no)
            response, schema_failure = self._exchange(request)
            block = _StepBlock(step_no=step_no, messages=[])
            if response is not None:
                block.messages.append(_render_assistant(response))

            if schema_failure or response is None:
                observation = Message(speaker="user", content=canonical_json(
                    {"error": "response carried no usable tool call", "failed": True}))
                block.messages.append(observation)
                record = StepRecord(step_no=step_no,
                                    request_digest=request.request_digest,
                                    tool_calls=(), outcome_digests=(),
                                    local_failure=True)
                steps.append(record)
                blocks.append(block)
                self._persist_step(record, block.messages)
                self.journal.append(StepExecuted(self.task_id, self.attempt,
                                                 step_no, record.digest()))
                continue

            complete_call = next((c for c in response.tool_calls
                                  if c.name == "task_complete"), None)
            other_calls = [c for c in response.tool_calls if c.name != "task_complete"]

            outcome_digests: list[str] = []
            local_failure = False
            fatal: str | None = None
            for call in other_calls:
                try:
                    payload, failed = self._execute_call(call, step_no)
                except PathEscapeError as exc:
                    fatal = f"path escape attempt in {call.name}: {exc}"
                    payload, failed = {"error": str(exc), "failed": True}, True
                except (ExecutorError, UnknownJobError, FileNotFoundError,
                        BackendError) as exc:
                    payload, failed = {"error": str(exc), "failed": True}, True
                block.messages.append(_observation(call, payload))
                outcome_digests.append(content_digest(payload))
                local_failure = local_failure or failed
                if fatal:
                    break

            draft: TaskSummary | None = None
            if fatal is None and complete_call is not None:
                try:
                    draft = _summary_from_arguments(
                        self.task_id, complete_call.parsed_arguments())
                except (BackendError, ModelError, KeyError, TypeError, ValueError) as exc:
                    payload = {"error": f"task_complete rejected: {exc}", "failed": True}
                    block.messages.append(_observation(complete_call, payload))
                    outcome_digests.append(content_digest(payload))
                    local_failure = True
                else:
                    missing = [p for p, _ in draft.artifact_index
                               if not self.workspace.resolve(p).exists()]
                    if missing:
                        payload = {"error": "draft summary lists missing artifacts: "
                                   + ", ".join(sorted(missing)), "failed": True}
                        block.messages.append(_observation(complete_call, payload))
                        outcome_digests.append(content_digest(payload))
                        local_failure = True
                        draft = None

            record = StepRecord(step_no=step_no,
                                request_digest=request.request_digest,
                                tool_calls=tuple(response.tool_calls),
                                outcome_digests=tuple(outcome_digests),
                                local_failure=local_failure)
            steps.append(record)
            blocks.append(block)
            self._persist_step(record, block.messages)
            self.journal.append(StepExecuted(self.task_id, self.attempt,
                                             step_no, record.digest()))

            if fatal is not None:
                return TaskResult(self.task_id, self.attempt, tuple(steps),
                                  "tool_fatal", detail=fatal)
            if draft is not None:
                return TaskResult(self.task_id, self.attempt, tuple(steps),
                                  "completed", draft_summary=draft)

        return TaskResult(self.task_id, self.attempt, tuple(steps), "budget_exhausted")

    def _exchange(self, request: ChatRequest) -> tuple[ChatResponse | None, bool]:
        """One backend call with a single schema-reprompt; returns
        (response, schema_failure)."""
        try:
            response = self.backend.complete(request)
        except ScriptExhausted:
            raise
        except BackendError as exc:
            logger.warning("backend error on task %s step %s: %s",
                           request.task_id, request.step_no, exc)
            return None, True
        if response.tool_calls:
            return response, False
        # One reprompt per step: nudge the model toward the tool contract.
        nudge = Message(speaker="user",
                        content="Respond with a tool call; prose alone cannot advance the task.")
        retry_request = ChatRequest(
            role_tag=request.role_tag, system=request.system,
            messages=request.messages + (_render_assistant(response), nudge),
            tools=request.tools, task_id=request.task_id, step_no=request.step_no)
        try:
            retry = self.backend.complete(retry_request)
        except ScriptExhausted:
            raise
        except BackendError:
            return response, True
        if retry.tool_calls:
            return retry, False
        return retry, True


def run_task(brief: TaskBrief, attempt: int, *, backend, executor: Executor,
             config: RunConfig, journal: Journal, workspace: Workspace,
             cancel: Callable[[], bool] | None = None) -> TaskResult:
    """Execute one task attempt to a terminal outcome."""
    runner = TaskRunner(brief, attempt, backend=backend, executor=executor,
                        config=config, journal=journal, workspace=workspace,
                        cancel=cancel)
    return runner.run()
