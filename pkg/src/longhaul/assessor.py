"""Independent-context judgement of task attempts and project health.

The assessor never sees a worker transcript: its input is the task
contract, the draft summary, an artifact listing, bounded evidence
excerpts chosen by listing heuristics, and the accepted summaries.  Its
output is one of four verdicts, parsed strictly from a designated tool
call and reprompted on failure.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from . import prompts
from .backend import ChatRequest, ChatResponse, Message, ToolSchema
from .model import (
    Accept,
    Halt,
    ModelError,
    Plan,
    RedoFrom,
    Revise,
    RunConfig,
    TaskSpec,
    TaskState,
    TaskSummary,
    Verdict,
    canonical_json,
    verdict_to_dict,
)
from .worker import TaskResult
from .workspace import Workspace

logger = logging.getLogger(__name__)

VERDICT_TOOL = ToolSchema(
    "verdict",
    "Issue the assessment verdict for this task attempt.",
    '{"type":"object","properties":{"kind":{"type":"string",'
    '"enum":["accept","revise","redo_from","halt"]},'
    '"final_summary":{"type":"object"},"feedback":{"type":"string"},'
    '"severity":{"type":"string","enum":["minor","major"]},'
    '"target":{"type":"integer"},"reason":{"type":"string"}},'
    '"required":["kind"]}',
)

EVIDENCE_EXCERPT_BYTES = 2048
EVIDENCE_TOTAL_BYTES = 16384


@dataclass(frozen=True)
class ParseFailure:
    """Structured description of why a response yielded no verdict."""

    violations: tuple[str, ...]


@dataclass(frozen=True)
class AssessmentInput:
    task: TaskSpec
    terminal: str
    draft_summary: TaskSummary | None
    artifact_listing: tuple[tuple[str, int], ...]
    evidence_excerpts: tuple[tuple[str, str], ...]
    plan_goal: str
    plan_overview: tuple[str, ...]
    accepted_summaries: tuple[TaskSummary, ...]

    def render(self) -> str:
        lines = [
            f"Task under assessment: {self.task.task_id}: {self.task.title}",
            f"Attempt terminal status: {self.terminal}",
            "",
            "Objective:",
            self.task.objective,
            "",
            "Success criteria:",
        ]
        lines += [f"- {c}" for c in self.task.success_criteria]
        lines += ["", "Draft summary:"]
        lines.append(canonical_json(self.draft_summary.to_dict())
                     if self.draft_summary else "(none: the attempt did not complete)")
        lines += ["", "Artifact listing (path, bytes):"]
        if self.artifact_listing:
            lines += [f"- {p} ({n})" for p, n in self.artifact_listing]
        else:
            lines.append("- (no files)")
        if self.evidence_excerpts:
            lines += ["", "Evidence excerpts:"]
            for path, text in self.evidence_excerpts:
                lines += [f"--- {path} ---", text]
        lines += ["", f"Project goal: {self.plan_goal}", "", "Plan overview:"]
        lines += [f"- {t}" for t in self.plan_overview]
        if self.accepted_summaries:
            lines += ["", "Accepted summaries so far:"]
            lines += [canonical_json(s.to_dict()) for s in self.accepted_summaries]
        return "\n".join(lines)


def build_assessment_input(task: TaskSpec, result: TaskResult, workspace: Workspace,
                           plan: Plan, accepted_summaries: Sequence[TaskSummary]) -> AssessmentInput:
    """Select bounded, listed-provenance evidence for the judge.

    Heuristics: the task directory listing (metadata only), tail excerpts
    of the most recent step logs, and any task files whose names appear in
    the success criteria or expected artifacts.  Worker transcripts are
    never excerpted.
    """
    listing = workspace.list_task_files(task.task_id)
    if result.draft_summary:
        for rel, _desc in result.draft_summary.artifact_index:
            path = workspace.resolve(rel)
            if path.exists() and not any(rel == existing for existing, _ in listing):
                listing.append((rel, path.stat().st_size))

    criteria_text = " ".join(task.success_criteria) + " " + " ".join(task.expected_artifacts)
    excerpts: list[tuple[str, str]] = []
    used = 0

    def add_excerpt(rel: str) -> None:
        nonlocal used
        if used >= EVIDENCE_TOTAL_BYTES:
            return
        budget = min(EVIDENCE_EXCERPT_BYTES, EVIDENCE_TOTAL_BYTES - used)
        text = workspace.read_tail(rel, budget)
        if text:
            excerpts.append((rel, text))
            used += len(text.encode("utf-8"))

    logs = sorted((rel for rel, _ in listing if "/logs/" in rel or "/jobs/" in rel),
                  key=lambda rel: rel)
    for rel in logs[-3:]:
        add_excerpt(rel)
    for rel, _size in listing:
        name = rel.rsplit("/", 1)[-1]
        if _is_transcript(rel):
            continue
        if name in criteria_text and all(rel != p for p, _ in excerpts):
            add_excerpt(rel)

    clean_listing = tuple((rel, size) for rel, size in listing if not _is_transcript(rel))
    overview = tuple(
        f"task {t.task_id}: {t.title} (deps: {sorted(t.dependencies) or 'none'}; "
        f"criteria: {'; '.join(t.success_criteria)})"
        for t in plan.tasks)
    return AssessmentInput(
        task=task,
        terminal=result.terminal,
        draft_summary=result.draft_summary,
        artifact_listing=clean_listing,
        evidence_excerpts=tuple(excerpts),
        plan_goal=plan.goal,
        plan_overview=overview,
        accepted_summaries=tuple(accepted_summaries),
    )


def _is_transcript(rel: str) -> bool:
    name = rel.rsplit("/", 1)[-1]
    return name.startswith("transcript.attempt-") or name.startswith("assessment.attempt-")


# ---------------------------------------------------------------------------
# Verdict parsing


def parse_verdict(response: ChatResponse, *, task_id: int | None = None,
                  plan: Plan | None = None,
                  allow_accept: bool = True) -> Verdict | ParseFailure:
    """Total parse of a verdict tool call; failures are data for reprompts.

    With a plan and task id the contextual rules apply: a RedoFrom target
    must exist and precede the task under assessment, and Accept is
    refused for attempts that did not complete.
    """
    violations: list[str] = []
    calls = [c for c in response.tool_calls if c.name == "verdict"]
    if not calls:
        return ParseFailure(("response contains no verdict tool call",))
    if len(calls) > 1:
        violations.append("response contains more than one verdict tool call")
    try:
        args = calls[0].parsed_arguments()
    except Exception as exc:
        return ParseFailure((f"verdict arguments are not a JSON object: {exc}",))

    kind = args.get("kind")
    if kind == "accept":
        if not allow_accept:
            violations.append("accept is not allowed for an attempt that did not complete")
        summary = None
        if args.get("final_summary") is not None:
            try:
                summary = TaskSummary.from_dict(args["final_summary"])
            except (ModelError, KeyError, TypeError, ValueError) as exc:
                violations.append(f"final_summary is malformed: {exc}")
        if violations:
            return ParseFailure(tuple(violations))
        return Accept(final_summary=summary)
    if kind == "revise":
        feedback = args.get("feedback", "")
        severity = args.get("severity", "minor")
        if not str(feedback).strip():
            violations.append("feedback required for revise")
        if severity not in ("minor", "major"):
            violations.append(f"unknown severity {severity!r}")
        if violations:
            return ParseFailure(tuple(violations))
        return Revise(feedback=feedback, severity=severity)
    if kind == "redo_from":
        target = args.get("target")
        reason = args.get("reason", "")
        if not isinstance(target, int):
            violations.append("redo_from requires an integer target")
        else:
            if plan is not None and not plan.has_task(target):
                violations.append(f"target out of range: task {target} is not in the plan")
            if task_id is not None and isinstance(target, int) and target > task_id:
                violations.append(
                    f"target out of range: {target} is after the task under assessment ({task_id})")
        if not str(reason).strip():
            violations.append("reason required for redo_from")
        if violations:
            return ParseFailure(tuple(violations))
        return RedoFrom(target=target, reason=reason)
    if kind == "halt":
        reason = args.get("reason", "")
        if not str(reason).strip():
            violations.append("reason required for halt")
        if violations:
            return ParseFailure(tuple(violations))
        return Halt(reason=reason)
    return ParseFailure((f"unknown verdict variant {kind!r}",))


# ---------------------------------------------------------------------------
# Assessment operations


def assess_task(inp: AssessmentInput, backend, config: RunConfig, *,
                workspace: Workspace | None = None, plan: Plan | None = None,
                attempt: int = 1) -> Verdict:
    """Judge one terminal task attempt; unparseable output is reprompted up
    to the configured limit and then escalates to a Halt."""
    allow_accept = inp.terminal == "completed"
    base = Message(speaker="user", content=inp.render())
    messages: list[Message] = [base]
    rounds: list[dict[str, Any]] = []
    verdict: Verdict | None = None
    for round_no in range(1, config.assess_reprompt_limit + 1):
        # Keyed by attempt, not round: reprompt rounds within one attempt
        # share a key and scripted entries for them consume in order.
        request = ChatRequest(role_tag="assessor", system=prompts.ASSESSOR_SYSTEM,
                              messages=tuple(messages), tools=(VERDICT_TOOL,),
                              task_id=inp.task.task_id, step_no=attempt)
        response = backend.complete(request)
        parsed = parse_verdict(response, task_id=inp.task.task_id, plan=plan,
                               allow_accept=allow_accept)
        rounds.append({
            "round": round_no,
            "request_digest": request.request_digest,
            "violations": list(parsed.violations) if isinstance(parsed, ParseFailure) else [],
        })
        if not isinstance(parsed, ParseFailure):
            verdict = parsed
            break
        logger.info("assessor verdict for task %s rejected: %s",
                    inp.task.task_id, "; ".join(parsed.violations))
        messages.append(Message(
            speaker="user",
            content="The verdict was rejected: " + "; ".join(parsed.violations)
                    + ". Issue a corrected verdict tool call."))
    if verdict is None:
        verdict = Halt(reason="assessor output unparseable")
    if workspace is not None:
        manifest = {
            "task_id": inp.task.task_id,
            "attempt": attempt,
            "terminal": inp.terminal,
            "artifact_listing": [[p, n] for p, n in inp.artifact_listing],
            "evidence_paths": [p for p, _ in inp.evidence_excerpts],
            "rounds": rounds,
            "verdict": verdict_to_dict(verdict),
        }
        path = workspace.assessment_path(inp.task.task_id, attempt)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    return verdict


def assess_project(plan: Plan, states: Mapping[int, TaskState],
                   accepted_summaries: Sequence[TaskSummary],
                   halt_candidate: int, reason: str, backend,
                   config: RunConfig) -> Verdict:
    """Project-level judgement after retry exhaustion; Accept means continue."""
    lines = [
        f"Project goal: {plan.goal}",
        "",
        f"Escalation: task {halt_candidate} — {reason}",
        "",
        "Task states:",
    ]
    for task in plan.tasks:
        state = states.get(task.task_id)
        lines.append(f"- task {task.task_id} ({task.title}): "
                     f"{state.kind.value if state else 'unknown'}")
    if accepted_summaries:
        lines += ["", "Accepted summaries:"]
        lines += [canonical_json(s.to_dict()) for s in accepted_summaries]
    messages: list[Message] = [Message(speaker="user", content="\n".join(lines))]
    verdict: Verdict | None = None
    for round_no in range(1, config.assess_reprompt_limit + 1):
        request = ChatRequest(role_tag="assessor", system=prompts.PROJECT_ASSESSOR_SYSTEM,
                              messages=tuple(messages), tools=(VERDICT_TOOL,),
                              task_id=halt_candidate, step_no=None)
        response = backend.complete(request)
        parsed = parse_verdict(response, task_id=halt_candidate, plan=plan,
                               allow_accept=True)
        if not isinstance(parsed, ParseFailure):
            verdict = parsed
            break
        messages.append(Message(
            speaker="user",
            content="The verdict was rejected: " + "; ".join(parsed.violations)
                    + ". Issue a corrected verdict tool call."))
    if verdict is None:
        verdict = Halt(reason="assessor output unparseable")
    return verdict
