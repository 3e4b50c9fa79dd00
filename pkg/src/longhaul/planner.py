"""Turns a project brief into a validated plan, and revises plans on resume.

The planner may ask the user questions through an interaction channel; it
must deliver the finished plan through a single propose_plan tool call.
Invalid plans are reprompted with the violation list; prose-only responses
are rejected the same way.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol

from . import prompts
from .backend import ChatRequest, Message, ToolSchema
from .model import (
    HaltRecord,
    ModelError,
    Plan,
    ProjectSpec,
    RunConfig,
    TaskState,
    Violation,
    validate_plan,
    validate_revision,
)

logger = logging.getLogger(__name__)

PLANNER_TOOLS = (
    ToolSchema("propose_plan", "Submit the finished project plan.",
               '{"type":"object","properties":{"goal":{"type":"string"},'
               '"tasks":{"type":"array"}},"required":["goal","tasks"]}'),
    ToolSchema("ask_user", "Ask the user one clarifying question.",
               '{"type":"object","properties":{"question":{"type":"string"}},'
               '"required":["question"]}'),
)

MAX_QUESTIONS = 20


class PlanningError(Exception):
    def __init__(self, message: str, violations: list[Violation] | None = None):
        super().__init__(message)
        self.violations = violations or []


class PlanningAbandoned(PlanningError):
    pass


class InteractionChannel(Protocol):
    def ask(self, question: str) -> str: ...


class UnattendedChannel:
    """Answers every question with a canned instruction, for CI and
    unattended runs."""

    def __init__(self, answer: str = "Proceed with stated assumptions."):
        self.answer = answer

    def ask(self, question: str) -> str:
        logger.info("unattended answer to planner question: %s", question)
        return self.answer


class ScriptedChannel:
    def __init__(self, answers: list[str]):
        self._answers = list(answers)
        self.asked: list[str] = []

    def ask(self, question: str) -> str:
        self.asked.append(question)
        if not self._answers:
            raise PlanningAbandoned(f"no scripted answer for question: {question!r}")
        return self._answers.pop(0)


@dataclass
class PlanningSession:
    spec: ProjectSpec
    exchanges: list[dict[str, Any]] = field(default_factory=list)
    questions_asked: list[tuple[str, str]] = field(default_factory=list)
    outcome: Plan | None = None
    abandoned_reason: str | None = None


def _plan_from_arguments(args: Mapping[str, Any], version: int) -> Plan:
    data = dict(args)
    data["version"] = version
    return Plan.from_dict(data)


def _violation_text(violations: list[Violation]) -> str:
    return "\n".join(f"- [{v.rule}] {v.message}" for v in violations)


def plan_project(spec: ProjectSpec, backend, channel: InteractionChannel, *,
                 config: RunConfig | None = None, version: int = 1,
                 extra_context: str | None = None) -> tuple[Plan, PlanningSession]:
    """Produce a validated plan for the brief, reprompting on violations.

    The planner may finish without questions; when it does ask, answers
    come only through the channel.  Exhausting the reprompt budget is a
    planning failure carrying the last violation list.
    """
    config = config or spec.config
    session = PlanningSession(spec=spec)
    brief_lines = ["Project brief:", spec.instruction]
    if spec.attachments:
        brief_lines += ["", "Attachments (path, bytes):"]
        brief_lines += [f"- {p} ({n})" for p, n in spec.attachments]
    if extra_context:
        brief_lines += ["", extra_context]
    messages: list[Message] = [Message(speaker="user", content="\n".join(brief_lines))]

    questions = 0
    last_violations: list[Violation] = []
    reprompts = 0
    while reprompts < config.assess_reprompt_limit:
        request = ChatRequest(role_tag="planner", system=prompts.PLANNER_SYSTEM,
                              messages=tuple(messages), tools=PLANNER_TOOLS)
        response = backend.complete(request)
        session.exchanges.append({"request_digest": request.request_digest,
                                  "response": response.to_dict()})

        ask = next((c for c in response.tool_calls if c.name == "ask_user"), None)
        propose = next((c for c in response.tool_calls if c.name == "propose_plan"), None)

        if ask is not None and propose is None:
            questions += 1
            if questions > MAX_QUESTIONS:
                raise PlanningError("planner asked too many questions")
            question = ask.parsed_arguments().get("question", "")
            answer = channel.ask(question)
            session.questions_asked.append((question, answer))
            messages.append(Message(speaker="assistant", content=question))
            messages.append(Message(speaker="user", content=answer))
            continue

        if propose is None:
            reprompts += 1
            messages.append(Message(
                speaker="user",
                content="Submit the plan with the propose_plan tool; prose is not accepted."))
            continue

        try:
            plan = _plan_from_arguments(propose.parsed_arguments(), version)
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            reprompts += 1
            last_violations = [Violation("malformed-plan", str(exc))]
            messages.append(Message(
                speaker="user",
                content=f"The plan document is malformed: {exc}. Submit a corrected plan."))
            continue

        violations = validate_plan(plan)
        if not violations:
            session.outcome = plan
            return plan, session
        reprompts += 1
        last_violations = violations
        messages.append(Message(
            speaker="user",
            content="The plan is invalid:\n" + _violation_text(violations)
                    + "\nSubmit a corrected plan."))

    raise PlanningError(
        "planning failed: reprompt budget exhausted\n" + _violation_text(last_violations),
        last_violations)


def revise_plan_for_resume(plan: Plan, halt_record: HaltRecord, user_instruction: str,
                           backend, states: Mapping[int, TaskState], *,
                           config: RunConfig) -> tuple[Plan, PlanningSession]:
    """Produce plan version+1 for a halted project.

    Accepted tasks must reappear unchanged; new or changed tasks may only
    sit at or after the halt frontier.  The revision needs approval again
    before anything dispatches.
    """
    accepted = sorted(t for t, s in states.items() if s.kind.value == "accepted")
    lines = [
        "The project is halted and must be revised so it can resume.",
        f"Halt reason: {halt_record.reason}",
        f"Halt frontier (affected tasks): {sorted(halt_record.frontier)}",
        f"Accepted tasks that must remain byte-identical: {accepted}",
        "",
        "Current plan:",
        json.dumps(plan.to_dict(), indent=2, sort_keys=True),
        "",
        "Operator instruction for the resume:",
        user_instruction or "(none: continue from where the project stopped)",
    ]
    messages: list[Message] = [Message(speaker="user", content="\n".join(lines))]
    spec_stub = ProjectSpec(project_id="resume", instruction=user_instruction or "resume",
                            config=config)
    session = PlanningSession(spec=spec_stub)

    reprompts = 0
    last_violations: list[Violation] = []
    while reprompts < config.assess_reprompt_limit:
        request = ChatRequest(role_tag="planner", system=prompts.PLANNER_SYSTEM,
                              messages=tuple(messages), tools=PLANNER_TOOLS)
        response = backend.complete(request)
        session.exchanges.append({"request_digest": request.request_digest,
                                  "response": response.to_dict()})
        propose = next((c for c in response.tool_calls if c.name == "propose_plan"), None)
        if propose is None:
            reprompts += 1
            messages.append(Message(
                speaker="user",
                content="Submit the revised plan with the propose_plan tool."))
            continue
        try:
            revised = _plan_from_arguments(propose.parsed_arguments(), plan.version + 1)
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            reprompts += 1
            last_violations = [Violation("malformed-plan", str(exc))]
            messages.append(Message(
                speaker="user",
                content=f"The revised plan is malformed: {exc}. Submit a corrected plan."))
            continue
        violations = validate_revision(plan, revised, states)
        if not violations:
            session.outcome = revised
            return revised, session
        reprompts += 1
        last_violations = violations
        messages.append(Message(
            speaker="user",
            content="The revision is invalid:\n" + _violation_text(violations)
                    + "\nSubmit a corrected revision."))

    raise PlanningError(
        "plan revision failed: reprompt budget exhausted\n" + _violation_text(last_violations),
        last_violations)
