"""Backend-agnostic model exchange plus the deterministic test backends.

The engine never talks to a provider directly; it builds a ChatRequest and
hands it to anything with a ``complete`` method.  Scripted and replay
backends make whole project runs reproducible at desk scale; the
stochastic profile drives the chain-failure economics simulation.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .model import ModelError, canonical_json, content_digest

logger = logging.getLogger(__name__)

ROLE_TAGS = ("planner", "worker", "assessor")


class BackendError(Exception):
    pass


class ScriptExhausted(BackendError):
    """No scripted entry matches the request key."""


class ReplayDivergence(BackendError):
    """A replayed request differs from the recorded one."""


# ---------------------------------------------------------------------------
# Exchange types


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ""
    parameters: str = "{}"  # JSON schema text; consumers validate arguments

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "description": self.description,
                "parameters": self.parameters}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToolSchema":
        return cls(name=data["name"], description=data.get("description", ""),
                   parameters=data.get("parameters", "{}"))


@dataclass(frozen=True)
class Message:
    speaker: str  # user | assistant | tool
    content: str
    tool_call_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"speaker": self.speaker, "content": self.content}
        if self.tool_call_id is not None:
            out["tool_call_id"] = self.tool_call_id
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Message":
        return cls(speaker=data["speaker"], content=data["content"],
                   tool_call_id=data.get("tool_call_id"))


@dataclass(frozen=True)
class ChatRequest:
    """One exchange sent to the model.

    ``task_id`` and ``step_no`` identify the exchange for scripted and
    replay matching; live providers ignore them.  The digest is a pure
    function of every other field.
    """

    role_tag: str
    system: str
    messages: tuple[Message, ...]
    tools: tuple[ToolSchema, ...] = ()
    task_id: int | None = None
    step_no: int | None = None

    def __post_init__(self) -> None:
        if self.role_tag not in ROLE_TAGS:
            raise ModelError(f"role_tag must be one of {ROLE_TAGS}, got {self.role_tag!r}")
        if not self.messages:
            raise ModelError("ChatRequest.messages must be non-empty")

    @property
    def request_digest(self) -> str:
        return content_digest(self._digest_basis())

    def _digest_basis(self) -> dict[str, Any]:
        return {
            "role_tag": self.role_tag,
            "system": self.system,
            "messages": [m.to_dict() for m in self.messages],
            "tools": [t.to_dict() for t in self.tools],
            "task_id": self.task_id,
            "step_no": self.step_no,
        }

    def to_dict(self) -> dict[str, Any]:
        out = self._digest_basis()
        out["request_digest"] = self.request_digest
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ChatRequest":
        return cls(
            role_tag=data["role_tag"],
            system=data["system"],
            messages=tuple(Message.from_dict(m) for m in data["messages"]),
            tools=tuple(ToolSchema.from_dict(t) for t in data.get("tools", [])),
            task_id=data.get("task_id"),
            step_no=data.get("step_no"),
        )


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: str  # structured text (JSON), validated by the consumer
    call_id: str

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "arguments": self.arguments, "call_id": self.call_id}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToolCall":
        return cls(name=data["name"], arguments=data["arguments"], call_id=data["call_id"])

    def parsed_arguments(self) -> dict[str, Any]:
        try:
            parsed = json.loads(self.arguments)
        except json.JSONDecodeError as exc:
            raise BackendError(f"tool call {self.name!r} has unparseable arguments: {exc}") from exc
        if not isinstance(parsed, dict):
            raise BackendError(f"tool call {self.name!r} arguments must be a JSON object")
        return parsed


@dataclass(frozen=True)
class ChatResponse:
    assistant_text: str = ""
    tool_calls: tuple[ToolCall, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"assistant_text": self.assistant_text,
                "tool_calls": [c.to_dict() for c in self.tool_calls]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ChatResponse":
        return cls(assistant_text=data.get("assistant_text", ""),
                   tool_calls=tuple(ToolCall.from_dict(c) for c in data.get("tool_calls", [])))


def validate_response(request: ChatRequest, response: ChatResponse) -> None:
    """Every tool call must name a tool the request offered."""
    offered = {t.name for t in request.tools}
    for call in response.tool_calls:
        if call.name not in offered:
            raise BackendError(
                f"response calls tool {call.name!r} not offered by the request "
                f"(offered: {sorted(offered)})")


# ---------------------------------------------------------------------------
# Scripted backend


@dataclass(frozen=True)
class ScriptEntry:
    """One canned exchange: a match key and the response to give.

    The key is either an explicit request digest or the triple
    (role_tag, task_id, step_no) where None acts as a wildcard.  Entries
    with the same key are consumed in script order; ``repeat`` marks an
    entry reusable (for fixtures where many tasks share one response).
    """

    response: ChatResponse
    role_tag: str | None = None
    task_id: int | None = None
    step_no: int | None = None
    request_digest: str | None = None
    repeat: bool = False

    def key(self) -> tuple:
        if self.request_digest is not None:
            return ("digest", self.request_digest)
        return (self.role_tag, self.task_id, self.step_no)

    def matches(self, request: ChatRequest) -> bool:
        if self.request_digest is not None:
            return self.request_digest == request.request_digest
        if self.role_tag is not None and self.role_tag != request.role_tag:
            return False
        if self.task_id is not None and self.task_id != request.task_id:
            return False
        if self.step_no is not None and self.step_no != request.step_no:
            return False
        return True

    def to_dict(self) -> dict[str, Any]:
        return {
            "role_tag": self.role_tag,
            "task_id": self.task_id,
            "step_no": self.step_no,
            "request_digest": self.request_digest,
            "repeat": self.repeat,
            "response": self.response.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScriptEntry":
        return cls(
            response=ChatResponse.from_dict(data["response"]),
            role_tag=data.get("role_tag"),
            task_id=data.get("task_id"),
            step_no=data.get("step_no"),
            request_digest=data.get("request_digest"),
            repeat=bool(data.get("repeat", False)),
        )


class ScriptedBackend:
    """Deterministic backend serving canned responses keyed by request identity.

    Exact-key duplicates form a FIFO queue, which is how reprompt rounds
    are scripted.  A request with no live match raises ScriptExhausted
    naming the key it looked for.
    """

    def __init__(self, entries: Sequence[ScriptEntry]):
        self._entries = list(entries)
        self._consumed = [False] * len(self._entries)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedBackend":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                entries.append(ScriptEntry.from_dict(json.loads(line)))
        return cls(entries)

    def dump(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self._entries:
                fh.write(canonical_json(entry.to_dict()) + "\n")

    def remaining(self) -> int:
        return sum(1 for used in self._consumed if not used)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            # Digest-keyed entries take precedence over field-keyed ones.
            best: int | None = None
            for idx, entry in enumerate(self._entries):
                if self._consumed[idx] and not entry.repeat:
                    continue
                if not entry.matches(request):
                    continue
                if entry.request_digest is not None:
                    best = idx
                    break
                if best is None:
                    best = idx
            if best is None:
                key = (request.role_tag, request.task_id, request.step_no)
                raise ScriptExhausted(
                    f"script exhausted: no entry for key {key} "
                    f"digest {request.request_digest[:12]}")
            self._consumed[best] = True
            response = self._entries[best].response
        validate_response(request, response)
        return response


# ---------------------------------------------------------------------------
# Record / replay


class RecordingBackend:
    """Wrap a backend and append every exchange to a transcript before the
    response is returned; a failed append aborts the exchange."""

    def __init__(self, inner, transcript_path: Path):
        self._inner = inner
        self.transcript_path = Path(transcript_path)
        self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        record = {"request": request.to_dict(), "response": response.to_dict()}
        with self._lock:
            with open(self.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(canonical_json(record) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return response


class ReplayBackend:
    """Serve a recorded transcript back, strictly in order, verifying that
    each incoming request digests identically to the recorded one."""

    def __init__(self, transcript_path: Path):
        self._records = []
        for line in Path(transcript_path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                self._records.append(json.loads(line))
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            if self._cursor >= len(self._records):
                raise ReplayDivergence(
                    f"transcript exhausted at exchange {self._cursor + 1}: "
                    f"unexpected request digest {request.request_digest}")
            record = self._records[self._cursor]
            recorded_digest = record["request"].get("request_digest")
            if recorded_digest != request.request_digest:
                raise ReplayDivergence(
                    f"divergence at exchange {self._cursor + 1}: "
                    f"recorded digest {recorded_digest}, got {request.request_digest}")
            self._cursor += 1
            return ChatResponse.from_dict(record["response"])


# ---------------------------------------------------------------------------
# Stochastic simulation


_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit mixer."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class StochasticProfile:
    """Per-step success probability and the seed that makes draws reproducible."""

    per_step_success: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.per_step_success <= 1.0:
            raise ModelError(f"per_step_success must be in [0, 1], got {self.per_step_success}")


def step_uniform(profile: StochasticProfile, step_index: int) -> float:
    """Deterministic uniform draw in [0, 1) for (seed, step_index)."""
    z = _mix64(_mix64(profile.seed & _MASK64) ^ _mix64(step_index & _MASK64))
    return z / 2.0 ** 64


def simulate_step(profile: StochasticProfile, step_index: int) -> bool:
    """True iff the step succeeds; marginal success probability is the
    profile's per-step rate, deterministic given (seed, step_index)."""
    return step_uniform(profile, step_index) < profile.per_step_success


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(0x9E3779B97F4A7C15))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def step_uniform_batch(seeds: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Vectorized step_uniform over broadcastable uint64 seed/index arrays;
    bit-identical to the scalar path."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    indices = np.asarray(indices, dtype=np.uint64)
    z = _mix64_np(_mix64_np(seeds) ^ _mix64_np(indices))
    return z.astype(np.float64) / np.float64(2.0 ** 64)


def chain_run_succeeds(profile: StochasticProfile, n_steps: int, retry_budget: int = 0) -> bool:
    """Whether one chain of dependent steps completes.

    Every step gets 1 + retry_budget tries; the chain fails at the first
    step whose tries all fail.  Draw indices are laid out step-major so
    results are invariant to how many tries earlier steps consumed.
    """
    tries = retry_budget + 1
    for step in range(n_steps):
        ok = False
        for attempt in range(tries):
            if simulate_step(profile, step * tries + attempt):
                ok = True
                break
        if not ok:
            return False
    return True


def chain_completion_fraction(p: float, n_steps: int, n_runs: int, *,
                              retry_budget: int = 0, seed_base: int = 0) -> float:
    """Fraction of seeded chains that complete, vectorized over runs.

    Run k uses seed seed_base + k; identical to calling chain_run_succeeds
    per run (cross-checked in the test suite).
    """
    tries = retry_budget + 1
    seeds = (np.arange(n_runs, dtype=np.uint64) + np.uint64(seed_base))[:, None]
    indices = np.arange(n_steps * tries, dtype=np.uint64)[None, :]
    draws = step_uniform_batch(seeds, indices) < p
    per_step = draws.reshape(n_runs, n_steps, tries).any(axis=2)
    return float(per_step.all(axis=1).mean())


def analytic_completion(p: float, n_steps: int, retry_budget: int = 0) -> float:
    """Closed-form chain completion probability (1 - q^(r+1))^n."""
    q = 1.0 - p
    return (1.0 - q ** (retry_budget + 1)) ** n_steps


# ---------------------------------------------------------------------------
# Live provider adapter (thin, optional)

API_KEY_ENV = "LONGHAUL_API_KEY"
BASE_URL_ENV = "LONGHAUL_BASE_URL"
MODEL_ENV = "LONGHAUL_MODEL"


class OpenAICompatibleBackend:
    """Minimal adapter for OpenAI-style chat-completions endpoints.

    Credentials come from the environment (values are never logged or
    journaled); the engine has no hard dependency on any provider.
    """

    def __init__(self, *, model: str | None = None, base_url: str | None = None,
                 api_key: str | None = None, timeout: float = 120.0, max_retries: int = 2):
        self.model = model or os.environ.get(MODEL_ENV, "")
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV, "")).rstrip("/")
        self._api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self.max_retries = max_retries
        if not self.model or not self.base_url:
            raise BackendError(
                f"live backend needs {MODEL_ENV} and {BASE_URL_ENV} configured")

    def complete(self, request: ChatRequest) -> ChatResponse:
        import httpx

        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "system", "content": request.system}] + [
                {"role": "user" if m.speaker == "user" else
                 ("tool" if m.speaker == "tool" else "assistant"),
                 "content": m.content}
                for m in request.messages
            ],
        }
        if request.tools:
            payload["tools"] = [{
                "type": "function",
                "function": {"name": t.name, "description": t.description,
                             "parameters": json.loads(t.parameters or "{}")},
            } for t in request.tools]
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_error: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = httpx.post(f"{self.base_url}/chat/completions", json=payload,
                                  headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return self._parse(resp.json(), request)
            except httpx.TransportError as exc:  # retryable
                last_error = exc
                logger.warning("transport error talking to provider, retrying: %s", exc)
        raise BackendError(f"provider unreachable after retries: {last_error}")

    @staticmethod
    def _parse(data: Mapping[str, Any], request: ChatRequest) -> ChatResponse:
        try:
            message = data["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed provider output: {exc}") from exc
        calls = []
        for idx, call in enumerate(message.get("tool_calls") or []):
            fn = call.get("function", {})
            calls.append(ToolCall(name=fn.get("name", ""),
                                  arguments=fn.get("arguments", "{}"),
                                  call_id=call.get("id", f"call-{idx}")))
        response = ChatResponse(assistant_text=message.get("content") or "",
                                tool_calls=tuple(calls))
        validate_response(request, response)
        return response
