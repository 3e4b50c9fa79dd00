"""Sandboxed tool execution: shell commands, file I/O, and supervised
long-running jobs.

Children run in their own process group inside the workspace path jail
with an allowlisted environment.  Full output always lands in a task log;
callers only see a size-capped excerpt.  Long jobs are spawned and polled,
never awaited inline.
"""

from __future__ import annotations

import logging
import os
import signal
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .model import ModelError
from .workspace import Workspace, file_digest

logger = logging.getLogger(__name__)

TRUNCATION_MARKER = "\n[output truncated: shown {shown} of {total} bytes]"


class ExecutorError(Exception):
    pass


class UnknownJobError(ExecutorError):
    pass


@dataclass(frozen=True)
class ExecutionRequest:
    command: str
    working_dir: str = "."  # workspace-relative
    timeout: float | None = None
    env_allowlist: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.command.strip():
            raise ModelError("command must be non-empty")


@dataclass(frozen=True)
class ExecutionOutcome:
    exit_code: int
    stdout_excerpt: str
    stderr_excerpt: str
    duration: float
    timed_out: bool

    @property
    def failed(self) -> bool:
        return self.exit_code != 0 or self.timed_out

    def to_dict(self) -> dict:
        return {
            "exit_code": self.exit_code,
            "stdout_excerpt": self.stdout_excerpt,
            "stderr_excerpt": self.stderr_excerpt,
            "duration": self.duration,
            "timed_out": self.timed_out,
        }

    def observation_dict(self) -> dict:
        """The deterministic subset fed back to the model: no wall-clock
        fields, so identical runs produce identical transcripts."""
        return {
            "exit_code": self.exit_code,
            "stdout_excerpt": self.stdout_excerpt,
            "stderr_excerpt": self.stderr_excerpt,
            "timed_out": self.timed_out,
            "failed": self.failed,
        }


@dataclass
class JobHandle:
    job_id: str
    command: str
    started_at: float
    status: str  # running | exited | killed
    log_path: Path
    exit_code: int | None = None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "command": self.command,
            "started_at": self.started_at,
            "status": self.status,
            "exit_code": self.exit_code,
            "log_path": str(self.log_path),
        }


@dataclass(frozen=True)
class ReadResult:
    data: bytes
    short_read: bool


def truncate_excerpt(data: bytes, cap: int) -> str:
    """Cap raw output for the model's eyes; the marker appears iff truncated."""
    text = data.decode("utf-8", errors="replace")
    if len(data) <= cap:
        return text
    shown = data[:cap].decode("utf-8", errors="replace")
    return shown + TRUNCATION_MARKER.format(shown=cap, total=len(data))


class Executor:
    """Shared, thread-safe tool executor bound to one workspace."""

    def __init__(self, workspace: Workspace, *,
                 default_timeout: float = 60.0,
                 max_timeout: float = 3600.0,
                 output_truncation: int = 65536,
                 env_allowlist: tuple[str, ...] = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR"),
                 fault_hook: Callable[[str], None] | None = None) -> None:
        self.workspace = workspace
        self.default_timeout = default_timeout
        self.max_timeout = max_timeout
        self.output_truncation = output_truncation
        self.env_allowlist = env_allowlist
        self._fault_hook = fault_hook
        self._jobs: dict[str, tuple[JobHandle, subprocess.Popen]] = {}
        self._procs: set[subprocess.Popen] = set()
        self._job_counter = 0
        self._lock = threading.Lock()

    # -- environment ------------------------------------------------------

    def _child_env(self, allowlist: tuple[str, ...] | None) -> dict[str, str]:
        names = allowlist if allowlist is not None else self.env_allowlist
        return {name: os.environ[name] for name in names if name in os.environ}

    def _effective_timeout(self, timeout: float | None) -> float:
        value = timeout if timeout is not None else self.default_timeout
        if value <= 0 or value > self.max_timeout:
            raise ExecutorError(
                f"timeout {value} outside (0, {self.max_timeout}]")
        return value

    # -- commands -----------------------------------------------------------

    def run_command(self, req: ExecutionRequest, *, log_path: Path | None = None) -> ExecutionOutcome:
        """Run a command to completion or kill its whole group at timeout.

        Full stdout/stderr is appended to ``log_path`` when given; the
        outcome carries capped excerpts with an explicit truncation marker.
        """
        cwd = self.workspace.resolve(req.working_dir)
        if not cwd.is_dir():
            raise ExecutorError(f"working directory does not exist: {req.working_dir!r}")
        timeout = self._effective_timeout(req.timeout)
        env = self._child_env(req.env_allowlist)
        started = time.monotonic()
        try:
            proc = subprocess.Popen(
                req.command, shell=True, cwd=str(cwd), env=env,
                stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                start_new_session=True)
        except OSError as exc:
            raise ExecutorError(f"failed to spawn command: {exc}") from exc
        with self._lock:
            self._procs.add(proc)
        timed_out = False
        try:
            try:
                stdout, stderr = proc.communicate(timeout=timeout)
            except subprocess.TimeoutExpired:
                timed_out = True
                self._kill_group(proc)
                stdout, stderr = proc.communicate()
        finally:
            with self._lock:
                self._procs.discard(proc)
        duration = time.monotonic() - started
        if log_path is not None:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(log_path, "ab") as fh:
                fh.write(b"$ " + req.command.encode("utf-8") + b"\n")
                fh.write(stdout)
                if stderr:
                    fh.write(b"\n--- stderr ---\n" + stderr)
                fh.write(b"\n")
        return ExecutionOutcome(
            exit_code=proc.returncode if not timed_out else -1,
            stdout_excerpt=truncate_excerpt(stdout, self.output_truncation),
            stderr_excerpt=truncate_excerpt(stderr, self.output_truncation),
            duration=duration,
            timed_out=timed_out,
        )

    @staticmethod
    def _kill_group(proc: subprocess.Popen) -> None:
        try:
            os.killpg(proc.pid, signal.SIGTERM)
        except (ProcessLookupError, PermissionError):
            pass
        deadline = time.monotonic() + 2.0
        while proc.poll() is None and time.monotonic() < deadline:
            time.sleep(0.02)
        if proc.poll() is None:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass
            proc.wait()

    # -- jobs ----------------------------------------------------------------

    def spawn_job(self, req: ExecutionRequest, *, log_dir: Path) -> JobHandle:
        """Start a long-running command and return immediately; its output
        streams to ``log_dir/<job_id>.log``."""
        cwd = self.workspace.resolve(req.working_dir)
        if not cwd.is_dir():
            raise ExecutorError(f"working directory does not exist: {req.working_dir!r}")
        env = self._child_env(req.env_allowlist)
        with self._lock:
            self._job_counter += 1
            job_id = f"job-{self._job_counter}"
        log_path = log_dir / f"{job_id}.log"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "ab")
        try:
            proc = subprocess.Popen(
                req.command, shell=True, cwd=str(cwd), env=env,
                stdout=log_file, stderr=subprocess.STDOUT,
                start_new_session=True)
        except OSError as exc:
            log_file.close()
            raise ExecutorError(f"failed to spawn job: {exc}") from exc
        finally:
            # The child holds its own descriptor once spawned.
            if not log_file.closed:
                log_file.close()
        handle = JobHandle(job_id=job_id, command=req.command,
                           started_at=time.time(), status="running", log_path=log_path)
        with self._lock:
            self._jobs[handle.job_id] = (handle, proc)
            self._procs.add(proc)
        return handle

    def poll_job(self, job_id: str, *, tail_bytes: int = 4096) -> tuple[JobHandle, str]:
        """Non-blocking status check; returns the handle and a log tail."""
        with self._lock:
            if job_id not in self._jobs:
                raise UnknownJobError(f"unknown job {job_id!r}")
            handle, proc = self._jobs[job_id]
            if handle.status == "running":
                code = proc.poll()
                if code is not None:
                    handle.status = "exited"
                    handle.exit_code = code
                    self._procs.discard(proc)
        tail = ""
        if handle.log_path.exists():
            size = handle.log_path.stat().st_size
            with open(handle.log_path, "rb") as fh:
                if size > tail_bytes:
                    fh.seek(size - tail_bytes)
                tail = fh.read(tail_bytes).decode("utf-8", errors="replace")
        return handle, tail

    def kill_job(self, job_id: str) -> JobHandle:
        """Terminate a job's process group; idempotent."""
        with self._lock:
            if job_id not in self._jobs:
                raise UnknownJobError(f"unknown job {job_id!r}")
            handle, proc = self._jobs[job_id]
            already_done = handle.status != "running"
        if not already_done:
            self._kill_group(proc)
            with self._lock:
                if handle.status == "running":
                    handle.status = "killed"
                    handle.exit_code = proc.returncode
                self._procs.discard(proc)
        return handle

    def kill_all_jobs(self, *, drain_seconds: float = 0.0) -> None:
        """Stop every live child, used at halt and on fatal shutdown."""
        with self._lock:
            live = [(h, p) for h, p in self._jobs.values() if h.status == "running"]
        if live and drain_seconds > 0:
            deadline = time.monotonic() + drain_seconds
            while time.monotonic() < deadline and any(p.poll() is None for _, p in live):
                time.sleep(0.05)
        for handle, proc in live:
            if proc.poll() is None:
                self._kill_group(proc)
            with self._lock:
                if handle.status == "running":
                    handle.status = "killed"
                    handle.exit_code = proc.returncode
                self._procs.discard(proc)

    def live_children(self) -> list[int]:
        """PIDs of any still-running children; empty after clean shutdown."""
        with self._lock:
            return [p.pid for p in self._procs if p.poll() is None]

    # -- files -----------------------------------------------------------------

    def read_file(self, relative: str, *, offset: int = 0, length: int | None = None) -> ReadResult:
        path = self.workspace.resolve(relative)
        if not path.exists():
            raise FileNotFoundError(f"no such file in workspace: {relative!r}")
        if not path.is_file():
            raise ExecutorError(f"not a regular file: {relative!r}")
        with open(path, "rb") as fh:
            fh.seek(offset)
            data = fh.read() if length is None else fh.read(length)
        short = length is not None and len(data) < length
        return ReadResult(data=data, short_read=short)

    def write_file(self, relative: str, data: bytes) -> str:
        """Atomic write (temp + rename) returning the content digest.

        Writes under shared/ are serialized through the workspace facade.
        """
        path = self.workspace.resolve(relative)
        is_shared = relative == "shared" or relative.startswith("shared/")
        lock = self.workspace._shared_lock if is_shared else threading.Lock()
        with lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + f".tmp-{uuid.uuid4().hex[:8]}")
            try:
                with open(tmp, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                if self._fault_hook is not None:
                    self._fault_hook("pre_rename")
                os.replace(tmp, path)
            finally:
                if tmp.exists():
                    tmp.unlink()
        return file_digest(path)
