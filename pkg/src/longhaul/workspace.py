"""The shared working directory: per-task areas, cross-task artifacts,
summary store, plan versions, and the journal location.

Layout under the workspace root (names are part of the on-disk contract):

    tasks/<task_id>/        per-task scratch, created lazily on first dispatch
    shared/                 cross-task artifacts
    summaries/task-<id>.json  one live summary per accepted task
    journal/events.jsonl    the event log
    plan/version-<n>.json   every proposed plan version
    archive/<id>.attempt-<n>/  invalidated or superseded attempts

Every write resolves inside the root after symlink and parent-segment
normalization; hostile paths are rejected before touching the filesystem.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .model import Plan, TaskSpec, TaskSummary, canonical_json

logger = logging.getLogger(__name__)

SUBDIRS = ("tasks", "shared", "summaries", "journal", "plan", "archive")
JOURNAL_FILE = "events.jsonl"


class WorkspaceError(Exception):
    pass


class PathEscapeError(WorkspaceError):
    """A path tried to leave the workspace root."""


class IntegrityError(WorkspaceError):
    """Journal and workspace disagree about what should exist."""


class MissingArtifactsError(WorkspaceError):
    def __init__(self, paths: list[str]):
        self.paths = paths
        super().__init__("missing: " + ", ".join(paths))


@dataclass(frozen=True)
class ArtifactRecord:
    path: str
    producer: int
    description: str
    byte_length: int
    content_digest: str

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "producer": self.producer,
            "description": self.description,
            "byte_length": self.byte_length,
            "content_digest": self.content_digest,
        }


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _pretty_json(value) -> bytes:
    return (json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


class Workspace:
    """Handle on one project's working directory.

    Writes to ``summaries/`` and ``shared/`` are serialized through an
    internal lock (the single-writer facade); per-task directories are
    owned by their worker and need no coordination.  Readers are
    unrestricted.
    """

    def __init__(self, root: Path, *, fault_hook: Callable[[str], None] | None = None) -> None:
        self.root = Path(root).resolve()
        self._shared_lock = threading.Lock()
        self._fault_hook = fault_hook

    # -- creation -------------------------------------------------------

    @classmethod
    def initialize(cls, root: Path, plan: Plan | None = None, *,
                   fault_hook: Callable[[str], None] | None = None) -> "Workspace":
        """Create the layout in an empty or absent root.

        A root that already holds a journal is an existing project and is
        refused: recovery and resume open it instead.
        """
        root = Path(root)
        if root.exists():
            if not root.is_dir():
                raise WorkspaceError(f"workspace root is not a directory: {root}")
            if (root / "journal" / JOURNAL_FILE).exists():
                raise WorkspaceError(f"workspace exists; use resume: {root}")
            if any(root.iterdir()):
                raise WorkspaceError(f"refusing to initialize non-empty directory: {root}")
        try:
            root.mkdir(parents=True, exist_ok=True)
            for sub in SUBDIRS:
                (root / sub).mkdir(exist_ok=True)
        except PermissionError as exc:
            raise WorkspaceError(f"cannot create workspace at {root}: {exc}") from exc
        ws = cls(root, fault_hook=fault_hook)
        if plan is not None:
            ws.persist_plan(plan)
        return ws

    @classmethod
    def open(cls, root: Path, **kwargs) -> "Workspace":
        root = Path(root)
        missing = [sub for sub in SUBDIRS if not (root / sub).is_dir()]
        if missing:
            raise WorkspaceError(f"not a workspace (missing {', '.join(missing)}): {root}")
        return cls(root, **kwargs)

    # -- path jail ------------------------------------------------------

    def resolve(self, relative: str) -> Path:
        """Map a workspace-relative path to an absolute one inside the root.

        Rejects absolute paths, parent-directory segments, NUL bytes, and
        any path whose symlink-resolved location escapes the root.
        """
        if not isinstance(relative, str) or relative == "":
            raise PathEscapeError(f"invalid path: {relative!r}")
        if "\x00" in relative:
            raise PathEscapeError(f"path contains NUL byte: {relative!r}")
        if relative.startswith(("/", "\\")) or (len(relative) > 1 and relative[1] == ":"):
            raise PathEscapeError(f"absolute paths are not allowed: {relative!r}")
        parts = Path(relative).parts
        if ".." in parts:
            raise PathEscapeError(f"parent-directory segments are not allowed: {relative!r}")
        candidate = self.root / relative
        # Resolve symlinks in the deepest existing ancestor before the check.
        probe = candidate
        while not probe.exists() and probe != probe.parent:
            probe = probe.parent
        resolved_existing = probe.resolve()
        if resolved_existing != self.root and self.root not in resolved_existing.parents:
            raise PathEscapeError(f"path escapes workspace root: {relative!r}")
        return candidate

    # -- fixed locations --------------------------------------------------

    @property
    def journal_path(self) -> Path:
        return self.root / "journal" / JOURNAL_FILE

    @property
    def project_file(self) -> Path:
        return self.root / "project.json"

    def task_dir(self, task_id: int, *, create: bool = False) -> Path:
        path = self.root / "tasks" / str(task_id)
        if create:
            path.mkdir(parents=True, exist_ok=True)
        return path

    def shared_dir(self) -> Path:
        return self.root / "shared"

    def summary_path(self, task_id: int) -> Path:
        return self.root / "summaries" / f"task-{task_id}.json"

    def plan_path(self, version: int) -> Path:
        return self.root / "plan" / f"version-{version}.json"

    def transcript_path(self, task_id: int, attempt: int) -> Path:
        return self.task_dir(task_id) / f"transcript.attempt-{attempt}.jsonl"

    def assessment_path(self, task_id: int, attempt: int) -> Path:
        return self.task_dir(task_id) / f"assessment.attempt-{attempt}.json"

    # -- plans ------------------------------------------------------------

    def persist_plan(self, plan: Plan) -> Path:
        path = self.plan_path(plan.version)
        _write_atomic(path, _pretty_json(plan.to_dict()))
        return path

    def load_plan(self, version: int) -> Plan:
        path = self.plan_path(version)
        if not path.exists():
            raise WorkspaceError(f"no persisted plan version {version}")
        return Plan.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def plan_versions(self) -> list[int]:
        out = []
        for p in (self.root / "plan").glob("version-*.json"):
            try:
                out.append(int(p.stem.split("-", 1)[1]))
            except (IndexError, ValueError):
                continue
        return sorted(out)

    # -- summaries ----------------------------------------------------------

    def write_summary(self, task_id: int, summary: TaskSummary, *,
                      cap: int | None = None) -> Path:
        """Persist an accepted task's summary, verifying every artifact it lists.

        The write is atomic and re-verifies the artifact index immediately
        before publishing, so a racing deletion yields a clean error and no
        partial summary file.
        """
        if summary.task_id != task_id:
            raise WorkspaceError(
                f"summary task_id {summary.task_id} does not match {task_id}")
        data = _pretty_json(summary.to_dict())
        if cap is not None and len(data) > cap:
            raise WorkspaceError(
                f"summary for task {task_id} is {len(data)} bytes, over the {cap} byte cap")
        with self._shared_lock:
            self._verify_artifacts(summary)
            if self._fault_hook is not None:
                self._fault_hook("summary_verified")
            path = self.summary_path(task_id)
            tmp = path.with_name(path.name + ".tmp")
            try:
                with open(tmp, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                self._verify_artifacts(summary)
                os.replace(tmp, path)
            finally:
                if tmp.exists():
                    tmp.unlink()
            return path

    def _verify_artifacts(self, summary: TaskSummary) -> None:
        missing = [p for p, _ in summary.artifact_index if not self.resolve(p).exists()]
        if missing:
            raise MissingArtifactsError(sorted(missing))

    def read_summary(self, task_id: int) -> TaskSummary:
        path = self.summary_path(task_id)
        if not path.exists():
            raise IntegrityError(f"missing summary for accepted task {task_id}")
        return TaskSummary.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def has_summary(self, task_id: int) -> bool:
        return self.summary_path(task_id).exists()

    def summary_task_ids(self) -> list[int]:
        out = []
        for p in (self.root / "summaries").glob("task-*.json"):
            try:
                out.append(int(p.stem.split("-", 1)[1]))
            except (IndexError, ValueError):
                continue
        return sorted(out)

    def read_dependency_summaries(self, task: TaskSpec) -> list[TaskSummary]:
        """Summaries of exactly the task's dependencies, ordered by task id."""
        return [self.read_summary(dep) for dep in sorted(task.dependencies)]

    # -- archiving -----------------------------------------------------------

    def archive_attempt(self, task_id: int, attempt: int) -> Path | None:
        """Move a task's scratch directory aside so a redo starts clean.

        Returns the archive path, or None when the task never produced a
        directory.  A live summary for the task is retired into the same
        archive.  Collisions get a monotone counter, never an overwrite.
        """
        task_dir = self.task_dir(task_id)
        summary = self.summary_path(task_id)
        if not task_dir.exists() and not summary.exists():
            return None
        base = self.root / "archive" / f"{task_id}.attempt-{attempt}"
        dest = base
        counter = 2
        while dest.exists():
            dest = base.with_name(f"{base.name}.{counter}")
            counter += 1
        dest.mkdir(parents=True)
        if task_dir.exists():
            shutil.move(str(task_dir), str(dest / "task"))
        task_dir.mkdir(parents=True, exist_ok=True)
        if summary.exists():
            with self._shared_lock:
                if summary.exists():
                    shutil.move(str(summary), str(dest / "summary.json"))
        return dest

    def retract_shared(self, paths: Iterable[str], archive_dir: Path) -> list[str]:
        """Move named shared artifacts into an archive directory."""
        retracted = []
        with self._shared_lock:
            for rel in paths:
                target = self.resolve(rel)
                if target.exists():
                    dest = archive_dir / "retracted" / rel
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    shutil.move(str(target), str(dest))
                    retracted.append(rel)
        return retracted

    # -- artifact registry ---------------------------------------------------

    @property
    def registry_path(self) -> Path:
        return self.root / "artifacts.jsonl"

    def register_artifacts(self, task_id: int, summary: TaskSummary) -> list[ArtifactRecord]:
        """Record the artifacts an accepted summary names, with their digests."""
        records = []
        with self._shared_lock:
            for rel, description in summary.artifact_index:
                path = self.resolve(rel)
                if not path.exists():
                    raise MissingArtifactsError([rel])
                records.append(ArtifactRecord(
                    path=rel, producer=task_id, description=description,
                    byte_length=path.stat().st_size, content_digest=file_digest(path)))
            with open(self.registry_path, "a", encoding="utf-8") as fh:
                for record in records:
                    fh.write(canonical_json(record.to_dict()) + "\n")
        return records

    def registered_artifacts(self) -> list[ArtifactRecord]:
        if not self.registry_path.exists():
            return []
        out = []
        for line in self.registry_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            out.append(ArtifactRecord(
                path=data["path"], producer=int(data["producer"]),
                description=data.get("description", ""),
                byte_length=int(data["byte_length"]),
                content_digest=data["content_digest"]))
        return out

    # -- listings (assessor evidence) -----------------------------------------

    def list_task_files(self, task_id: int) -> list[tuple[str, int]]:
        """(workspace-relative path, size) for everything under tasks/<id>."""
        task_dir = self.task_dir(task_id)
        if not task_dir.exists():
            return []
        out = []
        for path in sorted(task_dir.rglob("*")):
            if path.is_file():
                out.append((str(path.relative_to(self.root)), path.stat().st_size))
        return out

    def read_tail(self, relative: str, max_bytes: int) -> str:
        path = self.resolve(relative)
        if not path.exists() or not path.is_file():
            return ""
        size = path.stat().st_size
        with open(path, "rb") as fh:
            if size > max_bytes:
                fh.seek(size - max_bytes)
            data = fh.read(max_bytes)
        return data.decode("utf-8", errors="replace")
