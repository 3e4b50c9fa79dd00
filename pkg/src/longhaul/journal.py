"""Append-only event journal: one JSON document per line, UTF-8, LF.

The first line is a schema-versioned header; every following line is one
event with a strictly increasing, gap-free sequence number.  Appends are
serialized by an internal lock so worker threads can record their steps
while the scheduler owns all state transitions.
"""

from __future__ import annotations

import json
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

from .model import (
    Event,
    EventPayload,
    JOURNAL_SCHEMA_VERSION,
    JournalCorruption,
    canonical_json,
    fold_state,
    journal_digest,
)

FaultHook = Callable[[str], None]


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


class Journal:
    """Durable, thread-safe event log for one project."""

    def __init__(self, path: Path, project_id: str, *,
                 create: bool = False,
                 clock: Callable[[], str] = _utc_now_iso,
                 fault_hook: FaultHook | None = None) -> None:
        self.path = Path(path)
        self.project_id = project_id
        self._clock = clock
        self._fault_hook = fault_hook
        self._lock = threading.Lock()
        self._appender = None
        if create:
            if self.path.exists():
                raise JournalCorruption(f"journal already exists: {self.path}")
            self.path.parent.mkdir(parents=True, exist_ok=True)
            header = {"journal_schema": JOURNAL_SCHEMA_VERSION, "project_id": project_id}
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write(canonical_json(header) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._next_sequence = 1
        else:
            events = list(self.read_events())
            self._next_sequence = (events[-1].sequence_no + 1) if events else 1

    def _append_handle(self):
        # Unbuffered binary append: each event lands in one write() call,
        # so concurrent readers (the event stream) never see a torn line.
        if self._appender is None or self._appender.closed:
            self._appender = open(self.path, "ab", buffering=0)
        return self._appender

    def close(self) -> None:
        with self._lock:
            if self._appender is not None and not self._appender.closed:
                self._appender.close()

    # -- writing ------------------------------------------------------------

    def append(self, payload: EventPayload) -> Event:
        """Durably append one event and return it.

        The fault hook fires before and after the write so tests can inject
        crashes at either side of the durability boundary.
        """
        with self._lock:
            event = Event(sequence_no=self._next_sequence,
                          timestamp=self._clock(), payload=payload)
            if self._fault_hook is not None:
                self._fault_hook("pre_append")
            line = (canonical_json(event.to_dict()) + "\n").encode("utf-8")
            fh = self._append_handle()
            fh.write(line)
            os.fsync(fh.fileno())
            self._next_sequence += 1
            if self._fault_hook is not None:
                self._fault_hook("post_append")
            return event

    @property
    def next_sequence(self) -> int:
        return self._next_sequence

    # -- reading ------------------------------------------------------------

    def read_header(self) -> dict:
        with open(self.path, "r", encoding="utf-8") as fh:
            first = fh.readline()
        if not first:
            raise JournalCorruption(f"journal is empty (missing header): {self.path}")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise JournalCorruption(f"journal header is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or "journal_schema" not in header:
            raise JournalCorruption("journal header lacks a schema version")
        if header["journal_schema"] != JOURNAL_SCHEMA_VERSION:
            raise JournalCorruption(
                f"unsupported journal schema {header['journal_schema']!r}")
        return header

    def read_events(self) -> list[Event]:
        """Read and sequence-check every event; raises on any corruption."""
        self.read_header()
        events: list[Event] = []
        expected = 1
        with open(self.path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if line_no == 1:
                    continue
                stripped = line.strip()
                if not stripped:
                    raise JournalCorruption(f"blank journal line {line_no}")
                try:
                    data = json.loads(stripped)
                except json.JSONDecodeError as exc:
                    raise JournalCorruption(
                        f"journal line {line_no} is not valid JSON "
                        f"(possibly a torn write): {exc}") from exc
                event = Event.from_dict(data)
                if event.sequence_no != expected:
                    raise JournalCorruption(
                        f"journal line {line_no}: sequence {event.sequence_no}, expected {expected}")
                expected += 1
                events.append(event)
        return events

    def iter_from(self, after_sequence: int) -> Iterator[Event]:
        """Events with sequence_no > after_sequence, in order."""
        for event in self.read_events():
            if event.sequence_no > after_sequence:
                yield event

    def fold(self):
        return fold_state(self.read_events())

    def digest(self) -> str:
        return journal_digest(self.read_events())


def open_journal(path: Path, project_id: str = "", **kwargs) -> Journal:
    """Open an existing journal, verifying its header."""
    journal = Journal(path, project_id, create=False, **kwargs)
    header = journal.read_header()
    if project_id and header.get("project_id") not in ("", project_id):
        raise JournalCorruption(
            f"journal belongs to project {header.get('project_id')!r}, not {project_id!r}")
    return journal
