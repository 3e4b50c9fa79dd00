"""Durable journal: header, gap-free sequencing, corruption refusal."""

from __future__ import annotations

import json

import pytest

from longhaul.journal import Journal, open_journal
from longhaul.model import (
    JournalCorruption,
    PlanApproved,
    PlanProposed,
    ProjectCompleted,
)
from tests.conftest import linear_plan


def make_journal(tmp_path, **kwargs) -> Journal:
    return Journal(tmp_path / "events.jsonl", "proj", create=True, **kwargs)


def test_create_and_append(tmp_path):
    journal = make_journal(tmp_path)
    plan = linear_plan(2)
    e1 = journal.append(PlanProposed(plan))
    e2 = journal.append(PlanApproved(version=1))
    assert (e1.sequence_no, e2.sequence_no) == (1, 2)
    lines = journal.path.read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0])["journal_schema"] == 1
    assert json.loads(lines[0])["project_id"] == "proj"
    assert len(lines) == 3
    assert all(line == line.rstrip("\n") for line in lines)


def test_reopen_continues_sequence(tmp_path):
    journal = make_journal(tmp_path)
    journal.append(PlanProposed(linear_plan(1)))
    journal.close()
    reopened = open_journal(journal.path, "proj")
    event = reopened.append(PlanApproved(version=1))
    assert event.sequence_no == 2
    assert [e.sequence_no for e in reopened.read_events()] == [1, 2]


def test_create_refuses_existing(tmp_path):
    make_journal(tmp_path)
    with pytest.raises(JournalCorruption):
        make_journal(tmp_path)


def test_open_wrong_project_refused(tmp_path):
    journal = make_journal(tmp_path)
    journal.append(PlanProposed(linear_plan(1)))
    with pytest.raises(JournalCorruption):
        open_journal(journal.path, "other-project")


def test_gap_detected_on_read(tmp_path):
    journal = make_journal(tmp_path)
    journal.append(PlanProposed(linear_plan(1)))
    journal.append(PlanApproved(version=1))
    journal.close()
    lines = journal.path.read_text(encoding="utf-8").splitlines()
    journal.path.write_text("\n".join([lines[0], lines[2]]) + "\n", encoding="utf-8")
    with pytest.raises(JournalCorruption, match="sequence"):
        open_journal(journal.path).read_events()


def test_torn_tail_refused_with_diagnosis(tmp_path):
    journal = make_journal(tmp_path)
    journal.append(PlanProposed(linear_plan(1)))
    journal.close()
    with open(journal.path, "a", encoding="utf-8") as fh:
        fh.write('{"sequence_no": 2, "timestamp": "x", "payl')
    with pytest.raises(JournalCorruption, match="line 3"):
        open_journal(journal.path).read_events()


def test_missing_header_refused(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(JournalCorruption, match="header"):
        open_journal(path)


def test_fault_hook_fires_around_append(tmp_path):
    points = []
    journal = make_journal(tmp_path, fault_hook=points.append)
    journal.append(ProjectCompleted())
    assert points == ["pre_append", "post_append"]

    class Crash(RuntimeError):
        pass

    def explode(point):
        if point == "pre_append":
            raise Crash(point)

    journal2 = Journal(tmp_path / "j2.jsonl", "p", create=True, fault_hook=explode)
    with pytest.raises(Crash):
        journal2.append(ProjectCompleted())
    # Nothing was written: the crash came before the durability point.
    assert [e.sequence_no for e in open_journal(journal2.path).read_events()] == []


def test_iter_from_and_digest_stability(tmp_path):
    journal = make_journal(tmp_path)
    plan = linear_plan(2)
    journal.append(PlanProposed(plan))
    journal.append(PlanApproved(version=1))
    journal.append(ProjectCompleted())
    assert [e.sequence_no for e in journal.iter_from(1)] == [2, 3]
    assert journal.digest() == journal.digest()
