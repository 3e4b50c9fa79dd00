"""Core domain algebra: plan validation, ready sets, invalidation closures,
and the journal fold."""

from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longhaul.model import (
    Accept,
    Event,
    Halt,
    JournalCorruption,
    ModelError,
    Plan,
    PlanApproved,
    PlanProposed,
    ProjectCompleted,
    ProjectHalted,
    ProjectResumed,
    RedoFrom,
    Revise,
    StepExecuted,
    TaskDispatched,
    TaskSpec,
    TaskState,
    TaskStateKind,
    TaskSummary,
    TasksInvalidated,
    Verdict,
    VerdictIssued,
    event_content_digest,
    fold_state,
    fold_step,
    invalidation_closure,
    journal_digest,
    payload_from_dict,
    payload_to_dict,
    ready_set,
    validate_plan,
    validate_revision,
    verdict_from_dict,
    verdict_to_dict,
)
from tests.conftest import linear_plan, make_plan

# ---------------------------------------------------------------------------
# validate_plan


def test_linear_12_chain_is_valid():
    assert validate_plan(linear_plan(12)) == []


def test_empty_plan_reports_no_tasks():
    report = validate_plan(Plan(goal="g", tasks=(), version=1))
    assert [v.rule for v in report] == ["empty-plan"]
    assert "plan has no tasks" in report[0].message


def test_three_cycle_named():
    plan = make_plan({1: {3}, 2: {1}, 3: {2}})
    report = validate_plan(plan)
    cycle = [v for v in report if v.rule == "cycle"]
    assert len(cycle) == 1
    assert "cycle through 1,2,3" in cycle[0].message


def test_dangling_dependency_names_missing_task():
    # Oracle: exhaustively check every declared edge against the id set.
    plan = linear_plan(27)
    tasks = list(plan.tasks)
    victim = tasks[20]
    tasks[20] = TaskSpec(
        task_id=victim.task_id, title=victim.title, objective=victim.objective,
        success_criteria=victim.success_criteria,
        dependencies=frozenset({99}))
    mutated = Plan(goal=plan.goal, tasks=tuple(tasks), version=1)

    ids = {t.task_id for t in mutated.tasks}
    oracle_bad_edges = [(t.task_id, d) for t in mutated.tasks
                        for d in t.dependencies if d not in ids]
    assert oracle_bad_edges == [(21, 99)]

    report = validate_plan(mutated)
    unknown = [v for v in report if v.rule == "unknown-dependency"]
    assert len(unknown) == 1
    assert unknown[0].task_id == 21
    assert "99" in unknown[0].message


def test_duplicate_ids_and_empty_criteria_reported():
    tasks = (
        TaskSpec(1, "a", "obj", ("c",)),
        TaskSpec(1, "b", "obj", ("c",)),
        TaskSpec(2, "c", "obj", ()),
    )
    rules = {v.rule for v in validate_plan(Plan(goal="g", tasks=tasks))}
    assert "duplicate-id" in rules
    assert "empty-criteria" in rules


def test_self_dependency_reported():
    plan = make_plan({1: set(), 2: {2}})
    assert any(v.rule == "self-dependency" and v.task_id == 2
               for v in validate_plan(plan))


def test_bad_artifact_path_reported():
    task = TaskSpec(1, "a", "obj", ("c",), expected_artifacts=("../escape.txt",))
    report = validate_plan(Plan(goal="g", tasks=(task,)))
    assert any(v.rule == "bad-artifact-path" for v in report)


@given(st.permutations(list(range(12))))
def test_validity_is_order_independent(order):
    plan = linear_plan(12)
    shuffled = Plan(goal=plan.goal, tasks=tuple(plan.tasks[i] for i in order), version=1)
    assert validate_plan(shuffled) == []


@given(st.permutations(list(range(3))))
def test_violations_survive_shuffling(order):
    plan = make_plan({1: {3}, 2: {1}, 3: {2}})
    shuffled = Plan(goal=plan.goal, tasks=tuple(plan.tasks[i] for i in order), version=1)
    assert {v.rule for v in validate_plan(shuffled)} == {"cycle"}


# ---------------------------------------------------------------------------
# ready_set


def _states(plan: Plan, **overrides: TaskState) -> dict[int, TaskState]:
    states = {t.task_id: TaskState.pending() for t in plan.tasks}
    for key, value in overrides.items():
        states[int(key.lstrip("t"))] = value
    return states


def test_linear_chain_only_root_ready():
    plan = linear_plan(3)
    assert ready_set(plan, _states(plan)) == {1}


def test_35_independent_all_ready():
    plan = make_plan({}, n=35)
    assert ready_set(plan, _states(plan)) == set(range(1, 36))


DIAMOND = {1: set(), 2: {1}, 3: {1}, 4: {2, 3}}

_STATE_CHOICES = (
    TaskState.pending(),
    TaskState.running(1),
    TaskState.accepted(),
    TaskState.failed(),
)


def _ready_oracle(plan: Plan, states: dict[int, TaskState]) -> set[int]:
    # Definition restated independently of the implementation.
    out = set()
    for task in plan.tasks:
        if states[task.task_id].kind is not TaskStateKind.PENDING:
            continue
        if all(states[d].kind is TaskStateKind.ACCEPTED for d in task.dependencies):
            out.add(task.task_id)
    return out


def test_diamond_example_and_all_assignments():
    plan = make_plan(DIAMOND)
    # The stated example: 1 Accepted, 2 Running, 3 Pending -> {3}.
    states = _states(plan, t1=TaskState.accepted(), t2=TaskState.running(1))
    assert ready_set(plan, states) == {3}
    # Brute force over every 4-node state assignment.
    for combo in itertools.product(_STATE_CHOICES, repeat=4):
        states = {i + 1: combo[i] for i in range(4)}
        assert ready_set(plan, states) == _ready_oracle(plan, states)


def test_ready_set_requires_complete_states():
    plan = linear_plan(2)
    with pytest.raises(ModelError):
        ready_set(plan, {1: TaskState.pending()})


@given(st.dictionaries(st.integers(1, 8), st.sampled_from(_STATE_CHOICES),
                       min_size=8, max_size=8))
def test_ready_set_monotone_under_accepts(assignment):
    """Accepting one more task never removes another task from the ready set."""
    plan = make_plan({i: {j for j in range(1, i) if (i + j) % 3 == 0} for i in range(1, 9)})
    states = {i: assignment.get(i, TaskState.pending()) for i in range(1, 9)}
    before = ready_set(plan, states)
    for promote in range(1, 9):
        after_states = dict(states)
        after_states[promote] = TaskState.accepted()
        after = ready_set(plan, after_states)
        assert after >= (before - {promote})


# ---------------------------------------------------------------------------
# invalidation_closure


def _closure_oracle(plan: Plan, target: int, states) -> set[int]:
    # Brute-force reachability over the dependent relation.
    reachable = {target}
    changed = True
    while changed:
        changed = False
        for task in plan.tasks:
            if task.task_id in reachable:
                continue
            if task.dependencies & reachable:
                reachable.add(task.task_id)
                changed = True
    return {target} | {t for t in reachable - {target}
                       if states[t].kind is not TaskStateKind.PENDING}


def test_chain_redo_from_8():
    plan = linear_plan(11)
    states = {i: TaskState.accepted() for i in range(1, 11)}
    states[11] = TaskState.awaiting_assessment(1)
    assert invalidation_closure(plan, 8, states) == {8, 9, 10, 11}


def test_leaf_closure_is_singleton():
    plan = linear_plan(4)
    states = {i: TaskState.accepted() for i in range(1, 5)}
    assert invalidation_closure(plan, 4, states) == {4}


def test_diamond_closure_matches_oracle_everywhere():
    plan = make_plan(DIAMOND)
    states = {i: TaskState.accepted() for i in range(1, 5)}
    assert invalidation_closure(plan, 2, states) == {2, 4}
    for target in range(1, 5):
        for combo in itertools.product(_STATE_CHOICES, repeat=4):
            states = {i + 1: combo[i] for i in range(4)}
            assert invalidation_closure(plan, target, states) == \
                _closure_oracle(plan, target, states)


def test_unknown_target_is_an_error():
    plan = linear_plan(3)
    states = {i: TaskState.pending() for i in range(1, 4)}
    with pytest.raises(ModelError):
        invalidation_closure(plan, 99, states)


# ---------------------------------------------------------------------------
# fold_state


def _event(seq: int, payload) -> Event:
    return Event(sequence_no=seq, timestamp=f"2026-01-01T00:00:{seq:02d}Z", payload=payload)


def test_empty_fold_is_initial_state():
    state = fold_state([])
    assert state.plan is None
    assert state.task_states == {}
    assert not state.completed
    assert state.last_sequence == 0


def test_propose_approve_makes_all_pending():
    plan = linear_plan(3)
    state = fold_state([
        _event(1, PlanProposed(plan)),
        _event(2, PlanApproved(version=1, actor="tester")),
    ])
    assert state.approved_version == 1
    assert state.plan == plan
    assert all(s == TaskState.pending() for s in state.task_states.values())


def test_fold_is_incremental():
    plan = linear_plan(2)
    summary = TaskSummary(task_id=1, outcome="done")
    events = [
        _event(1, PlanProposed(plan)),
        _event(2, PlanApproved(version=1)),
        _event(3, TaskDispatched(task_id=1, attempt=1)),
        _event(4, StepExecuted(task_id=1, attempt=1, step_no=1, digest="d")),
        _event(5, VerdictIssued(task_id=1, attempt=1, verdict=Accept(summary))),
    ]
    whole = fold_state(events)
    stepwise = fold_state(events[:-1])
    stepwise = fold_step(stepwise, events[-1])
    assert whole.snapshot_dict() == stepwise.snapshot_dict()
    assert whole.task_states[1] == TaskState.accepted()
    assert whole.task_states[2] == TaskState.pending()


def test_fold_rejects_gaps_and_duplicates():
    plan = linear_plan(1)
    good = [_event(1, PlanProposed(plan)), _event(2, PlanApproved(version=1))]
    with pytest.raises(JournalCorruption):
        fold_state([good[0], _event(3, PlanApproved(version=1))])
    with pytest.raises(JournalCorruption):
        fold_state([good[0], _event(1, PlanApproved(version=1))])


def test_revise_requeues_and_counts():
    plan = linear_plan(1)
    state = fold_state([
        _event(1, PlanProposed(plan)),
        _event(2, PlanApproved(version=1)),
        _event(3, TaskDispatched(task_id=1, attempt=1)),
        _event(4, VerdictIssued(task_id=1, attempt=1,
                                verdict=Revise(feedback="fix it"))),
    ])
    assert state.task_states[1] == TaskState.pending()
    assert state.revise_counts[1] == 1
    assert state.last_feedback[1] == "fix it"


def test_invalidation_then_redispatch():
    plan = linear_plan(2)
    events = [
        _event(1, PlanProposed(plan)),
        _event(2, PlanApproved(version=1)),
        _event(3, TaskDispatched(task_id=1, attempt=1)),
        _event(4, VerdictIssued(task_id=1, attempt=1,
                                verdict=Accept(TaskSummary(task_id=1, outcome="ok")))),
        _event(5, TasksInvalidated(task_ids=(1,), cause=1)),
    ]
    state = fold_state(events)
    assert state.task_states[1] == TaskState.invalidated(1)
    state = fold_step(state, _event(6, TaskDispatched(task_id=1, attempt=2)))
    assert state.task_states[1] == TaskState.running(2)
    assert state.attempts[1] == 2


def test_halt_and_resume_state_flow():
    plan = linear_plan(3)
    events = [
        _event(1, PlanProposed(plan)),
        _event(2, PlanApproved(version=1)),
        _event(3, TaskDispatched(task_id=1, attempt=1)),
        _event(4, VerdictIssued(task_id=1, attempt=1,
                                verdict=Accept(TaskSummary(task_id=1, outcome="ok")))),
        _event(5, ProjectHalted(reason="stuck", frontier=(2,), issued_by="assessor",
                                failed_task=2)),
    ]
    state = fold_state(events)
    assert state.halt is not None and state.halt.reason == "stuck"
    assert state.task_states[1] == TaskState.accepted()
    assert state.task_states[2] == TaskState.failed()
    assert state.task_states[3] == TaskState.halted_with_project()

    plan2 = Plan(goal=plan.goal, tasks=plan.tasks, version=2)
    state = fold_step(state, _event(6, PlanProposed(plan2)))
    state = fold_step(state, _event(7, PlanApproved(version=2)))
    assert state.task_states[1] == TaskState.accepted()
    assert state.task_states[2] == TaskState.pending()
    state = fold_step(state, _event(8, ProjectResumed(instruction="go")))
    assert state.halt is None


def test_completed_flag():
    plan = linear_plan(1)
    state = fold_state([
        _event(1, PlanProposed(plan)),
        _event(2, PlanApproved(version=1)),
        _event(3, TaskDispatched(task_id=1, attempt=1)),
        _event(4, VerdictIssued(task_id=1, attempt=1,
                                verdict=Accept(TaskSummary(task_id=1, outcome="ok")))),
        _event(5, ProjectCompleted()),
    ])
    assert state.completed


# Property: folding any legal journal twice yields identical snapshots.

_verdicts = st.one_of(
    st.builds(lambda: Accept(TaskSummary(task_id=1, outcome="ok"))),
    st.builds(lambda fb: Revise(feedback=fb), st.text(min_size=1, max_size=10)),
    st.builds(lambda: Halt(reason="stop")),
)


@st.composite
def legal_event_sequences(draw):
    n = draw(st.integers(min_value=1, max_value=5))
    plan = linear_plan(n)
    payloads = [PlanProposed(plan), PlanApproved(version=1)]
    halted = False
    for task_id in range(1, n + 1):
        attempts = draw(st.integers(min_value=1, max_value=3))
        for attempt in range(1, attempts + 1):
            payloads.append(TaskDispatched(task_id=task_id, attempt=attempt))
            for step in range(1, draw(st.integers(min_value=1, max_value=3)) + 1):
                payloads.append(StepExecuted(task_id=task_id, attempt=attempt,
                                             step_no=step, digest="x"))
            if attempt < attempts:
                payloads.append(VerdictIssued(task_id=task_id, attempt=attempt,
                                              verdict=Revise(feedback="again")))
            else:
                verdict = draw(_verdicts)
                payloads.append(VerdictIssued(task_id=task_id, attempt=attempt,
                                              verdict=verdict))
                if isinstance(verdict, Halt):
                    payloads.append(ProjectHalted(reason="stop", frontier=(task_id,),
                                                  issued_by="assessor",
                                                  failed_task=task_id))
                    halted = True
        if halted:
            break
    return [_event(i + 1, p) for i, p in enumerate(payloads)]


@given(legal_event_sequences())
@settings(max_examples=60)
def test_fold_determinism(events):
    first = fold_state(events).snapshot_dict()
    second = fold_state(events).snapshot_dict()
    assert first == second
    # fold(prefix) then step-by-step suffix equals whole fold.
    cut = len(events) // 2
    partial = fold_state(events[:cut])
    for event in events[cut:]:
        partial = fold_step(partial, event)
    assert partial.snapshot_dict() == first


# ---------------------------------------------------------------------------
# serialization round trips


@given(legal_event_sequences())
@settings(max_examples=30)
def test_event_payload_round_trip(events):
    for event in events:
        data = payload_to_dict(event.payload)
        assert payload_from_dict(data) == event.payload
        assert Event.from_dict(event.to_dict()) == event


def test_verdict_round_trip():
    summary = TaskSummary(task_id=2, outcome="done",
                          artifact_index=(("shared/x.bin", "model"),),
                          metrics=(("loss", 0.25, "nats"),))
    cases: list[Verdict] = [
        Accept(summary),
        Accept(None),
        Revise(feedback="fix", severity="major"),
        RedoFrom(target=3, reason="bad upstream"),
        Halt(reason="cannot proceed"),
    ]
    for verdict in cases:
        assert verdict_from_dict(verdict_to_dict(verdict)) == verdict


def test_verdict_field_invariants():
    with pytest.raises(ModelError):
        Revise(feedback="  ")
    with pytest.raises(ModelError):
        Halt(reason="")
    with pytest.raises(ModelError):
        RedoFrom(target=1, reason=" ")
    with pytest.raises(ModelError):
        Revise(feedback="x", severity="catastrophic")


def test_journal_digest_ignores_timestamps():
    plan = linear_plan(1)
    a = [_event(1, PlanProposed(plan)), _event(2, PlanApproved(version=1))]
    b = [Event(1, "2030-12-31T23:59:59Z", PlanProposed(plan)),
         Event(2, "2031-01-01T00:00:00Z", PlanApproved(version=1))]
    assert journal_digest(a) == journal_digest(b)
    assert event_content_digest(a[0]) == event_content_digest(b[0])
    # but not the payloads
    c = [_event(1, PlanProposed(plan)), _event(2, PlanApproved(version=1, actor="x"))]
    assert journal_digest(a) != journal_digest(c)


# ---------------------------------------------------------------------------
# revision validation


def test_revision_must_keep_accepted_tasks():
    plan = linear_plan(3)
    states = {1: TaskState.accepted(), 2: TaskState.failed(),
              3: TaskState.halted_with_project()}
    tasks = list(plan.tasks)
    tasks[0] = TaskSpec(task_id=1, title="Task 1", objective="changed!",
                        success_criteria=("stage 1 done",))
    bad = Plan(goal=plan.goal, tasks=tuple(tasks), version=2)
    assert any(v.rule == "accepted-task-changed" for v in validate_revision(plan, bad, states))

    good = Plan(goal=plan.goal, tasks=plan.tasks, version=2)
    assert validate_revision(plan, good, states) == []

    wrong_version = Plan(goal=plan.goal, tasks=plan.tasks, version=3)
    assert any(v.rule == "bad-version" for v in validate_revision(plan, wrong_version, states))
