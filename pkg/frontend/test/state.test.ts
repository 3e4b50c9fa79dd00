import { describe, expect, it } from "vitest";

import {
  acceptedCount,
  applyEvent,
  boardProjection,
  fromSnapshot,
  withReadyMarks,
} from "../src/state.js";
import type { ApiSnapshot, JournalEvent, Plan } from "../src/types.js";

function chainPlan(n: number, version = 1): Plan {
  return {
    goal: "test",
    version,
    tasks: Array.from({ length: n }, (_, i) => ({
      task_id: i + 1,
      title: `Stage ${i + 1}`,
      objective: "do it",
      success_criteria: ["done"],
      dependencies: i === 0 ? [] : [i],
      expected_artifacts: [],
      hints: null,
    })),
  };
}

function emptySnapshot(): ApiSnapshot {
  return {
    project_id: "p",
    plan_version: 0,
    proposed_version: 0,
    tasks: [],
    halt: null,
    completed: false,
    last_event: 0,
  };
}

let seq = 0;
function ev(payload: JournalEvent["payload"]): JournalEvent {
  seq += 1;
  return { sequence_no: seq, timestamp: "2026-01-01T00:00:00Z", payload };
}

describe("view model fold", () => {
  it("mirrors the engine fold through a full happy path", () => {
    seq = 0;
    const plan = chainPlan(3);
    let vm = fromSnapshot(emptySnapshot(), null);
    vm = applyEvent(vm, ev({ type: "plan_proposed", plan }));
    expect(vm.proposedVersion).toBe(1);
    expect(vm.plan?.tasks.length).toBe(3);

    vm = applyEvent(vm, ev({ type: "plan_approved", version: 1, actor: "t" }));
    expect(vm.planVersion).toBe(1);
    expect(vm.taskStates.get(1)?.kind).toBe("ready"); // root with no deps
    expect(vm.taskStates.get(2)?.kind).toBe("pending");

    vm = applyEvent(vm, ev({ type: "task_dispatched", task_id: 1, attempt: 1 }));
    expect(vm.taskStates.get(1)).toEqual({ kind: "running", attempt: 1 });

    vm = applyEvent(vm, ev({ type: "step_executed", task_id: 1, attempt: 1, step_no: 1, digest: "d" }));
    vm = applyEvent(vm, ev({
      type: "verdict_issued", task_id: 1, attempt: 1,
      verdict: { kind: "accept" },
    }));
    expect(vm.taskStates.get(1)?.kind).toBe("accepted");
    expect(vm.taskStates.get(2)?.kind).toBe("ready"); // unlocked
    expect(acceptedCount(vm)).toBe(1);
    expect(vm.feed.length).toBe(5);
  });

  it("handles revise, invalidation, halt and resume", () => {
    seq = 0;
    const plan = chainPlan(3);
    let vm = fromSnapshot(emptySnapshot(), null);
    vm = applyEvent(vm, ev({ type: "plan_proposed", plan }));
    vm = applyEvent(vm, ev({ type: "plan_approved", version: 1 }));
    vm = applyEvent(vm, ev({ type: "task_dispatched", task_id: 1, attempt: 1 }));
    vm = applyEvent(vm, ev({
      type: "verdict_issued", task_id: 1, attempt: 1,
      verdict: { kind: "revise", feedback: "f" },
    }));
    expect(vm.taskStates.get(1)?.kind).toBe("ready"); // pending + deps ok

    vm = applyEvent(vm, ev({ type: "task_dispatched", task_id: 1, attempt: 2 }));
    vm = applyEvent(vm, ev({
      type: "verdict_issued", task_id: 1, attempt: 2, verdict: { kind: "accept" },
    }));
    vm = applyEvent(vm, ev({ type: "tasks_invalidated", task_ids: [1], cause: 1 }));
    expect(vm.taskStates.get(1)).toEqual({ kind: "invalidated", cause: 1 });

    vm = applyEvent(vm, ev({
      type: "project_halted", reason: "stuck", frontier: [2],
      issued_by: "assessor", failed_task: 2,
    }));
    expect(vm.halt?.reason).toBe("stuck");
    expect(vm.taskStates.get(2)?.kind).toBe("failed");
    expect(vm.taskStates.get(3)?.kind).toBe("halted_with_project");

    vm = applyEvent(vm, ev({ type: "plan_proposed", plan: chainPlan(3, 2) }));
    vm = applyEvent(vm, ev({ type: "plan_approved", version: 2 }));
    vm = applyEvent(vm, ev({ type: "project_resumed", instruction: "go" }));
    expect(vm.halt).toBeNull();
    expect(vm.planVersion).toBe(2);
    expect(vm.taskStates.get(2)?.kind).toBe("pending"); // dep 1 not accepted

    vm = applyEvent(vm, ev({ type: "project_completed" }));
    expect(vm.completed).toBe(true);
  });

  it("preserves accepted tasks across a plan revision", () => {
    seq = 0;
    const plan = chainPlan(2);
    let vm = fromSnapshot(emptySnapshot(), null);
    vm = applyEvent(vm, ev({ type: "plan_proposed", plan }));
    vm = applyEvent(vm, ev({ type: "plan_approved", version: 1 }));
    vm = applyEvent(vm, ev({ type: "task_dispatched", task_id: 1, attempt: 1 }));
    vm = applyEvent(vm, ev({
      type: "verdict_issued", task_id: 1, attempt: 1, verdict: { kind: "accept" },
    }));
    vm = applyEvent(vm, ev({
      type: "project_halted", reason: "x", frontier: [2], issued_by: "operator",
      failed_task: null,
    }));
    vm = applyEvent(vm, ev({ type: "plan_proposed", plan: chainPlan(2, 2) }));
    vm = applyEvent(vm, ev({ type: "plan_approved", version: 2 }));
    expect(vm.taskStates.get(1)?.kind).toBe("accepted");
  });

  it("ignores duplicate and stale events (statelessness under replay)", () => {
    seq = 0;
    const plan = chainPlan(1);
    let vm = fromSnapshot(emptySnapshot(), null);
    const events = [
      ev({ type: "plan_proposed", plan }),
      ev({ type: "plan_approved", version: 1 }),
      ev({ type: "task_dispatched", task_id: 1, attempt: 1 }),
    ];
    for (const event of events) vm = applyEvent(vm, event);
    const before = JSON.stringify(boardProjection(vm));
    for (const event of events) vm = applyEvent(vm, event); // replay
    expect(JSON.stringify(boardProjection(vm))).toBe(before);
    expect(vm.lastEvent).toBe(3);
  });

  it("folding from a mid-run snapshot equals folding from zero", () => {
    seq = 0;
    const plan = chainPlan(2);
    const all = [
      ev({ type: "plan_proposed", plan }),
      ev({ type: "plan_approved", version: 1 }),
      ev({ type: "task_dispatched", task_id: 1, attempt: 1 }),
      ev({ type: "verdict_issued", task_id: 1, attempt: 1, verdict: { kind: "accept" } }),
      ev({ type: "task_dispatched", task_id: 2, attempt: 1 }),
      ev({ type: "verdict_issued", task_id: 2, attempt: 1, verdict: { kind: "accept" } }),
      ev({ type: "project_completed" }),
    ];
    let whole = fromSnapshot(emptySnapshot(), null);
    for (const event of all) whole = applyEvent(whole, event);

    // Mid-run snapshot as the server would serve it after event 4.
    const midSnapshot: ApiSnapshot = {
      project_id: "p",
      plan_version: 1,
      proposed_version: 1,
      tasks: [
        { task_id: 1, title: "Stage 1", state: { kind: "accepted" }, attempt: 1 },
        { task_id: 2, title: "Stage 2", state: { kind: "ready" }, attempt: 0 },
      ],
      halt: null,
      completed: false,
      last_event: 4,
    };
    let resumed = withReadyMarks(fromSnapshot(midSnapshot, plan));
    for (const event of all.slice(4)) resumed = applyEvent(resumed, event);

    expect(boardProjection(resumed)).toEqual(boardProjection(whole));
  });
});
