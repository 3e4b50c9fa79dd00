/** Client-side view model: a pure fold of snapshot + journal events.
 * Everything rendered derives from API data; reloading at any moment and
 * replaying from the snapshot reproduces the identical board. */

import type {
  ApiSnapshot,
  HaltRecord,
  JournalEvent,
  Plan,
  TaskState,
} from "./types.js";

export interface FeedItem {
  sequence_no: number;
  label: string;
}

export interface ViewModel {
  projectId: string;
  planVersion: number;
  proposedVersion: number;
  plan: Plan | null;
  taskStates: Map<number, TaskState>;
  attempts: Map<number, number>;
  titles: Map<number, string>;
  halt: HaltRecord | null;
  completed: boolean;
  lastEvent: number;
  feed: FeedItem[];
}

export const FEED_LIMIT = 200;

export function fromSnapshot(snapshot: ApiSnapshot, plan: Plan | null): ViewModel {
  const vm: ViewModel = {
    projectId: snapshot.project_id,
    planVersion: snapshot.plan_version,
    proposedVersion: snapshot.proposed_version,
    plan,
    taskStates: new Map(),
    attempts: new Map(),
    titles: new Map(),
    halt: snapshot.halt,
    completed: snapshot.completed,
    lastEvent: snapshot.last_event,
    feed: [],
  };
  for (const task of snapshot.tasks) {
    vm.taskStates.set(task.task_id, task.state);
    vm.attempts.set(task.task_id, task.attempt);
    vm.titles.set(task.task_id, task.title);
  }
  return vm;
}

function describe(event: JournalEvent): string {
  const p = event.payload;
  switch (p.type) {
    case "plan_proposed":
      return `plan v${p.plan?.version} proposed (${p.plan?.tasks.length} tasks)`;
    case "plan_approved":
      return `plan v${p.version} approved by ${p.actor}`;
    case "task_dispatched":
      return `task ${p.task_id} dispatched (attempt ${p.attempt})`;
    case "step_executed":
      return `task ${p.task_id} step ${p.step_no}`;
    case "verdict_issued": {
      const verdict = p.verdict;
      if (verdict?.kind === "redo_from") {
        return `task ${p.task_id}: redo from ${verdict.target}`;
      }
      return `task ${p.task_id}: ${verdict?.kind ?? "verdict"}`;
    }
    case "tasks_invalidated":
      return `invalidated {${(p.task_ids ?? []).join(",")}} (cause ${p.cause})`;
    case "project_halted":
      return `project halted: ${p.reason}`;
    case "project_resumed":
      return `project resumed${p.instruction ? `: ${p.instruction}` : ""}`;
    case "project_completed":
      return "project completed";
    case "context_compacted":
      return `task ${p.task_id} context compacted`;
    default:
      return p.type;
  }
}

/** Mirror of the engine's journal fold, restricted to what the board
 * shows.  Returns a new view model; the input is not mutated. */
export function applyEvent(vm: ViewModel, event: JournalEvent): ViewModel {
  if (event.sequence_no <= vm.lastEvent) return vm;
  const next: ViewModel = {
    ...vm,
    taskStates: new Map(vm.taskStates),
    attempts: new Map(vm.attempts),
    titles: new Map(vm.titles),
    feed: [...vm.feed, { sequence_no: event.sequence_no, label: describe(event) }]
      .slice(-FEED_LIMIT),
    lastEvent: event.sequence_no,
  };
  const p = event.payload;
  switch (p.type) {
    case "plan_proposed": {
      if (p.plan) {
        next.proposedVersion = p.plan.version;
        next.plan = p.plan;
      }
      break;
    }
    case "plan_approved": {
      next.planVersion = p.version ?? next.planVersion;
      if (next.plan) {
        const keep = next.taskStates;
        next.taskStates = new Map();
        next.titles = new Map();
        for (const task of next.plan.tasks) {
          const prior = keep.get(task.task_id);
          next.taskStates.set(task.task_id,
            prior?.kind === "accepted" ? prior : { kind: "pending" });
          next.titles.set(task.task_id, task.title);
        }
      }
      break;
    }
    case "task_dispatched": {
      next.taskStates.set(p.task_id!, { kind: "running", attempt: p.attempt });
      next.attempts.set(p.task_id!, p.attempt!);
      break;
    }
    case "verdict_issued": {
      const verdict = p.verdict;
      if (verdict?.kind === "accept") {
        next.taskStates.set(p.task_id!, { kind: "accepted" });
      } else if (verdict?.kind === "revise") {
        next.taskStates.set(p.task_id!, { kind: "pending" });
      }
      break;
    }
    case "tasks_invalidated": {
      for (const tid of p.task_ids ?? []) {
        next.taskStates.set(tid, { kind: "invalidated", cause: p.cause });
      }
      break;
    }
    case "project_halted": {
      next.halt = {
        reason: p.reason ?? "",
        frontier: p.frontier ?? [],
        issued_by: p.issued_by ?? "",
        timestamp: event.timestamp,
      };
      for (const [tid, state] of next.taskStates) {
        if (state.kind === "accepted") continue;
        next.taskStates.set(tid,
          p.failed_task === tid ? { kind: "failed" } : { kind: "halted_with_project" });
      }
      break;
    }
    case "project_resumed": {
      next.halt = null;
      for (const [tid, state] of next.taskStates) {
        if (state.kind === "failed" || state.kind === "halted_with_project") {
          next.taskStates.set(tid, { kind: "pending" });
        }
      }
      break;
    }
    case "project_completed": {
      next.completed = true;
      break;
    }
    default:
      break;
  }
  return withReadyMarks(next);
}

/** Pending tasks whose dependencies are all accepted display as ready. */
export function withReadyMarks(vm: ViewModel): ViewModel {
  if (!vm.plan) return vm;
  const states = vm.taskStates;
  for (const task of vm.plan.tasks) {
    const state = states.get(task.task_id);
    if (!state) continue;
    const depsAccepted = task.dependencies.every(
      (d) => states.get(d)?.kind === "accepted");
    if (state.kind === "pending" && depsAccepted && !vm.halt) {
      states.set(task.task_id, { kind: "ready" });
    } else if (state.kind === "ready" && (!depsAccepted || vm.halt)) {
      states.set(task.task_id, { kind: "pending" });
    }
  }
  return vm;
}

export function acceptedCount(vm: ViewModel): number {
  let count = 0;
  for (const state of vm.taskStates.values()) {
    if (state.kind === "accepted") count += 1;
  }
  return count;
}

/** Comparable projection used to check convergence against a fresh
 * snapshot (statelessness invariant). */
export function boardProjection(vm: ViewModel): Record<string, unknown> {
  const tasks = [...vm.taskStates.entries()]
    .sort(([a], [b]) => a - b)
    .map(([taskId, state]) => ({ task_id: taskId, kind: state.kind }));
  return {
    plan_version: vm.planVersion,
    completed: vm.completed,
    halted: vm.halt !== null,
    tasks,
  };
}

export function snapshotProjection(snapshot: ApiSnapshot): Record<string, unknown> {
  const tasks = [...snapshot.tasks]
    .sort((a, b) => a.task_id - b.task_id)
    .map((t) => ({ task_id: t.task_id, kind: t.state.kind }));
  return {
    plan_version: snapshot.plan_version,
    completed: snapshot.completed,
    halted: snapshot.halt !== null,
    tasks,
  };
}
