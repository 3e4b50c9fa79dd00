/** Wire types mirroring the engine's schema reference. */

export interface TaskSpec {
  task_id: number;
  title: string;
  objective: string;
  success_criteria: string[];
  dependencies: number[];
  expected_artifacts: string[];
  hints: string | null;
}

export interface Plan {
  goal: string;
  version: number;
  tasks: TaskSpec[];
}

export type TaskStateKind =
  | "pending"
  | "ready"
  | "running"
  | "awaiting_assessment"
  | "accepted"
  | "invalidated"
  | "failed"
  | "halted_with_project"
  | "unplanned";

export interface TaskState {
  kind: TaskStateKind;
  attempt?: number;
  cause?: number;
}

export interface HaltRecord {
  reason: string;
  frontier: number[];
  issued_by: string;
  timestamp: string;
}

export interface SnapshotTask {
  task_id: number;
  title: string;
  state: TaskState;
  attempt: number;
}

export interface ApiSnapshot {
  project_id: string;
  plan_version: number;
  proposed_version: number;
  tasks: SnapshotTask[];
  halt: HaltRecord | null;
  completed: boolean;
  last_event: number;
}

export interface Verdict {
  kind: "accept" | "revise" | "redo_from" | "halt";
  feedback?: string;
  severity?: string;
  target?: number;
  reason?: string;
}

export interface EventPayload {
  type: string;
  plan?: Plan;
  version?: number;
  actor?: string;
  task_id?: number;
  attempt?: number;
  step_no?: number;
  digest?: string;
  verdict?: Verdict;
  task_ids?: number[];
  cause?: number;
  reason?: string;
  frontier?: number[];
  issued_by?: string;
  failed_task?: number | null;
  instruction?: string;
  dropped_steps?: number;
}

export interface JournalEvent {
  sequence_no: number;
  timestamp: string;
  payload: EventPayload;
}

export interface ProjectListing {
  project_id: string;
  plan_version: number;
  completed: boolean;
  halted: boolean;
  last_event: number;
}
