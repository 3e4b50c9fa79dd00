/** Page wiring: pick the project, load snapshot + plan, follow the event
 * stream, and route the approve / halt / resume controls through
 * idempotent API commands. */

import { ApiClient, generateRequestId } from "./api.js";
import {
  applyEvent,
  boardProjection,
  fromSnapshot,
  snapshotProjection,
  withReadyMarks,
  type ViewModel,
} from "./state.js";
import {
  renderBoard,
  renderHaltPanel,
  renderPlanDag,
  renderReviewControls,
  renderStatusLine,
  renderTaskPanel,
  renderTicker,
  type Actions,
} from "./render.js";
import type { TaskSpec } from "./types.js";

const client = new ApiClient(window.location.origin);

const $ = (id: string): HTMLElement => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
};

let vm: ViewModel | null = null;
let selected: TaskSpec | null = null;
let connected = false;

function redraw(): void {
  if (!vm) return;
  renderStatusLine($("status"), vm, connected);
  if (vm.plan) renderPlanDag($("dag"), vm.plan, vm, (task) => {
    selected = task;
    renderTaskPanel($("task-panel"), selected);
  });
  renderTaskPanel($("task-panel"), selected);
  renderReviewControls($("review"), vm, actions);
  renderBoard($("board"), vm);
  renderTicker($("ticker"), vm);
  renderHaltPanel($("halt"), vm, actions);
}

async function refreshFromServer(projectId: string): Promise<void> {
  const snapshot = await client.snapshot(projectId);
  const version = snapshot.proposed_version || snapshot.plan_version;
  const plan = version ? await client.plan(projectId, version) : null;
  vm = withReadyMarks(fromSnapshot(snapshot, plan));
  redraw();
}

const actions: Actions = {
  approve() {
    if (!vm) return;
    client.approve(vm.projectId, "dashboard", generateRequestId("approve"))
      .catch((error) => showError(error));
  },
  reject(comment: string) {
    showError(new Error(
      `Rejection noted: ${comment || "(no comment)"} — start a new planning round from the CLI.`));
  },
  halt(reason: string) {
    if (!vm) return;
    client.halt(vm.projectId, reason, generateRequestId("halt"))
      .catch((error) => showError(error));
  },
  resume(instruction: string) {
    if (!vm) return;
    client.resume(vm.projectId, instruction, generateRequestId("resume"))
      .catch((error) => showError(error));
  },
};

function showError(error: unknown): void {
  const node = $("errors");
  node.textContent = String(error instanceof Error ? error.message : error);
  setTimeout(() => { node.textContent = ""; }, 6000);
}

async function start(): Promise<void> {
  const projects = await client.listProjects();
  if (!projects.length) {
    $("status").textContent = "no projects registered";
    return;
  }
  const projectId = new URLSearchParams(window.location.search).get("project")
    ?? projects[0].project_id;
  await refreshFromServer(projectId);

  client.streamEvents(projectId, vm!.lastEvent, async (event) => {
    connected = true;
    if (!vm) return;
    vm = applyEvent(vm, event);
    // A new proposal carries its plan in the event; nothing else to fetch.
    redraw();
    if (event.payload.type === "project_completed") {
      // Convergence check: the folded board must equal a fresh snapshot.
      const fresh = await client.snapshot(projectId);
      const a = JSON.stringify(boardProjection(vm));
      const b = JSON.stringify(snapshotProjection(fresh));
      if (a !== b) showError(new Error("board diverged from snapshot; reloading"));
    }
  }, () => {
    connected = false;
    renderStatusLine($("status"), vm!, connected);
  });
  connected = true;
  redraw();
}

start().catch((error) => {
  $("status").textContent = `failed to start: ${error}`;
});
