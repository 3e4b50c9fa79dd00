/** DOM rendering for the three surfaces: plan review (DAG + approve),
 * the live board (task grid + ticker), and the halt/resume panel. */

import { layoutDag } from "./dag.js";
import type { ViewModel } from "./state.js";
import type { Plan, TaskSpec, TaskState } from "./types.js";

export interface Actions {
  approve(): void;
  reject(comment: string): void;
  halt(reason: string): void;
  resume(instruction: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const NODE_W = 120;
const NODE_H = 40;
const GAP_X = 60;
const GAP_Y = 18;

function stateColor(state: TaskState | undefined): string {
  switch (state?.kind) {
    case "accepted": return "var(--ok)";
    case "running": return "var(--busy)";
    case "awaiting_assessment": return "var(--judge)";
    case "ready": return "var(--ready)";
    case "invalidated": return "var(--redo)";
    case "failed": return "var(--bad)";
    case "halted_with_project": return "var(--held)";
    default: return "var(--idle)";
  }
}

export function renderPlanDag(container: HTMLElement, plan: Plan, vm: ViewModel,
                              onSelect: (task: TaskSpec) => void): void {
  container.replaceChildren();
  const layout = layoutDag(plan.tasks);
  const width = layout.layerCount * (NODE_W + GAP_X);
  const height = layout.maxRows * (NODE_H + GAP_Y) + GAP_Y;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "dag");

  const position = new Map<number, { x: number; y: number }>();
  for (const node of layout.nodes) {
    position.set(node.taskId, {
      x: node.layer * (NODE_W + GAP_X) + GAP_X / 2,
      y: node.row * (NODE_H + GAP_Y) + GAP_Y,
    });
  }
  for (const edge of layout.edges) {
    const from = position.get(edge.from)!;
    const to = position.get(edge.to)!;
    const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
    line.setAttribute("x1", String(from.x + NODE_W));
    line.setAttribute("y1", String(from.y + NODE_H / 2));
    line.setAttribute("x2", String(to.x));
    line.setAttribute("y2", String(to.y + NODE_H / 2));
    line.setAttribute("class", "dag-edge");
    svg.appendChild(line);
  }
  for (const node of layout.nodes) {
    const task = plan.tasks.find((t) => t.task_id === node.taskId)!;
    const { x, y } = position.get(node.taskId)!;
    const group = document.createElementNS("http://www.w3.org/2000/svg", "g");
    group.setAttribute("transform", `translate(${x},${y})`);
    group.setAttribute("class", "dag-node");
    const rect = document.createElementNS("http://www.w3.org/2000/svg", "rect");
    rect.setAttribute("width", String(NODE_W));
    rect.setAttribute("height", String(NODE_H));
    rect.setAttribute("rx", "6");
    rect.setAttribute("fill", stateColor(vm.taskStates.get(node.taskId)));
    const label = document.createElementNS("http://www.w3.org/2000/svg", "text");
    label.setAttribute("x", String(NODE_W / 2));
    label.setAttribute("y", String(NODE_H / 2 + 4));
    label.setAttribute("text-anchor", "middle");
    label.textContent = `${task.task_id}: ${task.title}`.slice(0, 18);
    group.appendChild(rect);
    group.appendChild(label);
    group.addEventListener("click", () => onSelect(task));
    svg.appendChild(group);
  }
  container.appendChild(svg);
}

export function renderTaskPanel(container: HTMLElement, task: TaskSpec | null): void {
  container.replaceChildren();
  if (!task) {
    container.appendChild(el("p", "muted", "Select a task to see its contract."));
    return;
  }
  container.appendChild(el("h3", undefined, `Task ${task.task_id}: ${task.title}`));
  container.appendChild(el("p", undefined, task.objective));
  const list = el("ul");
  for (const criterion of task.success_criteria) {
    list.appendChild(el("li", undefined, criterion));
  }
  container.appendChild(el("h4", undefined, "Success criteria"));
  container.appendChild(list);
  if (task.dependencies.length) {
    container.appendChild(el("p", "muted", `Depends on: ${task.dependencies.join(", ")}`));
  }
  if (task.expected_artifacts.length) {
    container.appendChild(el("p", "muted",
      `Expected artifacts: ${task.expected_artifacts.join(", ")}`));
  }
}

export function renderReviewControls(container: HTMLElement, vm: ViewModel,
                                     actions: Actions): void {
  container.replaceChildren();
  if (vm.proposedVersion <= vm.planVersion) return;
  const bar = el("div", "review-bar");
  bar.appendChild(el("span", undefined,
    `Plan v${vm.proposedVersion} awaits review`));
  const approve = el("button", "approve", "Approve");
  approve.addEventListener("click", () => actions.approve());
  const comment = el("input") as HTMLInputElement;
  comment.placeholder = "rejection comment";
  const reject = el("button", "reject", "Reject");
  reject.addEventListener("click", () => actions.reject(comment.value));
  bar.append(approve, comment, reject);
  container.appendChild(bar);
}

export function renderBoard(container: HTMLElement, vm: ViewModel): void {
  container.replaceChildren();
  const ids = [...vm.taskStates.keys()].sort((a, b) => a - b);
  for (const taskId of ids) {
    const state = vm.taskStates.get(taskId)!;
    const cell = el("div", "cell");
    cell.style.background = stateColor(state);
    cell.appendChild(el("div", "cell-id", String(taskId)));
    cell.appendChild(el("div", "cell-title", vm.titles.get(taskId) ?? ""));
    let status = state.kind.replace(/_/g, " ");
    if (state.attempt) status += ` #${state.attempt}`;
    cell.appendChild(el("div", "cell-state", status));
    cell.title = `${vm.titles.get(taskId) ?? ""} — ${status}`;
    container.appendChild(cell);
  }
}

export function renderTicker(container: HTMLElement, vm: ViewModel): void {
  container.replaceChildren();
  for (const item of [...vm.feed].reverse().slice(0, 40)) {
    const row = el("div", "tick");
    row.appendChild(el("span", "tick-seq", `#${item.sequence_no}`));
    row.appendChild(el("span", undefined, item.label));
    container.appendChild(row);
  }
}

export function renderHaltPanel(container: HTMLElement, vm: ViewModel,
                                actions: Actions): void {
  container.replaceChildren();
  if (vm.completed) {
    container.appendChild(el("div", "banner done", "Project completed"));
    return;
  }
  if (vm.halt) {
    const banner = el("div", "banner halted");
    banner.appendChild(el("strong", undefined, `Halted (${vm.halt.issued_by}): `));
    banner.appendChild(el("span", undefined, vm.halt.reason));
    container.appendChild(banner);
    if (vm.proposedVersion <= vm.planVersion) {
      const form = el("div", "resume-form");
      const input = el("input") as HTMLInputElement;
      input.placeholder = "resume instruction";
      const button = el("button", "resume", "Propose resume");
      button.addEventListener("click", () => actions.resume(input.value));
      form.append(input, button);
      container.appendChild(form);
    } else {
      container.appendChild(el("p", "muted",
        `Resume revision v${vm.proposedVersion} proposed — approve it above.`));
    }
    return;
  }
  if (vm.planVersion > 0) {
    const form = el("div", "halt-form");
    const input = el("input") as HTMLInputElement;
    input.placeholder = "halt reason";
    const button = el("button", "halt", "Halt project");
    button.addEventListener("click", () => {
      if (input.value.trim()) actions.halt(input.value);
    });
    form.append(input, button);
    container.appendChild(form);
  }
}

export function renderStatusLine(container: HTMLElement, vm: ViewModel,
                                 connected: boolean): void {
  container.replaceChildren();
  const bits = [
    `project ${vm.projectId}`,
    `plan v${vm.planVersion || "—"}`,
    `event #${vm.lastEvent}`,
    connected ? "stream: live" : "stream: reconnecting…",
  ];
  container.appendChild(el("span", undefined, bits.join("  ·  ")));
}
