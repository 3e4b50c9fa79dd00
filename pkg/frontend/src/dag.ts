/** Layered layout for the plan's dependency graph.  Pure: tasks in, node
 * positions and edges out; rendering decides the pixel scale. */

import type { TaskSpec } from "./types.js";

export interface DagNode {
  taskId: number;
  layer: number;  // column: longest dependency path from a root
  row: number;    // position within the column
}

export interface DagEdge {
  from: number;
  to: number;
}

export interface DagLayout {
  nodes: DagNode[];
  edges: DagEdge[];
  layerCount: number;
  maxRows: number;
}

export function layoutDag(tasks: TaskSpec[]): DagLayout {
  const byId = new Map(tasks.map((t) => [t.task_id, t]));
  const layers = new Map<number, number>();

  const layerOf = (taskId: number, seen: Set<number>): number => {
    const cached = layers.get(taskId);
    if (cached !== undefined) return cached;
    if (seen.has(taskId)) return 0; // cycle guard; the server rejects these
    seen.add(taskId);
    const task = byId.get(taskId);
    const deps = task ? task.dependencies.filter((d) => byId.has(d)) : [];
    const layer = deps.length === 0
      ? 0
      : 1 + Math.max(...deps.map((d) => layerOf(d, seen)));
    layers.set(taskId, layer);
    return layer;
  };

  for (const task of tasks) layerOf(task.task_id, new Set());

  const byLayer = new Map<number, number[]>();
  for (const task of tasks) {
    const layer = layers.get(task.task_id)!;
    if (!byLayer.has(layer)) byLayer.set(layer, []);
    byLayer.get(layer)!.push(task.task_id);
  }

  const nodes: DagNode[] = [];
  let maxRows = 0;
  for (const [layer, ids] of byLayer) {
    ids.sort((a, b) => a - b);
    maxRows = Math.max(maxRows, ids.length);
    ids.forEach((taskId, row) => nodes.push({ taskId, layer, row }));
  }
  nodes.sort((a, b) => a.taskId - b.taskId);

  const edges: DagEdge[] = [];
  for (const task of tasks) {
    for (const dep of task.dependencies) {
      if (byId.has(dep)) edges.push({ from: dep, to: task.task_id });
    }
  }
  edges.sort((a, b) => a.from - b.from || a.to - b.to);

  return { nodes, edges, layerCount: byLayer.size, maxRows };
}
