/** Scripted session against a live engine (the dashboard acceptance flow):
 * approve the proposed plan, watch tasks accept through the event stream,
 * trigger a halt, resume, and verify every action landed in the journal
 * exactly once. Spawns the Python demo server from the repository root. */

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, type ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import path from "node:path";

import { ApiClient, generateRequestId } from "../src/api.js";
import {
  acceptedCount,
  applyEvent,
  boardProjection,
  fromSnapshot,
  snapshotProjection,
  withReadyMarks,
  type ViewModel,
} from "../src/state.js";
import type { JournalEvent } from "../src/types.js";

const REPO_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");
const PORT = 18750 + Math.floor(Math.random() * 200);
const BASE = `http://127.0.0.1:${PORT}`;
const PROJECT = "demo-twelve";

let server: ChildProcess;

async function waitFor<T>(probe: () => Promise<T | null>, timeoutMs: number,
                          what: string): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const value = await probe();
      if (value !== null) return value;
    } catch (error) {
      lastError = error;
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`timed out waiting for ${what}: ${lastError ?? "no value"}`);
}

beforeAll(async () => {
  server = spawn("python3", [
    "scripts/serve_demo.py", "--port", String(PORT),
    "--tasks", "12", "--step-delay", "0.3",
  ], { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] });
  let output = "";
  server.stdout?.on("data", (chunk) => { output += String(chunk); });
  server.stderr?.on("data", (chunk) => { output += String(chunk); });
  await waitFor(async () => {
    const response = await fetch(`${BASE}/projects`);
    return response.ok ? true : null;
  }, 20000, `demo server on ${PORT} (output so far: ${output.slice(0, 400)})`);
}, 30000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("dashboard acceptance flow", () => {
  it("approve, watch, halt, resume, complete — one journal event per action",
     async () => {
    const client = new ApiClient(BASE);

    const projects = await client.listProjects();
    expect(projects.map((p) => p.project_id)).toContain(PROJECT);

    // Load the review surface exactly as the page does.
    let snapshot = await client.snapshot(PROJECT);
    expect(snapshot.proposed_version).toBe(1);
    expect(snapshot.plan_version).toBe(0);
    const plan = await client.plan(PROJECT, 1);
    expect(plan.tasks.length).toBe(12);
    let vm: ViewModel = withReadyMarks(fromSnapshot(snapshot, plan));

    // Follow the stream like the board does; collect raw events too.
    const raw: JournalEvent[] = [];
    let ended = false;
    const stream = client.streamEvents(PROJECT, vm.lastEvent, (event) => {
      raw.push(event);
      vm = applyEvent(vm, event);
    }, () => { ended = true; });

    // Action 1: approve the plan.
    const approveId = generateRequestId("approve");
    const approved = await client.approve(PROJECT, "browser", approveId);
    // Replaying the same request id is a no-op (idempotence).
    const replayed = await client.approve(PROJECT, "browser", approveId);
    expect(replayed).toEqual(approved);

    // Watch tasks transition to accepted via the stream.
    await waitFor(async () => (acceptedCount(vm) >= 3 ? true : null), 30000,
                  "three accepted tasks");
    expect(vm.planVersion).toBe(1);

    // Action 2: trigger a halt mid-run.
    await client.halt(PROJECT, "operator halt from the dashboard",
                      generateRequestId("halt"));
    await waitFor(async () => (vm.halt ? true : null), 20000, "halt record");
    expect(vm.halt?.reason).toBe("operator halt from the dashboard");
    const acceptedAtHalt = acceptedCount(vm);
    expect(acceptedAtHalt).toBeGreaterThanOrEqual(3);
    expect(acceptedAtHalt).toBeLessThan(12);

    // Action 3: resume (propose revision, then approve it).
    await client.resume(PROJECT, "continue from where it stopped",
                        generateRequestId("resume"));
    await waitFor(async () => (vm.proposedVersion === 2 ? true : null), 20000,
                  "resume revision proposed");
    await client.approve(PROJECT, "browser", generateRequestId("approve2"));
    await waitFor(async () => (vm.halt === null && vm.planVersion === 2 ? true : null),
                  20000, "project resumed");

    // All 12 tasks eventually transition to accepted, observed via stream.
    await waitFor(async () => (vm.completed && acceptedCount(vm) === 12 ? true : null),
                  60000, "completion with 12 accepted");
    await waitFor(async () => (ended ? true : null), 10000, "stream end marker");
    stream.stop();

    // Each action corresponds to exactly one journaled event.
    const count = (type: string) =>
      raw.filter((e) => e.payload.type === type).length;
    expect(count("plan_approved")).toBe(2);      // initial approve + resume approve
    expect(count("project_halted")).toBe(1);     // the halt action
    expect(count("project_resumed")).toBe(1);    // the resume action
    expect(count("plan_proposed")).toBe(1);      // the resume's revision (v1 predates the stream)
    expect(count("project_completed")).toBe(1);

    // Events arrived exactly once, in order.
    const seqs = raw.map((e) => e.sequence_no);
    expect(new Set(seqs).size).toBe(seqs.length);
    expect([...seqs].sort((a, b) => a - b)).toEqual(seqs);

    // Statelessness: the folded board equals a fresh page load.
    snapshot = await client.snapshot(PROJECT);
    expect(boardProjection(vm)).toEqual(snapshotProjection(snapshot));
  }, 120000);

  it("a reconnecting stream resumes from the last sequence number", async () => {
    const client = new ApiClient(BASE);
    const snapshot = await client.snapshot(PROJECT);
    const total = snapshot.last_event;
    const split = Math.floor(total / 2);

    const collect = (from: number): Promise<number[]> =>
      new Promise((resolve, reject) => {
        const seqs: number[] = [];
        const handle = client.streamEvents(PROJECT, from,
          (event) => seqs.push(event.sequence_no),
          () => { handle.stop(); resolve(seqs); });
        setTimeout(() => { handle.stop(); reject(new Error("stream timeout")); },
                   15000);
      });

    const first = await collect(0);
    const second = await collect(split);
    expect(first).toEqual(Array.from({ length: total }, (_, i) => i + 1));
    expect(second).toEqual(Array.from({ length: total - split }, (_, i) => split + i + 1));
    // stream(0..split) ++ stream(split..end) == stream(0..end)
    expect([...first.slice(0, split), ...second]).toEqual(first);
  }, 40000);
});
