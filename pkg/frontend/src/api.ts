/** REST client plus a fetch-streaming SSE reader with automatic
 * reconnection from the last delivered sequence number.  Uses fetch and
 * ReadableStream only, so the same code runs in the browser and in the
 * node test harness. */

import type { ApiSnapshot, JournalEvent, Plan, ProjectListing } from "./types.js";

export interface SseFrame {
  id: number | null;
  event: string;
  data: string;
}

/** Incremental parser for a text/event-stream byte feed. */
export class SseParser {
  private buffer = "";
  private frame: SseFrame = { id: null, event: "message", data: "" };

  push(chunk: string): SseFrame[] {
    this.buffer += chunk;
    const frames: SseFrame[] = [];
    for (;;) {
      const newline = this.buffer.indexOf("\n");
      if (newline < 0) break;
      const line = this.buffer.slice(0, newline).replace(/\r$/, "");
      this.buffer = this.buffer.slice(newline + 1);
      if (line === "") {
        if (this.frame.data !== "" || this.frame.event !== "message" || this.frame.id !== null) {
          frames.push(this.frame);
        }
        this.frame = { id: null, event: "message", data: "" };
        continue;
      }
      if (line.startsWith(":")) continue; // comment / keepalive
      const colon = line.indexOf(":");
      const field = colon < 0 ? line : line.slice(0, colon);
      let value = colon < 0 ? "" : line.slice(colon + 1);
      if (value.startsWith(" ")) value = value.slice(1);
      if (field === "id") this.frame.id = Number(value);
      else if (field === "event") this.frame.event = value;
      else if (field === "data") this.frame.data += (this.frame.data ? "\n" : "") + value;
    }
    return frames;
  }
}

export function generateRequestId(prefix = "ui"): string {
  const cryptoObj = globalThis.crypto as Crypto | undefined;
  if (cryptoObj?.randomUUID) return `${prefix}-${cryptoObj.randomUUID()}`;
  return `${prefix}-${Date.now()}-${Math.floor(Math.random() * 1e9)}`;
}

export interface StreamHandle {
  stop(): void;
  done: Promise<void>;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(private baseUrl: string, private token?: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private headers(json = false): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path, { headers: this.headers() });
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(body),
    });
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return (await response.json()) as T;
  }

  listProjects(): Promise<ProjectListing[]> {
    return this.getJson("/projects");
  }

  snapshot(projectId: string): Promise<ApiSnapshot> {
    return this.getJson(`/projects/${projectId}/snapshot`);
  }

  plan(projectId: string, version: number): Promise<Plan> {
    return this.getJson(`/projects/${projectId}/plan/${version}`);
  }

  taskDetail(projectId: string, taskId: number): Promise<unknown> {
    return this.getJson(`/projects/${projectId}/tasks/${taskId}`);
  }

  approve(projectId: string, actor: string, requestId: string): Promise<unknown> {
    return this.postJson(`/projects/${projectId}/approve`,
      { actor, request_id: requestId });
  }

  resume(projectId: string, instruction: string, requestId: string): Promise<unknown> {
    return this.postJson(`/projects/${projectId}/resume`,
      { instruction, request_id: requestId });
  }

  halt(projectId: string, reason: string, requestId: string): Promise<unknown> {
    return this.postJson(`/projects/${projectId}/halt`,
      { reason, request_id: requestId });
  }

  /** Stream journal events from `fromSeq`, reconnecting from the last
   * delivered sequence number until the server sends the end marker or
   * the handle is stopped. */
  streamEvents(
    projectId: string,
    fromSeq: number,
    onEvent: (event: JournalEvent) => void,
    onEnd?: () => void,
    options: { retryMs?: number; maxRetries?: number } = {},
  ): StreamHandle {
    const retryMs = options.retryMs ?? 500;
    const maxRetries = options.maxRetries ?? 1000;
    let stopped = false;
    let last = fromSeq;
    const controller = { current: new AbortController() };

    const done = (async () => {
      let retries = 0;
      while (!stopped && retries <= maxRetries) {
        try {
          controller.current = new AbortController();
          const response = await fetch(
            `${this.baseUrl}/projects/${projectId}/events?from_seq=${last}`,
            { headers: this.headers(), signal: controller.current.signal },
          );
          if (!response.ok || !response.body) {
            throw new ApiError(response.status, "stream unavailable");
          }
          const reader = response.body.getReader();
          const decoder = new TextDecoder();
          const parser = new SseParser();
          for (;;) {
            const { value, done: eof } = await reader.read();
            if (eof) break;
            for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
              if (frame.event === "end") {
                if (onEnd) onEnd();
                return;
              }
              if (frame.event === "error") throw new Error(frame.data);
              if (!frame.data) continue;
              const event = JSON.parse(frame.data) as JournalEvent;
              if (event.sequence_no > last) {
                last = event.sequence_no;
                onEvent(event);
              }
            }
          }
          // Connection closed without the end marker: reconnect from last.
          retries += 1;
        } catch (error) {
          if (stopped) return;
          retries += 1;
        }
        if (!stopped) await new Promise((r) => setTimeout(r, retryMs));
      }
    })();

    return {
      stop() {
        stopped = true;
        controller.current.abort();
      },
      done,
    };
  }
}
