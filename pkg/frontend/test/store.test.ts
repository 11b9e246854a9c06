import { beforeEach, describe, expect, it } from "vitest";

import { AnnotationApi } from "../src/api.js";
import { LabelStore, type Notice } from "../src/store.js";
import type { LabelOut } from "../src/types.js";

const D_MS = 4000;
const DURATION = 60_000;

// In-memory stand-in for the annotation service with the same contract:
// label ids are "<class>-<start>", POST validates and returns the full
// list, DELETE 404s on unknown ids, every response is authoritative.
class FakeService {
  labels = new Map<string, LabelOut>();
  requests: string[] = [];
  active = 0;
  maxActive = 0;
  gate: Promise<void> | null = null;
  down = false;

  fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    this.requests.push(`${method} ${url}`);
    this.active += 1;
    this.maxActive = Math.max(this.maxActive, this.active);
    try {
      if (this.gate !== null) {
        await this.gate;
      }
      if (this.down) {
        throw new TypeError("fetch failed");
      }
      return this.handle(method, url, init);
    } finally {
      this.active -= 1;
    }
  };

  private respond(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }

  private payload() {
    const labels = [...this.labels.values()].sort(
      (a, b) => a.t_start_ms - b.t_start_ms || a.class_id - b.class_id,
    );
    return {
      recording_id: "rec001",
      duration_ms: DURATION,
      d_ms: D_MS,
      labels,
    };
  }

  private handle(method: string, url: string, init?: RequestInit): Response {
    if (method === "GET") {
      return this.respond(200, this.payload());
    }
    if (method === "POST") {
      const body = JSON.parse(String(init?.body)) as {
        class_id: number;
        t_start_ms: number;
      };
      if (body.t_start_ms < 0 || body.t_start_ms + D_MS > DURATION) {
        return this.respond(422, { detail: "label outside the recording" });
      }
      for (const other of this.labels.values()) {
        const overlaps =
          other.class_id === body.class_id &&
          body.t_start_ms < other.t_end_ms &&
          other.t_start_ms < body.t_start_ms + D_MS;
        if (overlaps) {
          return this.respond(422, {
            detail: `overlap with class ${other.class_id} at ${other.t_start_ms}`,
          });
        }
      }
      const id = `${body.class_id}-${body.t_start_ms}`;
      this.labels.set(id, {
        label_id: id,
        class_id: body.class_id,
        t_start_ms: body.t_start_ms,
        t_end_ms: body.t_start_ms + D_MS,
        source: "manual",
      });
      return this.respond(200, this.payload());
    }
    const id = decodeURIComponent(url.split("/").pop()!);
    if (!this.labels.delete(id)) {
      return this.respond(404, { detail: `unknown label '${id}'` });
    }
    return this.respond(200, this.payload());
  }
}

let service: FakeService;
let store: LabelStore;
let notices: Notice[];

beforeEach(() => {
  service = new FakeService();
  store = new LabelStore(new AnnotationApi("", service.fetchFn), "rec001");
  notices = [];
  store.onNotice = (n) => notices.push(n);
});

async function settle(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("label store", () => {
  it("starts stale and syncs on refresh", async () => {
    expect(store.stale).toBe(true);
    await store.refresh();
    expect(store.stale).toBe(false);
    expect(store.labels).toEqual([]);
    expect(store.dMs).toBe(D_MS);
    expect(store.durationMs).toBe(DURATION);
  });

  it("adopts the server list after each add", async () => {
    await store.refresh();
    await store.addAtCursor(2, 10_000);
    expect(store.labels.map((l) => l.label_id)).toEqual(["2-10000"]);
    expect(store.labels[0]!.t_end_ms).toBe(14_000);
    await store.addAtCursor(1, 500.4);
    expect(store.labels.map((l) => l.label_id)).toEqual(["1-500", "2-10000"]);
  });

  it("keeps local state untouched when the server rejects", async () => {
    await store.refresh();
    await store.addAtCursor(2, 10_000);
    await store.addAtCursor(2, 11_000);
    expect(store.labels.map((l) => l.label_id)).toEqual(["2-10000"]);
    expect(notices.pop()).toEqual({
      level: "warn",
      message: "overlap with class 2 at 10000",
    });
    expect(store.stale).toBe(false);
  });

  it("deletes the label under the cursor through the service", async () => {
    await store.refresh();
    await store.addAtCursor(1, 10_000);
    await store.addAtCursor(2, 12_500);
    await store.deleteAtCursor(13_000);
    expect(store.labels.map((l) => l.label_id)).toEqual(["1-10000"]);
    expect(service.labels.has("2-12500")).toBe(false);
  });

  it("treats delete with nothing under the cursor as a hint, not a request", async () => {
    await store.refresh();
    const before = service.requests.length;
    await store.deleteAtCursor(30_000);
    expect(service.requests.length).toBe(before);
    expect(notices.pop()?.message).toContain("no label under the cursor");
  });

  it("resyncs after a delete race instead of guessing", async () => {
    await store.refresh();
    await store.addAtCursor(1, 10_000);
    service.labels.clear();
    await store.deleteAtCursor(11_000);
    expect(store.labels).toEqual([]);
    expect(notices.some((n) => n.level === "warn")).toBe(true);
    expect(store.stale).toBe(false);
  });

  it("runs one mutation at a time", async () => {
    await store.refresh();
    let release: () => void = () => {};
    service.gate = new Promise((resolve) => {
      release = resolve;
    });
    const first = store.addAtCursor(1, 1000);
    const second = store.addAtCursor(2, 9000);
    await settle();
    expect(service.requests.filter((r) => r.startsWith("POST")).length).toBe(1);
    service.gate = null;
    release();
    await Promise.all([first, second]);
    expect(service.requests.filter((r) => r.startsWith("POST")).length).toBe(2);
    expect(service.maxActive).toBe(1);
    expect(store.labels.length).toBe(2);
  });

  it("keeps the queue alive after a failed mutation", async () => {
    await store.refresh();
    service.down = true;
    await store.addAtCursor(1, 1000);
    expect(store.offline).toBe(true);
    expect(store.stale).toBe(true);
    expect(notices.pop()).toEqual({
      level: "error",
      message: "annotation service unreachable",
    });
    service.down = false;
    await store.addAtCursor(1, 1000);
    expect(store.offline).toBe(false);
    expect(store.stale).toBe(false);
    expect(store.labels.length).toBe(1);
  });

  it("flags stale data when a refresh fails", async () => {
    await store.refresh();
    expect(store.stale).toBe(false);
    service.down = true;
    await store.refresh();
    expect(store.stale).toBe(true);
    expect(store.offline).toBe(true);
  });
});
