// Client-side label state. The server list is authoritative: every
// mutation sends the request and then replaces the local list with the
// payload the service returns, so the UI can never drift from the server
// by more than the one request in flight. Mutations are serialized
// through a promise chain; reads may overlap them.

import { AnnotationApi, ApiError } from "./api.js";
import { labelUnderCursor } from "./timeline.js";
import type { LabelOut, LabelsPayload } from "./types.js";

export interface Notice {
  level: "info" | "warn" | "error";
  message: string;
}

export class LabelStore {
  labels: LabelOut[] = [];
  dMs = 4000;
  durationMs = 0;
  // True until the list has been confirmed by the server, and again
  // whenever the service stops answering; the UI shows it as a banner.
  stale = true;
  offline = false;
  onChange: () => void = () => {};
  onNotice: (notice: Notice) => void = () => {};
  private queue: Promise<void> = Promise.resolve();

  constructor(
    private readonly api: AnnotationApi,
    readonly recordingId: string,
  ) {}

  async refresh(): Promise<void> {
    try {
      this.apply(await this.api.labels(this.recordingId));
    } catch (err) {
      this.fail(err);
    }
  }

  addAtCursor(classId: number, cursorMs: number): Promise<void> {
    return this.enqueue(async () => {
      try {
        this.apply(
          await this.api.addLabel(
            this.recordingId,
            classId,
            Math.round(cursorMs),
          ),
        );
      } catch (err) {
        this.fail(err);
      }
    });
  }

  deleteAtCursor(cursorMs: number): Promise<void> {
    return this.enqueue(async () => {
      const target = labelUnderCursor(this.labels, cursorMs);
      if (target === null) {
        this.onNotice({ level: "info", message: "no label under the cursor" });
        return;
      }
      try {
        this.apply(
          await this.api.deleteLabel(this.recordingId, target.label_id),
        );
      } catch (err) {
        if (err instanceof ApiError && err.status === 404) {
          // The label vanished under us; resync instead of guessing.
          await this.refresh();
        }
        this.fail(err);
      }
    });
  }

  private apply(payload: LabelsPayload): void {
    this.labels = payload.labels;
    this.dMs = payload.d_ms;
    this.durationMs = payload.duration_ms;
    this.stale = false;
    this.offline = false;
    this.onChange();
  }

  private fail(err: unknown): void {
    if (err instanceof ApiError) {
      this.onNotice({ level: "warn", message: err.detail });
    } else {
      this.offline = true;
      this.stale = true;
      this.onNotice({ level: "error", message: "annotation service unreachable" });
    }
    this.onChange();
  }

  private enqueue(work: () => Promise<void>): Promise<void> {
    const next = this.queue.then(work);
    this.queue = next.catch(() => {});
    return next;
  }
}
