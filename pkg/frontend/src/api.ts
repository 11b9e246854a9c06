// Fetch client for the annotation service. Every method returns the
// parsed JSON payload or throws: ApiError for a rejected request (the
// server's "detail" message is preserved), plain Error when the service
// cannot be reached at all.

import type {
  FramesPayload,
  LabelsPayload,
  RecordingsIndex,
  StreamsPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new Error(`annotation service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (typeof body.detail === "string") {
          detail = body.detail;
        }
      } catch {
        // error body was not JSON; keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listRecordings(): Promise<RecordingsIndex> {
    return this.request("/recordings");
  }

  streams(recordingId: string, points = 2000): Promise<StreamsPayload> {
    const rid = encodeURIComponent(recordingId);
    return this.request(`/recordings/${rid}/streams?points=${points}`);
  }

  frames(recordingId: string): Promise<FramesPayload> {
    const rid = encodeURIComponent(recordingId);
    return this.request(`/recordings/${rid}/frames`);
  }

  labels(recordingId: string): Promise<LabelsPayload> {
    const rid = encodeURIComponent(recordingId);
    return this.request(`/recordings/${rid}/labels`);
  }

  addLabel(
    recordingId: string,
    classId: number,
    tStartMs: number,
  ): Promise<LabelsPayload> {
    const rid = encodeURIComponent(recordingId);
    return this.request(`/recordings/${rid}/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ class_id: classId, t_start_ms: tStartMs }),
    });
  }

  deleteLabel(recordingId: string, labelId: string): Promise<LabelsPayload> {
    const rid = encodeURIComponent(recordingId);
    const lid = encodeURIComponent(labelId);
    return this.request(`/recordings/${rid}/labels/${lid}`, {
      method: "DELETE",
    });
  }
}
