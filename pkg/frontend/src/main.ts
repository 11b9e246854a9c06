// Entry point: wires the service client, the pure view state, and the
// canvas together. All annotation state lives on the server; this file
// only holds the current recording's cached payloads and the view.

import { AnnotationApi } from "./api.js";
import { KEY_HELP, keyToAction, type Action } from "./keyboard.js";
import { LabelStore, type Notice } from "./store.js";
import {
  buildDrawModel,
  classColor,
  type DrawModel,
} from "./timeline.js";
import type {
  FramesPayload,
  PartClass,
  StreamsPayload,
} from "./types.js";
import {
  atBoundary,
  cursorAt,
  followCursor,
  initialView,
  panBy,
  pause,
  scrub,
  selectClass,
  setRate,
  stepFrames,
  togglePlay,
  zoomBy,
  type ViewState,
} from "./viewstate.js";

const AXIS_HEIGHT = 20;
const STREAM_POINT_BUDGET = 4000;

const params = new URLSearchParams(location.search);
const api = new AnnotationApi(params.get("api") ?? "");

const canvas = document.getElementById("timeline") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const recordingSelect = document.getElementById("recording") as HTMLSelectElement;
const classesBox = document.getElementById("classes")!;
const frameCounter = document.getElementById("frame-counter")!;
const transport = document.getElementById("transport")!;
const banner = document.getElementById("banner")!;
const toast = document.getElementById("toast")!;
document.getElementById("help")!.textContent = KEY_HELP;

let view: ViewState | null = null;
let streamsPayload: StreamsPayload | null = null;
let framesPayload: FramesPayload | null = null;
let store: LabelStore | null = null;
let classes: PartClass[] = [];
let dirty = true;
let toastTimer: ReturnType<typeof setTimeout> | null = null;

function invalidate(): void {
  dirty = true;
}

function showNotice(notice: Notice): void {
  toast.textContent = notice.message;
  toast.dataset.level = notice.level;
  toast.classList.add("visible");
  if (toastTimer !== null) {
    clearTimeout(toastTimer);
  }
  toastTimer = setTimeout(() => toast.classList.remove("visible"), 2500);
}

function updateBanner(): void {
  if (store !== null && store.offline) {
    banner.textContent = "annotation service unreachable; labels shown may be stale";
    banner.classList.add("visible");
  } else if (store !== null && store.stale) {
    banner.textContent = "label list not yet confirmed by the service";
    banner.classList.add("visible");
  } else {
    banner.classList.remove("visible");
  }
}

function renderClassPalette(): void {
  classesBox.textContent = "";
  for (const part of classes) {
    const chip = document.createElement("button");
    chip.className = "chip";
    chip.style.setProperty("--chip-color", classColor(part.class_id));
    chip.textContent = `${part.class_id} ${part.name}`;
    if (view !== null && part.class_id === view.selectedClass) {
      chip.classList.add("selected");
    }
    chip.addEventListener("click", () => {
      if (view !== null) {
        view = selectClass(view, part.class_id);
        renderClassPalette();
        invalidate();
      }
    });
    classesBox.appendChild(chip);
  }
}

function niceTickStep(spanMs: number, width: number): number {
  const target = spanMs / Math.max(1, width / 90);
  const steps = [
    100, 200, 500, 1000, 2000, 5000, 10_000, 20_000, 30_000, 60_000, 120_000,
  ];
  for (const step of steps) {
    if (step >= target) {
      return step;
    }
  }
  return 300_000;
}

function paint(model: DrawModel, nowMs: number): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#14181d";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  for (const lane of model.lanes) {
    if (lane.index % 2 === 1) {
      ctx.fillStyle = "#191f26";
      ctx.fillRect(0, lane.top, model.width, lane.height);
    }
    if (lane.points.length > 0) {
      ctx.beginPath();
      ctx.moveTo(lane.points[0]!.x, lane.points[0]!.yTop);
      for (const p of lane.points) {
        ctx.lineTo(p.x, p.yTop);
      }
      for (let k = lane.points.length - 1; k >= 0; k -= 1) {
        ctx.lineTo(lane.points[k]!.x, lane.points[k]!.yBottom);
      }
      ctx.closePath();
      ctx.fillStyle = "rgba(110, 168, 220, 0.45)";
      ctx.fill();
      ctx.strokeStyle = "rgba(150, 200, 245, 0.9)";
      ctx.lineWidth = 1;
      ctx.stroke();
    }
    ctx.strokeStyle = "#2a323c";
    ctx.beginPath();
    ctx.moveTo(0, lane.top + lane.height);
    ctx.lineTo(model.width, lane.top + lane.height);
    ctx.stroke();
    ctx.fillStyle = "#9ab0c4";
    ctx.font = "12px system-ui, sans-serif";
    ctx.fillText(lane.sensorId, 6, lane.top + 14);
  }

  for (const band of model.bands) {
    const color = classColor(band.classId);
    ctx.save();
    ctx.globalAlpha = 0.16;
    ctx.fillStyle = color;
    ctx.fillRect(band.x0, 0, band.x1 - band.x0, model.height);
    ctx.restore();
    ctx.strokeStyle = color;
    ctx.lineWidth = 1;
    ctx.strokeRect(band.x0 + 0.5, 0.5, band.x1 - band.x0 - 1, model.height - 1);
    ctx.fillStyle = color;
    ctx.font = "11px system-ui, sans-serif";
    const tag = band.source === "manual" ? `${band.classId}` : `${band.classId}*`;
    ctx.fillText(tag, band.x0 + 3, 12);
  }

  for (const marker of model.markers) {
    const lane = model.lanes[marker.laneIndex];
    if (lane === undefined) {
      continue;
    }
    ctx.save();
    ctx.strokeStyle = marker.classId === null ? "#d9a441" : classColor(marker.classId);
    ctx.setLineDash([4, 3]);
    ctx.beginPath();
    ctx.moveTo(marker.x, lane.top);
    ctx.lineTo(marker.x, lane.top + lane.height);
    ctx.stroke();
    ctx.restore();
  }

  ctx.fillStyle = "#1c232b";
  ctx.fillRect(0, model.height, model.width, AXIS_HEIGHT);
  const span = (view?.zoom.t1 ?? 0) - (view?.zoom.t0 ?? 0);
  if (view !== null && span > 0) {
    const step = niceTickStep(span, model.width);
    const firstTick = Math.ceil(view.zoom.t0 / step) * step;
    ctx.fillStyle = "#7d93a8";
    ctx.font = "10px system-ui, sans-serif";
    for (let t = firstTick; t <= view.zoom.t1; t += step) {
      const x = ((t - view.zoom.t0) / span) * model.width;
      ctx.fillRect(x, model.height, 1, 4);
      ctx.fillText(`${(t / 1000).toFixed(step < 1000 ? 1 : 0)}s`, x + 2, model.height + 14);
    }
  }

  if (model.cursorX !== null) {
    ctx.fillStyle = "#e25555";
    ctx.fillRect(model.cursorX - 1, 0, 2, model.height + AXIS_HEIGHT);
  }

  if (view !== null) {
    const cursor = cursorAt(view, nowMs);
    const frame = framesPayload !== null
      ? `frame ${String(frameAtCursor(cursor)).padStart(4, "0")}`
      : "frame ----";
    frameCounter.textContent = `${frame} · ${(cursor / 1000).toFixed(2)}s`;
    const dir = view.playbackRate < 0 ? "rev" : "fwd";
    transport.textContent = view.playing
      ? `playing ${dir} x${Math.abs(view.playbackRate)}`
      : "paused";
  }
}

function frameAtCursor(cursor: number): number {
  if (framesPayload === null || framesPayload.entries.length === 0) {
    return 0;
  }
  let lo = 0;
  let hi = framesPayload.entries.length - 1;
  if (cursor < framesPayload.entries[0]!.t_ms) {
    return framesPayload.entries[0]!.frame;
  }
  while (lo < hi) {
    const mid = (lo + hi + 1) >> 1;
    if (framesPayload.entries[mid]!.t_ms <= cursor) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return framesPayload.entries[lo]!.frame;
}

function render(nowMs: number): void {
  if (view === null || streamsPayload === null || store === null) {
    return;
  }
  const model = buildDrawModel(
    streamsPayload.streams,
    streamsPayload.state_changes,
    store.labels,
    { zoom: view.zoom, cursorMs: cursorAt(view, nowMs) },
    canvas.width,
    canvas.height - AXIS_HEIGHT,
  );
  paint(model, nowMs);
  updateBanner();
}

function tick(nowMs: number): void {
  if (view !== null && view.playing) {
    view = followCursor(view, nowMs);
    if (atBoundary(view, nowMs)) {
      view = pause(view, nowMs);
    }
    dirty = true;
  }
  if (dirty) {
    dirty = false;
    render(nowMs);
  }
  requestAnimationFrame(tick);
}

function applyAction(action: Action, nowMs: number): void {
  if (view === null || store === null) {
    return;
  }
  switch (action.kind) {
    case "toggle-play":
      view = togglePlay(view, nowMs);
      break;
    case "step": {
      view = pause(view, nowMs);
      const entries = framesPayload?.entries ?? [];
      view = scrub(view, stepFrames(entries, view.cursorMs, action.frames), nowMs);
      break;
    }
    case "select-class": {
      const known =
        classes.length === 0 ||
        classes.some((part) => part.class_id === action.classId);
      if (known) {
        view = selectClass(view, action.classId);
        renderClassPalette();
      } else {
        showNotice({
          level: "info",
          message: `no class ${action.classId} in the catalog`,
        });
      }
      break;
    }
    case "cycle-class": {
      const ids =
        classes.length > 0
          ? classes.map((part) => part.class_id)
          : [1, 2, 3, 4, 5, 6, 7, 8, 9];
      const at = ids.indexOf(view.selectedClass);
      const next = ids[(at + action.delta + ids.length) % ids.length]!;
      view = selectClass(view, next);
      renderClassPalette();
      break;
    }
    case "add-label":
      void store.addAtCursor(view.selectedClass, cursorAt(view, nowMs));
      break;
    case "delete-label":
      void store.deleteAtCursor(cursorAt(view, nowMs));
      break;
    case "zoom":
      view = zoomBy(view, action.factor, cursorAt(view, nowMs));
      break;
    case "pan":
      view = panBy(view, (view.zoom.t1 - view.zoom.t0) * action.fraction);
      break;
    case "jump":
      view = scrub(view, action.to === "start" ? 0 : view.durationMs, nowMs);
      break;
    case "rate": {
      const next = Math.sign(view.playbackRate || 1) *
        Math.min(16, Math.max(0.125, Math.abs(view.playbackRate) * action.factor));
      view = setRate(view, next, nowMs);
      break;
    }
    case "reverse":
      view = setRate(view, -view.playbackRate, nowMs);
      break;
  }
  invalidate();
}

async function openRecording(recordingId: string): Promise<void> {
  store = new LabelStore(api, recordingId);
  store.onChange = invalidate;
  store.onNotice = showNotice;
  streamsPayload = null;
  framesPayload = null;
  try {
    const [streams, frames] = await Promise.all([
      api.streams(recordingId, STREAM_POINT_BUDGET),
      api.frames(recordingId),
      store.refresh(),
    ]);
    streamsPayload = streams;
    framesPayload = frames;
  } catch (err) {
    banner.textContent = `failed to load ${recordingId}: ${String(err)}`;
    banner.classList.add("visible");
    return;
  }
  const firstClass = classes.length > 0 ? classes[0]!.class_id : 1;
  view = initialView(recordingId, streamsPayload.duration_ms, firstClass);
  if (streamsPayload.detector_error !== null) {
    showNotice({
      level: "warn",
      message: `state changes unavailable: ${streamsPayload.detector_error}`,
    });
  }
  renderClassPalette();
  invalidate();
}

async function boot(): Promise<void> {
  let index;
  try {
    index = await api.listRecordings();
  } catch (err) {
    banner.textContent = `annotation service unreachable: ${String(err)}`;
    banner.classList.add("visible");
    return;
  }
  classes = index.classes;
  recordingSelect.textContent = "";
  for (const summary of index.recordings) {
    const option = document.createElement("option");
    option.value = summary.recording_id;
    option.textContent =
      `${summary.recording_id} (${summary.n_labels} labels, ` +
      `${(summary.duration_ms / 1000).toFixed(0)}s)`;
    recordingSelect.appendChild(option);
  }
  recordingSelect.addEventListener("change", () => {
    void openRecording(recordingSelect.value);
  });
  const first = index.recordings[0];
  if (first !== undefined) {
    await openRecording(first.recording_id);
  } else {
    banner.textContent = "corpus has no recordings";
    banner.classList.add("visible");
  }
}

window.addEventListener("keydown", (event) => {
  const target = event.target as HTMLElement | null;
  if (target !== null && (target.tagName === "INPUT" || target.tagName === "SELECT")) {
    return;
  }
  const action = keyToAction(event.key, event.shiftKey);
  if (action !== null) {
    event.preventDefault();
    applyAction(action, performance.now());
  }
});

canvas.addEventListener("click", (event) => {
  if (view === null) {
    return;
  }
  const rect = canvas.getBoundingClientRect();
  const frac = (event.clientX - rect.left) / rect.width;
  const t = view.zoom.t0 + frac * (view.zoom.t1 - view.zoom.t0);
  view = scrub(view, t, performance.now());
  invalidate();
});

canvas.addEventListener("wheel", (event) => {
  if (view === null) {
    return;
  }
  event.preventDefault();
  const rect = canvas.getBoundingClientRect();
  const frac = (event.clientX - rect.left) / rect.width;
  const center = view.zoom.t0 + frac * (view.zoom.t1 - view.zoom.t0);
  view = zoomBy(view, event.deltaY > 0 ? 1.25 : 0.8, center);
  invalidate();
});

function fitCanvas(): void {
  const width = canvas.clientWidth;
  if (width > 0 && width !== canvas.width) {
    canvas.width = width;
  }
  invalidate();
}

window.addEventListener("resize", fitCanvas);
fitCanvas();
requestAnimationFrame(tick);
void boot();
