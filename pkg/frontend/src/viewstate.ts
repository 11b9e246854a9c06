// Pure view-state logic: playback clock, zoom window, class selection.
// Nothing here touches the DOM or the wall clock; callers pass "now" in,
// which keeps every transition deterministic and testable.
//
// The playback cursor is not stored while playing. It is derived from an
// anchor (wall time and cursor position at the last play/scrub/rate
// change) so that pausing and resuming round-trips exactly and two
// renders in the same frame agree.

import type { FrameEntry } from "./types.js";

export interface Zoom {
  t0: number;
  t1: number;
}

export interface ViewState {
  recordingId: string;
  durationMs: number;
  cursorMs: number;
  zoom: Zoom;
  playing: boolean;
  playbackRate: number;
  selectedClass: number;
  anchorWallMs: number;
  anchorCursorMs: number;
}

export const MIN_SPAN_MS = 200;

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, value));
}

export function initialView(
  recordingId: string,
  durationMs: number,
  selectedClass = 1,
): ViewState {
  return {
    recordingId,
    durationMs,
    cursorMs: 0,
    zoom: { t0: 0, t1: durationMs },
    playing: false,
    playbackRate: 1,
    selectedClass,
    anchorWallMs: 0,
    anchorCursorMs: 0,
  };
}

export function cursorAt(view: ViewState, nowMs: number): number {
  if (!view.playing) {
    return view.cursorMs;
  }
  const advanced =
    view.anchorCursorMs + (nowMs - view.anchorWallMs) * view.playbackRate;
  return clamp(advanced, 0, view.durationMs);
}

export function atBoundary(view: ViewState, nowMs: number): boolean {
  if (!view.playing) {
    return false;
  }
  const cursor = cursorAt(view, nowMs);
  return view.playbackRate >= 0
    ? cursor >= view.durationMs
    : cursor <= 0;
}

export function play(view: ViewState, nowMs: number): ViewState {
  if (view.playing) {
    return view;
  }
  return {
    ...view,
    playing: true,
    anchorWallMs: nowMs,
    anchorCursorMs: view.cursorMs,
  };
}

export function pause(view: ViewState, nowMs: number): ViewState {
  if (!view.playing) {
    return view;
  }
  return { ...view, playing: false, cursorMs: cursorAt(view, nowMs) };
}

export function togglePlay(view: ViewState, nowMs: number): ViewState {
  return view.playing ? pause(view, nowMs) : play(view, nowMs);
}

export function scrub(view: ViewState, toMs: number, nowMs: number): ViewState {
  const cursor = clamp(toMs, 0, view.durationMs);
  return {
    ...view,
    cursorMs: cursor,
    anchorWallMs: nowMs,
    anchorCursorMs: cursor,
  };
}

export function setRate(
  view: ViewState,
  rate: number,
  nowMs: number,
): ViewState {
  // Materialize the position first so elapsed playback keeps the old rate.
  const cursor = cursorAt(view, nowMs);
  return {
    ...view,
    playbackRate: rate,
    cursorMs: cursor,
    anchorWallMs: nowMs,
    anchorCursorMs: cursor,
  };
}

export function selectClass(view: ViewState, classId: number): ViewState {
  return { ...view, selectedClass: classId };
}

function clampedZoom(durationMs: number, t0: number, t1: number): Zoom {
  let span = Math.max(MIN_SPAN_MS, t1 - t0);
  span = Math.min(span, Math.max(durationMs, MIN_SPAN_MS));
  let lo = t0;
  if (lo + span > durationMs) {
    lo = durationMs - span;
  }
  lo = Math.max(0, lo);
  return { t0: lo, t1: lo + span };
}

export function zoomTo(view: ViewState, t0: number, t1: number): ViewState {
  return { ...view, zoom: clampedZoom(view.durationMs, t0, t1) };
}

export function zoomBy(
  view: ViewState,
  factor: number,
  centerMs: number,
): ViewState {
  const { t0, t1 } = view.zoom;
  const span = t1 - t0;
  const next = span * factor;
  const frac = span > 0 ? (clamp(centerMs, t0, t1) - t0) / span : 0.5;
  return zoomTo(view, centerMs - frac * next, centerMs + (1 - frac) * next);
}

export function panBy(view: ViewState, deltaMs: number): ViewState {
  const { t0, t1 } = view.zoom;
  return zoomTo(view, t0 + deltaMs, t1 + deltaMs);
}

export function zoomContains(zoom: Zoom, tMs: number): boolean {
  return tMs >= zoom.t0 && tMs <= zoom.t1;
}

// While playing, keep the cursor inside the zoom window by flipping the
// window forward (or backward when rewinding) once the cursor leaves it.
// The span is preserved; the cursor lands a tenth of the span from the
// edge it entered through, so there is context ahead of it.
export function followCursor(view: ViewState, nowMs: number): ViewState {
  if (!view.playing) {
    return view;
  }
  const cursor = cursorAt(view, nowMs);
  if (zoomContains(view.zoom, cursor)) {
    return view;
  }
  const span = view.zoom.t1 - view.zoom.t0;
  const lead = span * 0.1;
  const t0 = view.playbackRate >= 0 ? cursor - lead : cursor + lead - span;
  return zoomTo(view, t0, t0 + span);
}

// Frame shown at a given time: the last frame whose timestamp is at or
// before the cursor. Entries are sorted by t_ms.
export function frameAt(entries: FrameEntry[], tMs: number): number {
  if (entries.length === 0) {
    return 0;
  }
  let lo = 0;
  let hi = entries.length - 1;
  if (tMs < entries[0]!.t_ms) {
    return entries[0]!.frame;
  }
  while (lo < hi) {
    const mid = (lo + hi + 1) >> 1;
    if (entries[mid]!.t_ms <= tMs) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return entries[lo]!.frame;
}

// Timestamp to scrub to when stepping by whole frames from the cursor.
export function stepFrames(
  entries: FrameEntry[],
  tMs: number,
  delta: number,
): number {
  if (entries.length === 0) {
    return tMs + delta * 33;
  }
  const current = frameAt(entries, tMs);
  let index = entries.findIndex((e) => e.frame === current);
  if (index < 0) {
    index = 0;
  }
  const target = Math.min(entries.length - 1, Math.max(0, index + delta));
  return entries[target]!.t_ms;
}
