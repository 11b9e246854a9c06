// Draw model for the timeline canvas: one lane per sensor with min/max
// envelopes, vertical markers for detected state changes, shaded bands
// for intention labels, and the cursor line. Everything is computed in
// pixel space here and painted elsewhere, so tests can check what would
// be drawn without a canvas.

import type { LabelOut, StateChangeOut, StreamSeries } from "./types.js";
import type { Zoom } from "./viewstate.js";

export interface ViewWindow {
  zoom: Zoom;
  cursorMs: number | null;
}

export interface LanePoint {
  x: number;
  tMs: number;
  gMin: number;
  gMax: number;
  // Pixel rows for the envelope; the g axis points up, so yTop <= yBottom.
  yTop: number;
  yBottom: number;
}

export interface Lane {
  sensorId: string;
  index: number;
  top: number;
  height: number;
  gLo: number;
  gHi: number;
  points: LanePoint[];
}

export interface Marker {
  x: number;
  tMs: number;
  classId: number | null;
  sensorId: string;
  laneIndex: number;
}

export interface Band {
  x0: number;
  x1: number;
  classId: number;
  labelId: string;
  tStartMs: number;
  tEndMs: number;
  source: string;
}

export interface DrawModel {
  width: number;
  height: number;
  lanes: Lane[];
  markers: Marker[];
  bands: Band[];
  cursorX: number | null;
}

const LANE_PAD = 6;

export function xForTime(tMs: number, zoom: Zoom, width: number): number {
  const span = zoom.t1 - zoom.t0;
  if (span <= 0) {
    return 0;
  }
  return ((tMs - zoom.t0) / span) * width;
}

function buildLane(
  series: StreamSeries,
  index: number,
  laneTop: number,
  laneHeight: number,
  zoom: Zoom,
  width: number,
): Lane {
  // Visible samples plus one neighbor on each side so the envelope does
  // not stop short of the window edges.
  let first = series.t_ms.findIndex((t) => t >= zoom.t0);
  if (first < 0) {
    first = series.t_ms.length;
  }
  let last = first;
  while (last < series.t_ms.length && series.t_ms[last]! <= zoom.t1) {
    last += 1;
  }
  first = Math.max(0, first - 1);
  last = Math.min(series.t_ms.length, last + 1);

  let gLo = Infinity;
  let gHi = -Infinity;
  for (let k = first; k < last; k += 1) {
    gLo = Math.min(gLo, series.min_g[k]!);
    gHi = Math.max(gHi, series.max_g[k]!);
  }
  if (gLo > gHi) {
    gLo = 0;
    gHi = 1;
  }
  if (gHi - gLo < 1e-9) {
    gLo -= 0.5;
    gHi += 0.5;
  }
  const pad = (gHi - gLo) * 0.05;
  gLo -= pad;
  gHi += pad;

  const innerTop = laneTop + LANE_PAD;
  const innerHeight = Math.max(1, laneHeight - 2 * LANE_PAD);
  const yFor = (g: number): number =>
    innerTop + ((gHi - g) / (gHi - gLo)) * innerHeight;

  const points: LanePoint[] = [];
  for (let k = first; k < last; k += 1) {
    points.push({
      x: xForTime(series.t_ms[k]!, zoom, width),
      tMs: series.t_ms[k]!,
      gMin: series.min_g[k]!,
      gMax: series.max_g[k]!,
      yTop: yFor(series.max_g[k]!),
      yBottom: yFor(series.min_g[k]!),
    });
  }
  return {
    sensorId: series.sensor_id,
    index,
    top: laneTop,
    height: laneHeight,
    gLo,
    gHi,
    points,
  };
}

export function buildDrawModel(
  streams: StreamSeries[],
  stateChanges: StateChangeOut[],
  labels: LabelOut[],
  view: ViewWindow,
  width: number,
  height: number,
): DrawModel {
  const zoom = view.zoom;
  const laneHeight = streams.length > 0 ? height / streams.length : height;
  const lanes = streams.map((series, i) =>
    buildLane(series, i, i * laneHeight, laneHeight, zoom, width),
  );

  const laneBySensor = new Map(lanes.map((lane) => [lane.sensorId, lane.index]));
  const markers: Marker[] = [];
  for (const change of stateChanges) {
    if (change.t_ms < zoom.t0 || change.t_ms > zoom.t1) {
      continue;
    }
    markers.push({
      x: xForTime(change.t_ms, zoom, width),
      tMs: change.t_ms,
      classId: change.class_id,
      sensorId: change.sensor,
      laneIndex: laneBySensor.get(change.sensor) ?? 0,
    });
  }

  const bands: Band[] = [];
  for (const label of labels) {
    if (label.t_end_ms <= zoom.t0 || label.t_start_ms >= zoom.t1) {
      continue;
    }
    bands.push({
      x0: Math.max(0, xForTime(label.t_start_ms, zoom, width)),
      x1: Math.min(width, xForTime(label.t_end_ms, zoom, width)),
      classId: label.class_id,
      labelId: label.label_id,
      tStartMs: label.t_start_ms,
      tEndMs: label.t_end_ms,
      source: label.source,
    });
  }

  let cursorX: number | null = null;
  if (
    view.cursorMs !== null &&
    view.cursorMs >= zoom.t0 &&
    view.cursorMs <= zoom.t1
  ) {
    cursorX = xForTime(view.cursorMs, zoom, width);
  }

  return { width, height, lanes, markers, bands, cursorX };
}

// The label whose band contains the cursor. Bands of different classes
// may overlap; the one whose onset is nearest the cursor wins, and an
// exact onset tie falls back to the lowest class id so the choice is
// deterministic.
export function labelUnderCursor(
  labels: LabelOut[],
  cursorMs: number,
): LabelOut | null {
  let best: LabelOut | null = null;
  for (const label of labels) {
    if (cursorMs < label.t_start_ms || cursorMs >= label.t_end_ms) {
      continue;
    }
    if (
      best === null ||
      label.t_start_ms > best.t_start_ms ||
      (label.t_start_ms === best.t_start_ms && label.class_id < best.class_id)
    ) {
      best = label;
    }
  }
  return best;
}

// Stable class palette: golden-angle hue walk keeps neighboring class
// ids visually distinct; class 0 (the no-intention class) stays gray.
export function classColor(classId: number): string {
  if (classId === 0) {
    return "hsl(0, 0%, 55%)";
  }
  const hue = Math.round((classId * 137.508) % 360);
  return `hsl(${hue}, 65%, 52%)`;
}
