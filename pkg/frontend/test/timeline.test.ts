import { describe, expect, it } from "vitest";

import {
  buildDrawModel,
  classColor,
  labelUnderCursor,
  xForTime,
} from "../src/timeline.js";
import type { LabelOut, StateChangeOut, StreamSeries } from "../src/types.js";

function series(sensorId: string, n: number, stepMs: number): StreamSeries {
  const t_ms: number[] = [];
  const min_g: number[] = [];
  const max_g: number[] = [];
  for (let k = 0; k < n; k += 1) {
    t_ms.push(k * stepMs);
    // Deterministic but irregular envelope values.
    const lo = 400 + ((k * 37) % 101);
    min_g.push(lo);
    max_g.push(lo + ((k * 13) % 29));
  }
  return { sensor_id: sensorId, n_samples: n, t_ms, min_g, max_g };
}

function label(classId: number, startMs: number, labelId?: string): LabelOut {
  return {
    label_id: labelId ?? `${classId}-${startMs}`,
    class_id: classId,
    t_start_ms: startMs,
    t_end_ms: startMs + 4000,
    source: "manual",
  };
}

const FULL_VIEW = { zoom: { t0: 0, t1: 100_000 }, cursorMs: 50_000 };

describe("draw model", () => {
  it("builds one lane per sensor and one band per label", () => {
    const labels = Array.from({ length: 13 }, (_, k) => label(1 + (k % 13), k * 6000));
    const model = buildDrawModel(
      [series("tray_a", 100, 1000), series("tray_b", 100, 1000)],
      [],
      labels,
      FULL_VIEW,
      800,
      400,
    );
    expect(model.lanes.length).toBe(2);
    expect(model.bands.length).toBe(13);
    expect(model.lanes[0]!.top).toBe(0);
    expect(model.lanes[1]!.top).toBe(200);
  });

  it("draws no bands when the window contains no labels", () => {
    const model = buildDrawModel(
      [series("tray_a", 100, 1000)],
      [],
      [label(2, 10_000)],
      { zoom: { t0: 40_000, t1: 60_000 }, cursorMs: null },
      800,
      400,
    );
    expect(model.bands.length).toBe(0);
  });

  it("keeps the service bucket extremes in the lane points", () => {
    // What is drawn must be exactly what the service downsampled: each
    // lane point carries one bucket's min and max, and the pixel rows
    // preserve their order on an upward g axis.
    const payload = series("tray_a", 64, 500);
    const byTime = new Map(
      payload.t_ms.map((t, k) => [t, { lo: payload.min_g[k]!, hi: payload.max_g[k]! }]),
    );
    const model = buildDrawModel(
      [payload],
      [],
      [],
      { zoom: { t0: 0, t1: 63 * 500 }, cursorMs: null },
      640,
      300,
    );
    const lane = model.lanes[0]!;
    expect(lane.points.length).toBe(64);
    for (const point of lane.points) {
      const bucket = byTime.get(point.tMs);
      expect(bucket).toBeDefined();
      expect(point.gMin).toBe(bucket!.lo);
      expect(point.gMax).toBe(bucket!.hi);
      expect(point.yTop).toBeLessThanOrEqual(point.yBottom);
      expect(point.yTop).toBeGreaterThanOrEqual(lane.top);
      expect(point.yBottom).toBeLessThanOrEqual(lane.top + lane.height);
    }
  });

  it("includes one off-screen neighbor so envelopes reach the edges", () => {
    const model = buildDrawModel(
      [series("tray_a", 100, 1000)],
      [],
      [],
      { zoom: { t0: 40_000, t1: 60_000 }, cursorMs: null },
      800,
      400,
    );
    const times = model.lanes[0]!.points.map((p) => p.tMs);
    expect(Math.min(...times)).toBe(39_000);
    expect(Math.max(...times)).toBe(61_000);
  });

  it("places markers in the lane of their sensor and drops hidden ones", () => {
    const changes: StateChangeOut[] = [
      { t_ms: 10_000, sensor: "tray_b", delta_g: -90, class_id: 3 },
      { t_ms: 55_000, sensor: "tray_a", delta_g: -60, class_id: 2 },
      { t_ms: 99_000, sensor: "tray_a", delta_g: -60, class_id: null },
    ];
    const model = buildDrawModel(
      [series("tray_a", 100, 1000), series("tray_b", 100, 1000)],
      changes,
      [],
      { zoom: { t0: 0, t1: 60_000 }, cursorMs: null },
      600,
      400,
    );
    expect(model.markers.length).toBe(2);
    expect(model.markers[0]!.laneIndex).toBe(1);
    expect(model.markers[1]!.laneIndex).toBe(0);
    expect(model.markers[1]!.x).toBe(550);
  });

  it("clips bands to the canvas and maps time linearly", () => {
    expect(xForTime(30_000, { t0: 20_000, t1: 40_000 }, 500)).toBe(250);
    const model = buildDrawModel(
      [series("tray_a", 100, 1000)],
      [],
      [label(1, 18_000), label(2, 38_000)],
      { zoom: { t0: 20_000, t1: 40_000 }, cursorMs: null },
      500,
      300,
    );
    expect(model.bands.length).toBe(2);
    expect(model.bands[0]!.x0).toBe(0);
    expect(model.bands[1]!.x1).toBe(500);
  });

  it("hides the cursor when it is outside the window", () => {
    const streams = [series("tray_a", 100, 1000)];
    const inside = buildDrawModel(streams, [], [], {
      zoom: { t0: 0, t1: 50_000 },
      cursorMs: 25_000,
    }, 500, 300);
    expect(inside.cursorX).toBe(250);
    const outside = buildDrawModel(streams, [], [], {
      zoom: { t0: 0, t1: 50_000 },
      cursorMs: 75_000,
    }, 500, 300);
    expect(outside.cursorX).toBeNull();
  });
});

describe("label under cursor", () => {
  it("finds the containing band with half-open bounds", () => {
    const labels = [label(2, 10_000)];
    expect(labelUnderCursor(labels, 9_999)).toBeNull();
    expect(labelUnderCursor(labels, 10_000)?.label_id).toBe("2-10000");
    expect(labelUnderCursor(labels, 13_999)?.label_id).toBe("2-10000");
    expect(labelUnderCursor(labels, 14_000)).toBeNull();
  });

  it("prefers the band whose onset is nearest the cursor", () => {
    const labels = [label(1, 10_000), label(2, 12_500)];
    expect(labelUnderCursor(labels, 13_000)?.label_id).toBe("2-12500");
    expect(labelUnderCursor(labels, 11_000)?.label_id).toBe("1-10000");
  });

  it("breaks exact onset ties toward the lower class id", () => {
    const labels = [label(5, 10_000), label(3, 10_000)];
    expect(labelUnderCursor(labels, 11_000)?.class_id).toBe(3);
  });

  it("returns null with no labels at all", () => {
    expect(labelUnderCursor([], 1000)).toBeNull();
  });
});

describe("class palette", () => {
  it("is deterministic and distinct for the catalog range", () => {
    const seen = new Set<string>();
    for (let c = 0; c <= 13; c += 1) {
      const color = classColor(c);
      expect(classColor(c)).toBe(color);
      seen.add(color);
    }
    expect(seen.size).toBe(14);
  });

  it("reserves gray for the no-intention class", () => {
    expect(classColor(0)).toContain("0%");
  });
});
