"""Sustained level-shift detection on weight streams.

The tray scales report a noisy staircase: each picked part removes its
weight from the tray.  The detector smooths the stream, finds indices where
the mean of the next `lookahead` samples differs from the recent baseline by
at least the threshold, and confirms the shift only if the lookahead window
holds that new level.  Short transients (a hand resting on the tray) fail
the hold check and are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    ParseError,
    PartCatalog,
    Recording,
    Sample,
    SensorStream,
    SlbError,
    atomic_write_text,
)

NORMALIZATION_MODES = ("none", "zscore", "minmax")


class DetectorError(SlbError):
    """Stream data unusable for detection (too short, degenerate, ...)."""


@dataclass(frozen=True)
class DetectorConfig:
    smooth_window: int = 15
    lookahead: int = 25
    threshold_g: float = 15.0
    sustain_epsilon_g: float = 8.0
    refractory_ms: int = 1500
    normalization: str = "none"

    def __post_init__(self):
        if self.smooth_window < 1:
            raise ConfigError(f"smooth_window must be >= 1, got {self.smooth_window}")
        if self.smooth_window % 2 == 0:
            raise ConfigError(f"smooth_window must be odd, got {self.smooth_window}")
        if self.lookahead < 1:
            raise ConfigError(f"lookahead must be >= 1, got {self.lookahead}")
        if self.threshold_g <= 0:
            raise ConfigError(f"threshold_g must be positive, got {self.threshold_g}")
        if self.sustain_epsilon_g < 0:
            raise ConfigError(f"sustain_epsilon_g must be >= 0, got {self.sustain_epsilon_g}")
        if self.refractory_ms < 0:
            raise ConfigError(f"refractory_ms must be >= 0, got {self.refractory_ms}")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(f"unknown normalization {self.normalization!r}")

    def to_dict(self) -> dict:
        return {
            "smooth_window": self.smooth_window,
            "lookahead": self.lookahead,
            "threshold_g": self.threshold_g,
            "sustain_epsilon_g": self.sustain_epsilon_g,
            "refractory_ms": self.refractory_ms,
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectorConfig":
        known = {
            "smooth_window",
            "lookahead",
            "threshold_g",
            "sustain_epsilon_g",
            "refractory_ms",
            "normalization",
        }
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown detector config keys: {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "DetectorConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
        return cls.from_dict(doc)


@dataclass(frozen=True)
class StateChange:
    t_ms: int
    sensor_id: str
    delta_g: float
    class_id: int | None
    pre_level_g: float | None = None
    post_level_g: float | None = None


def _normalize_array(values: np.ndarray, mode: str, context: str) -> np.ndarray:
    if mode == "none":
        return values
    if mode == "zscore":
        std = float(values.std())  # population std, ddof=0
        if std == 0.0:
            raise DetectorError(f"{context}: zscore normalization undefined for a constant stream")
        return (values - values.mean()) / std
    if mode == "minmax":
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            return np.zeros_like(values)
        return (values - lo) / (hi - lo)
    raise ConfigError(f"unknown normalization {mode!r}")


def _smooth_array(values: np.ndarray, window: int) -> np.ndarray:
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {window}")
    if window == 1:
        return values.copy()
    half = window // 2
    n = len(values)
    prefix = np.concatenate(([0.0], np.cumsum(values)))
    idx = np.arange(n)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(n, idx + half + 1)
    return (prefix[hi] - prefix[lo]) / (hi - lo)


def normalize(stream: SensorStream, mode: str) -> SensorStream:
    """Rescale a stream; 'zscore' uses the population standard deviation."""
    if mode not in NORMALIZATION_MODES:
        raise ConfigError(f"unknown normalization {mode!r}")
    values = np.array([s.grams for s in stream.samples], dtype=float)
    out = _normalize_array(values, mode, f"sensor {stream.sensor_id}")
    samples = tuple(Sample(s.t_ms, float(v)) for s, v in zip(stream.samples, out))
    return SensorStream(sensor_id=stream.sensor_id, samples=samples)


def smooth(stream: SensorStream, window: int) -> SensorStream:
    """Centered moving average; windows truncate at the stream edges."""
    values = np.array([s.grams for s in stream.samples], dtype=float)
    out = _smooth_array(values, window)
    samples = tuple(Sample(s.t_ms, float(v)) for s, v in zip(stream.samples, out))
    return SensorStream(sensor_id=stream.sensor_id, samples=samples)


def _detect_stream(
    t: np.ndarray,
    values: np.ndarray,
    sensor_id: str,
    config: DetectorConfig,
) -> list[StateChange]:
    w = config.smooth_window
    look = config.lookahead
    n = len(values)
    if n < 2 * (w + look):
        raise DetectorError(
            f"sensor {sensor_id}: {n} samples, need at least {2 * (w + look)} "
            f"for smooth_window={w} lookahead={look}"
        )

    v = _normalize_array(values, config.normalization, f"sensor {sensor_id}")
    v = _smooth_array(v, w)

    prefix = np.concatenate(([0.0], np.cumsum(v)))

    def mean(a: int, b: int) -> float:
        # inclusive index range
        return (prefix[b + 1] - prefix[a]) / (b - a + 1)

    def window_stable(j: int) -> bool:
        seg = v[j - w + 1 : j + 1]
        return float(np.max(np.abs(seg - seg.mean()))) <= config.sustain_epsilon_g

    changes: list[StateChange] = []
    backoff_cap = w + 2 * look
    floor_start = 0  # pre-level windows may not reach into a consumed change
    i = w - 1
    while i <= n - 1 - look:
        pre_local = mean(i - w + 1, i)
        post = mean(i + 1, i + look)
        if abs(post - pre_local) >= config.threshold_g:
            seg = v[i + 1 : i + 1 + look]
            if float(np.max(np.abs(seg - post))) <= config.sustain_epsilon_g:
                # confirmed; back off to the latest stable window so the
                # reported pre-level excludes the smoothed ramp
                j = i
                lowest = max(floor_start + w - 1, i - backoff_cap)
                while j >= lowest and not window_stable(j):
                    j -= 1
                if j < lowest:
                    j = i
                pre_level = mean(j - w + 1, j)
                delta = post - pre_level
                if abs(delta) >= config.threshold_g:
                    changes.append(
                        StateChange(
                            t_ms=int(t[j + 1]),
                            sensor_id=sensor_id,
                            delta_g=float(delta),
                            class_id=None,
                            pre_level_g=float(pre_level),
                            post_level_g=float(post),
                        )
                    )
                    floor_start = i + 1
                    i += look
                    continue
        i += 1

    return _merge_refractory(changes, config.refractory_ms)


def _merge_refractory(changes: list[StateChange], refractory_ms: int) -> list[StateChange]:
    """Coalesce confirmations closer than the refractory gap.

    Distance is measured against the most recent raw confirmation, so a
    burst of fiddling chains into one event.  The merged delta runs from the
    first confirmation's pre-level to the last one's post-level.
    """
    merged: list[StateChange] = []
    last_raw_t = None
    for ch in changes:
        if merged and last_raw_t is not None and ch.t_ms - last_raw_t < refractory_ms:
            first = merged[-1]
            merged[-1] = StateChange(
                t_ms=first.t_ms,
                sensor_id=first.sensor_id,
                delta_g=float(ch.post_level_g - first.pre_level_g),
                class_id=None,
                pre_level_g=first.pre_level_g,
                post_level_g=ch.post_level_g,
            )
        else:
            merged.append(ch)
        last_raw_t = ch.t_ms
    return merged


def _classify(change: StateChange, catalog: PartCatalog | None) -> StateChange:
    if catalog is None:
        return change
    best = None
    for part in catalog.parts_for_sensor(change.sensor_id):
        diff = abs(change.delta_g - part.expected_delta_g)
        key = (diff, part.class_id)
        if best is None or key < best[0]:
            best = (key, part)
    if best is None:
        return change
    (diff, _), part = best
    if diff <= part.tolerance_g:
        return replace(change, class_id=part.class_id)
    return change


def detect_state_changes(
    recording: Recording,
    catalog: PartCatalog | None,
    config: DetectorConfig,
) -> list[StateChange]:
    """Find sustained level shifts on every stream of a recording.

    With normalization 'none' the threshold is in raw grams; otherwise it
    applies in normalized units and catalog matching will usually fail, so
    detected changes come back unmatched.  Changes from all sensors are
    merged into one list ordered by onset time.
    """
    all_changes: list[StateChange] = []
    for stream in recording.streams:
        t = np.array([s.t_ms for s in stream.samples], dtype=np.int64)
        g = np.array([s.grams for s in stream.samples], dtype=float)
        for ch in _detect_stream(t, g, stream.sensor_id, config):
            all_changes.append(_classify(ch, catalog))
    all_changes.sort(key=lambda c: (c.t_ms, c.sensor_id))
    return all_changes


def write_changes_report(changes: list[StateChange], path: str | Path) -> None:
    """Line-delimited JSON report, one state change per line."""
    lines = []
    for ch in changes:
        lines.append(
            json.dumps(
                {
                    "t_ms": ch.t_ms,
                    "sensor": ch.sensor_id,
                    "delta_g": ch.delta_g,
                    "class_id": ch.class_id,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_changes_report(path: str | Path) -> list[StateChange]:
    path = Path(path)
    changes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            try:
                changes.append(
                    StateChange(
                        t_ms=int(rec["t_ms"]),
                        sensor_id=str(rec["sensor"]),
                        delta_g=float(rec["delta_g"]),
                        class_id=None if rec["class_id"] is None else int(rec["class_id"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{line_no}: bad state change entry: {exc}") from exc
    return changes
