"""Core domain types and file formats for weight-sensor assembly recordings.

A recording is a set of weight streams (one per load-cell tray), an optional
camera frame index, and intention labels.  All timestamps are integer
milliseconds relative to the recording start; alignment rebases raw device
clocks onto that shared timeline.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

DEFAULT_INTENTION_MS = 4000

LABEL_SOURCES = ("manual", "slb")


class SlbError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SlbError):
    """A file could not be parsed; message names the file and line."""


class IntegrityError(SlbError):
    """Data is parseable but violates a consistency rule (e.g. clock fault)."""


class ValidationError(SlbError):
    """A domain object violates its invariants."""


class ConfigError(SlbError):
    """A configuration value is out of range or inconsistent."""


@dataclass(frozen=True)
class Sample:
    t_ms: int
    grams: float


@dataclass(frozen=True)
class SensorStream:
    sensor_id: str
    samples: tuple[Sample, ...]

    def __post_init__(self):
        if not self.sensor_id:
            raise ValidationError("sensor_id must be non-empty")
        for a, b in zip(self.samples, self.samples[1:]):
            if b.t_ms <= a.t_ms:
                raise ValidationError(
                    f"sensor {self.sensor_id}: timestamps not strictly increasing "
                    f"at t={b.t_ms}"
                )

    def t_values(self) -> list[int]:
        return [s.t_ms for s in self.samples]

    def g_values(self) -> list[float]:
        return [s.grams for s in self.samples]


@dataclass(frozen=True)
class FrameEntry:
    t_ms: int
    frame: int


@dataclass(frozen=True)
class FrameIndex:
    entries: tuple[FrameEntry, ...]

    def __post_init__(self):
        for a, b in zip(self.entries, self.entries[1:]):
            if b.t_ms < a.t_ms:
                raise ValidationError(f"frame timestamps decrease at t={b.t_ms}")
            if b.frame <= a.frame:
                raise ValidationError(f"frame numbers not strictly increasing at frame={b.frame}")


@dataclass(frozen=True)
class Recording:
    recording_id: str
    streams: tuple[SensorStream, ...]
    frames: FrameIndex
    duration_ms: int

    def __post_init__(self):
        if not self.streams:
            raise ValidationError(f"recording {self.recording_id}: needs at least one stream")
        for stream in self.streams:
            if stream.samples and stream.samples[0].t_ms < 0:
                raise ValidationError(
                    f"recording {self.recording_id}: negative timestamp in {stream.sensor_id}"
                )
            if stream.samples and stream.samples[-1].t_ms > self.duration_ms:
                raise ValidationError(
                    f"recording {self.recording_id}: duration_ms shorter than stream "
                    f"{stream.sensor_id}"
                )

    def stream(self, sensor_id: str) -> SensorStream:
        for s in self.streams:
            if s.sensor_id == sensor_id:
                return s
        raise KeyError(sensor_id)

    @property
    def sensor_ids(self) -> list[str]:
        return [s.sensor_id for s in self.streams]


@dataclass(frozen=True)
class IntentionLabel:
    class_id: int
    t_start_ms: int
    t_end_ms: int
    source: str = "manual"

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"class_id must be >= 0, got {self.class_id}")
        if self.t_end_ms <= self.t_start_ms:
            raise ValidationError(
                f"label window empty or reversed: [{self.t_start_ms}, {self.t_end_ms}]"
            )
        if self.source not in LABEL_SOURCES:
            raise ValidationError(f"unknown label source {self.source!r}")

    @property
    def duration_ms(self) -> int:
        return self.t_end_ms - self.t_start_ms


@dataclass(frozen=True)
class Part:
    class_id: int
    name: str
    sensor_id: str
    expected_delta_g: float
    tolerance_g: float

    def __post_init__(self):
        if self.class_id < 1:
            raise ValidationError(f"part class_id must be >= 1, got {self.class_id}")
        if self.expected_delta_g == 0:
            raise ValidationError(f"part {self.name}: expected_delta_g must be nonzero")
        if self.tolerance_g <= 0:
            raise ValidationError(f"part {self.name}: tolerance_g must be positive")


@dataclass(frozen=True)
class PartCatalog:
    parts: tuple[Part, ...]

    def __post_init__(self):
        seen = set()
        for p in self.parts:
            if p.class_id in seen:
                raise ValidationError(f"duplicate class_id {p.class_id} in catalog")
            seen.add(p.class_id)

    @property
    def class_ids(self) -> list[int]:
        return sorted(p.class_id for p in self.parts)

    @property
    def n_classes(self) -> int:
        """Highest class_id; class 0 is reserved for non-intention."""
        return max((p.class_id for p in self.parts), default=0)

    def parts_for_sensor(self, sensor_id: str) -> list[Part]:
        return [p for p in self.parts if p.sensor_id == sensor_id]

    def part(self, class_id: int) -> Part:
        for p in self.parts:
            if p.class_id == class_id:
                return p
        raise KeyError(class_id)


@dataclass(frozen=True)
class AnnotationMetrics:
    state_durations_ms: tuple[int, ...]
    intervals_between_states_ms: tuple[int, ...]
    pre_intention_padding_ms: tuple[int, ...]
    post_intention_padding_ms: tuple[int, ...]
    anomalies: tuple[str, ...]


def _parse_jsonl(path: str | Path, required: dict[str, type]):
    """Yield (line_no, record) for each line, enforcing required typed keys."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{line_no}: expected an object")
            for key, kind in required.items():
                if key not in record:
                    raise ParseError(f"{path}:{line_no}: missing key {key!r}")
                value = record[key]
                if kind is float:
                    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                else:
                    ok = isinstance(value, kind) and not isinstance(value, bool)
                if not ok:
                    raise ParseError(
                        f"{path}:{line_no}: key {key!r} has wrong type "
                        f"({type(value).__name__})"
                    )
            yield line_no, record


def parse_sensor_stream(path: str | Path, sensor_id: str) -> SensorStream:
    """Read one weight stream from a line-delimited JSON file.

    Out-of-order samples are sorted.  Exact duplicate lines collapse to one
    sample; two samples sharing t_ms with different grams indicate a clock
    fault and raise IntegrityError.
    """
    by_t: dict[int, float] = {}
    for line_no, record in _parse_jsonl(path, {"t_ms": int, "grams": float}):
        t = record["t_ms"]
        g = float(record["grams"])
        if t in by_t and by_t[t] != g:
            raise IntegrityError(
                f"{path}:{line_no}: two samples at t={t} with different grams "
                f"({by_t[t]} vs {g})"
            )
        by_t[t] = g
    if not by_t:
        raise ParseError(f"{path}: stream is empty")
    samples = tuple(Sample(t, by_t[t]) for t in sorted(by_t))
    return SensorStream(sensor_id=sensor_id, samples=samples)


def parse_frame_index(path: str | Path) -> FrameIndex:
    """Read a camera frame index (gaps from lost frames are allowed)."""
    entries = []
    for _, record in _parse_jsonl(path, {"t_ms": int, "frame": int}):
        entries.append(FrameEntry(record["t_ms"], record["frame"]))
    entries.sort(key=lambda e: (e.t_ms, e.frame))
    return FrameIndex(entries=tuple(entries))


def _merge_intervals(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _overlap_with(span: tuple[int, int], others: list[tuple[int, int]]) -> int:
    total = 0
    for lo, hi in _merge_intervals(others):
        total += max(0, min(span[1], hi) - max(span[0], lo))
    return total


def align_recording(
    recording_id: str,
    streams: list[SensorStream],
    frames: FrameIndex,
) -> tuple[Recording, list[str]]:
    """Rebase device clocks so the earliest sample across streams sits at 0.

    The frame index shares the stream offset.  Returns the recording plus
    warnings; a stream whose span overlaps the union of the other streams
    by less than half the recording duration is flagged as clock-skew
    suspect rather than rejected.
    """
    if not streams:
        raise ValidationError(f"recording {recording_id}: no streams to align")
    for stream in streams:
        if not stream.samples:
            raise ValidationError(f"recording {recording_id}: stream {stream.sensor_id} is empty")
    offset = min(s.samples[0].t_ms for s in streams)

    rebased = []
    for stream in streams:
        samples = tuple(Sample(s.t_ms - offset, s.grams) for s in stream.samples)
        rebased.append(SensorStream(sensor_id=stream.sensor_id, samples=samples))
    entries = tuple(FrameEntry(e.t_ms - offset, e.frame) for e in frames.entries)
    frames = FrameIndex(entries=entries)

    duration = max(s.samples[-1].t_ms for s in rebased)
    if entries:
        duration = max(duration, entries[-1].t_ms)

    warnings = []
    if len(rebased) > 1 and duration > 0:
        spans = [(s.samples[0].t_ms, s.samples[-1].t_ms) for s in rebased]
        for i, stream in enumerate(rebased):
            others = [spans[j] for j in range(len(spans)) if j != i]
            overlap = _overlap_with(spans[i], others)
            if overlap < 0.5 * duration:
                warnings.append(
                    f"sensor {stream.sensor_id} overlaps other streams for only "
                    f"{overlap} ms of {duration} ms; check device clocks"
                )

    recording = Recording(
        recording_id=recording_id,
        streams=tuple(rebased),
        frames=frames,
        duration_ms=duration,
    )
    return recording, warnings


def validate_labels(
    labels: list[IntentionLabel],
    duration_ms: int,
    d_ms: int = DEFAULT_INTENTION_MS,
) -> None:
    """Check the fixed-length and bounds rules for a label set.

    Every label must span exactly d_ms, lie inside [0, duration_ms], and
    labels of the same class must not overlap each other.
    """
    for lab in labels:
        if lab.duration_ms != d_ms:
            raise ValidationError(
                f"label class {lab.class_id} at {lab.t_start_ms}: length "
                f"{lab.duration_ms} ms, expected {d_ms} ms"
            )
        if lab.t_start_ms < 0 or lab.t_end_ms > duration_ms:
            raise ValidationError(
                f"label class {lab.class_id} at {lab.t_start_ms}: outside "
                f"[0, {duration_ms}]"
            )
    by_class: dict[int, list[IntentionLabel]] = {}
    for lab in labels:
        by_class.setdefault(lab.class_id, []).append(lab)
    for class_id, group in by_class.items():
        group = sorted(group, key=lambda l: l.t_start_ms)
        for a, b in zip(group, group[1:]):
            if b.t_start_ms < a.t_end_ms:
                raise ValidationError(
                    f"overlapping labels for class {class_id} at "
                    f"{a.t_start_ms} and {b.t_start_ms}"
                )


@dataclass(frozen=True)
class LabelFile:
    recording_id: str
    duration_ms: int
    labels: tuple[IntentionLabel, ...]


def load_labels(path: str | Path, d_ms: int = DEFAULT_INTENTION_MS) -> LabelFile:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    for key in ("recording_id", "duration_ms", "labels"):
        if key not in doc:
            raise ParseError(f"{path}: missing key {key!r}")
    labels = []
    for i, entry in enumerate(doc["labels"]):
        try:
            labels.append(
                IntentionLabel(
                    class_id=int(entry["class_id"]),
                    t_start_ms=int(entry["t_start_ms"]),
                    t_end_ms=int(entry["t_end_ms"]),
                    source=entry.get("source", "manual"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad label entry {i}: {exc}") from exc
    validate_labels(labels, int(doc["duration_ms"]), d_ms)
    return LabelFile(
        recording_id=str(doc["recording_id"]),
        duration_ms=int(doc["duration_ms"]),
        labels=tuple(labels),
    )


def save_labels(
    labels: list[IntentionLabel] | tuple[IntentionLabel, ...],
    path: str | Path,
    recording_id: str,
    duration_ms: int,
    d_ms: int = DEFAULT_INTENTION_MS,
) -> None:
    """Validate and atomically write a label file."""
    labels = list(labels)
    validate_labels(labels, duration_ms, d_ms)
    doc = {
        "recording_id": recording_id,
        "duration_ms": duration_ms,
        "labels": [
            {
                "class_id": lab.class_id,
                "t_start_ms": lab.t_start_ms,
                "t_end_ms": lab.t_end_ms,
                "source": lab.source,
            }
            for lab in labels
        ],
    }
    atomic_write_json(path, doc)


def compute_annotation_metrics(
    recording: Recording,
    labels: list[IntentionLabel],
    state_changes: list,
) -> AnnotationMetrics:
    """Timing statistics relating labels to observed state changes.

    state_changes may be detector output or ground truth; only t_ms and
    class_id are read.  A state change with class_id None matches labels of
    any class when computing post-intention padding.
    """
    changes = sorted(state_changes, key=lambda c: c.t_ms)
    times = [c.t_ms for c in changes]

    intervals = tuple(b - a for a, b in zip(times, times[1:]))
    if times:
        durations = (times[0],) + intervals + (recording.duration_ms - times[-1],)
    else:
        durations = (recording.duration_ms,)

    pre = []
    post = []
    anomalies = []
    for lab in sorted(labels, key=lambda l: l.t_start_ms):
        previous = [t for t in times if t <= lab.t_start_ms]
        pre.append(lab.t_start_ms - (previous[-1] if previous else 0))

        following = [
            c
            for c in changes
            if c.t_ms >= lab.t_end_ms
            and (c.class_id is None or c.class_id == lab.class_id)
        ]
        if following:
            post.append(following[0].t_ms - lab.t_end_ms)
        else:
            anomalies.append(
                f"label class {lab.class_id} ending at {lab.t_end_ms} has no "
                f"subsequent state change"
            )

    return AnnotationMetrics(
        state_durations_ms=durations,
        intervals_between_states_ms=intervals,
        pre_intention_padding_ms=tuple(pre),
        post_intention_padding_ms=tuple(post),
        anomalies=tuple(anomalies),
    )


def load_part_catalog(path: str | Path) -> PartCatalog:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    if "parts" not in doc:
        raise ParseError(f"{path}: missing key 'parts'")
    parts = []
    for i, entry in enumerate(doc["parts"]):
        try:
            parts.append(
                Part(
                    class_id=int(entry["class_id"]),
                    name=str(entry["name"]),
                    sensor_id=str(entry["sensor_id"]),
                    expected_delta_g=float(entry["expected_delta_g"]),
                    tolerance_g=float(entry["tolerance_g"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad part entry {i}: {exc}") from exc
    return PartCatalog(parts=tuple(parts))


def catalog_to_dict(catalog: PartCatalog) -> dict:
    return {
        "parts": [
            {
                "class_id": p.class_id,
                "name": p.name,
                "sensor_id": p.sensor_id,
                "expected_delta_g": p.expected_delta_g,
                "tolerance_g": p.tolerance_g,
            }
            for p in catalog.parts
        ]
    }


def json_dumps_canonical(obj) -> str:
    """Stable JSON encoding used for every file the toolkit writes.

    Sorted keys plus fixed separators make repeated runs byte-identical.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=2) + "\n"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json_dumps_canonical(obj))
