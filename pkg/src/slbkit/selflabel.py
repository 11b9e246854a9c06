"""Self-labeling: turn detected state changes into intention labels.

The interaction timing model (ITM) captures, per class, how long a person
typically needs between the end of an intention window and the moment the
tray scale registers the pick.  Fitting needs a small manually labeled
bootstrap set; after that, every detected state change can be projected
back into a fixed-length intention label with no human in the loop.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from .core import (
    DEFAULT_INTENTION_MS,
    IntentionLabel,
    ParseError,
    Recording,
    ValidationError,
    atomic_write_json,
)
from .detect import StateChange
from .prng import Xoshiro256StarStar


@dataclass(frozen=True)
class ClassTiming:
    tau_ms: int
    spread_ms: int
    count: int


@dataclass(frozen=True)
class ItmModel:
    d_ms: int
    global_tau_ms: int
    classes: dict[int, ClassTiming]

    def tau_for(self, class_id: int) -> int:
        timing = self.classes.get(class_id)
        return timing.tau_ms if timing is not None else self.global_tau_ms


def _median_int(values: list[int]) -> int:
    return int(round(statistics.median(values)))


def fit_itm(
    pairs: list[tuple[IntentionLabel, StateChange]],
    d_ms: int = DEFAULT_INTENTION_MS,
) -> tuple[ItmModel, list[tuple[IntentionLabel, StateChange]]]:
    """Fit per-class reaction gaps from (label, state change) pairs.

    tau is the median gap, spread the median absolute deviation, and the
    global tau pools every accepted gap for classes unseen at fit time.
    Pairs whose label does not end strictly before its state change are
    rejected and returned alongside the model.
    """
    if not pairs:
        raise ValidationError("cannot fit timing model from an empty pair set")
    rejected = []
    gaps_by_class: dict[int, list[int]] = {}
    all_gaps: list[int] = []
    for label, change in pairs:
        if change.class_id is not None and change.class_id != label.class_id:
            raise ValidationError(
                f"pair mixes classes: label {label.class_id} vs change {change.class_id}"
            )
        gap = change.t_ms - label.t_end_ms
        if gap <= 0:
            rejected.append((label, change))
            continue
        gaps_by_class.setdefault(label.class_id, []).append(gap)
        all_gaps.append(gap)
    if not all_gaps:
        raise ValidationError("every pair was rejected; no usable gaps to fit")

    classes = {}
    for class_id, gaps in sorted(gaps_by_class.items()):
        med = statistics.median(gaps)
        mad = statistics.median([abs(g - med) for g in gaps])
        classes[class_id] = ClassTiming(
            tau_ms=int(round(med)),
            spread_ms=int(round(mad)),
            count=len(gaps),
        )
    model = ItmModel(
        d_ms=d_ms,
        global_tau_ms=_median_int(all_gaps),
        classes=classes,
    )
    return model, rejected


def save_itm(model: ItmModel, path: str | Path) -> None:
    doc = {
        "D_ms": model.d_ms,
        "global_tau_ms": model.global_tau_ms,
        "classes": {
            str(class_id): {
                "tau_ms": t.tau_ms,
                "spread_ms": t.spread_ms,
                "count": t.count,
            }
            for class_id, t in model.classes.items()
        },
    }
    atomic_write_json(path, doc)


def load_itm(path: str | Path) -> ItmModel:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    try:
        classes = {
            int(cid): ClassTiming(
                tau_ms=int(entry["tau_ms"]),
                spread_ms=int(entry["spread_ms"]),
                count=int(entry["count"]),
            )
            for cid, entry in doc["classes"].items()
        }
        return ItmModel(
            d_ms=int(doc["D_ms"]),
            global_tau_ms=int(doc["global_tau_ms"]),
            classes=classes,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad timing model: {exc}") from exc


def pair_labels_to_changes(
    labels: list[IntentionLabel],
    state_changes: list[StateChange],
) -> tuple[list[tuple[IntentionLabel, StateChange]], list[IntentionLabel], list[StateChange]]:
    """Associate each label with its earliest same-class change.

    A label claims the first unclaimed change of its class that occurs
    after the label ends and before the next same-class label starts.
    Returns (pairs, unpaired_labels, unpaired_changes).
    """
    pairs = []
    used = set()
    unpaired_labels = []
    by_class_labels: dict[int, list[IntentionLabel]] = {}
    for lab in sorted(labels, key=lambda l: l.t_start_ms):
        by_class_labels.setdefault(lab.class_id, []).append(lab)
    changes_sorted = sorted(
        enumerate(state_changes), key=lambda item: (item[1].t_ms, item[1].sensor_id)
    )

    for class_id, class_labels in sorted(by_class_labels.items()):
        for pos, lab in enumerate(class_labels):
            next_start = (
                class_labels[pos + 1].t_start_ms if pos + 1 < len(class_labels) else None
            )
            match = None
            for idx, ch in changes_sorted:
                if idx in used or ch.class_id != class_id:
                    continue
                if ch.t_ms <= lab.t_end_ms:
                    continue
                if next_start is not None and ch.t_ms >= next_start:
                    continue
                match = (idx, ch)
                break
            if match is None:
                unpaired_labels.append(lab)
            else:
                used.add(match[0])
                pairs.append((lab, match[1]))

    unpaired_changes = [ch for idx, ch in changes_sorted if idx not in used]
    pairs.sort(key=lambda p: p[0].t_start_ms)
    return pairs, unpaired_labels, unpaired_changes


@dataclass
class SelfLabelResult:
    labels: list[IntentionLabel]
    skipped_unmatched: list[StateChange]
    dropped: list[tuple[StateChange, str]]


def generate_self_labels(
    state_changes: list[StateChange],
    itm: ItmModel,
) -> SelfLabelResult:
    """Project classified state changes back into intention labels.

    Each change of class c becomes a label of length D ending tau(c) before
    the change.  Labels that would start before the recording, swallow
    another state change, or overlap an earlier same-class label are
    dropped and reported rather than emitted.
    """
    if not itm.classes:
        raise ValidationError("timing model has no classes")
    result = SelfLabelResult(labels=[], skipped_unmatched=[], dropped=[])
    ordered = sorted(state_changes, key=lambda c: (c.t_ms, c.sensor_id))
    candidates: list[tuple[StateChange, IntentionLabel]] = []
    for change in ordered:
        if change.class_id is None or change.class_id < 1:
            result.skipped_unmatched.append(change)
            continue
        tau = itm.tau_for(change.class_id)
        t_end = change.t_ms - tau
        t_start = t_end - itm.d_ms
        if t_start < 0:
            result.dropped.append((change, f"label would start at {t_start} ms"))
            continue
        crossing = [
            other
            for other in ordered
            if other is not change and t_start <= other.t_ms <= t_end
        ]
        if crossing:
            result.dropped.append(
                (change, f"label window crosses state change at {crossing[0].t_ms} ms")
            )
            continue
        candidates.append(
            (
                change,
                IntentionLabel(
                    class_id=change.class_id,
                    t_start_ms=t_start,
                    t_end_ms=t_end,
                    source="slb",
                ),
            )
        )

    last_end_by_class: dict[int, int] = {}
    for change, label in sorted(candidates, key=lambda c: c[1].t_start_ms):
        prev_end = last_end_by_class.get(label.class_id)
        if prev_end is not None and label.t_start_ms < prev_end:
            result.dropped.append(
                (change, "label overlaps an earlier self-label of the same class")
            )
            continue
        last_end_by_class[label.class_id] = label.t_end_ms
        result.labels.append(label)

    result.labels.sort(key=lambda l: (l.t_start_ms, l.class_id))
    return result


@dataclass(frozen=True)
class NegativeWindow:
    t_start_ms: int
    t_end_ms: int


@dataclass
class NegativeSampleResult:
    windows: list[NegativeWindow]
    requested: int

    @property
    def shortfall(self) -> int:
        return self.requested - len(self.windows)


def extract_negative_windows(
    recording: Recording,
    labels: list[IntentionLabel],
    count_per_class: int,
    margin_ms: int,
    seed: int,
    d_ms: int = DEFAULT_INTENTION_MS,
) -> NegativeSampleResult:
    """Sample non-intention windows away from every label.

    Labels are expanded by margin_ms on both sides and the windows are drawn
    from the remaining gaps.  The request is count_per_class windows for
    each distinct positive class present in labels; if the free time cannot
    hold that many, the result carries the shortfall instead of failing.
    """
    if count_per_class < 0:
        raise ValidationError(f"count_per_class must be >= 0, got {count_per_class}")
    if margin_ms < 0:
        raise ValidationError(f"margin_ms must be >= 0, got {margin_ms}")
    positive_classes = {l.class_id for l in labels if l.class_id >= 1}
    requested = count_per_class * len(positive_classes)
    if requested == 0:
        return NegativeSampleResult(windows=[], requested=0)

    blocked = []
    for lab in labels:
        blocked.append(
            (max(0, lab.t_start_ms - margin_ms), min(recording.duration_ms, lab.t_end_ms + margin_ms))
        )
    blocked.sort()
    merged: list[list[int]] = []
    for lo, hi in blocked:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])

    gaps = []
    cursor = 0
    for lo, hi in merged:
        if lo - cursor >= d_ms:
            gaps.append((cursor, lo))
        cursor = max(cursor, hi)
    if recording.duration_ms - cursor >= d_ms:
        gaps.append((cursor, recording.duration_ms))

    rng = Xoshiro256StarStar(seed)
    slots: list[int] = []
    for lo, hi in gaps:
        capacity = (hi - lo) // d_ms
        slack = (hi - lo) - capacity * d_ms
        jitter = rng.randint(0, slack) if slack > 0 else 0
        for k in range(capacity):
            slots.append(lo + jitter + k * d_ms)

    rng.shuffle(slots)
    chosen = sorted(slots[: min(requested, len(slots))])
    windows = [NegativeWindow(t, t + d_ms) for t in chosen]
    return NegativeSampleResult(windows=windows, requested=requested)


def negatives_to_labels(windows: list[NegativeWindow]) -> list[IntentionLabel]:
    """Negative windows as class-0 labels, for the shared label file format."""
    return [
        IntentionLabel(class_id=0, t_start_ms=w.t_start_ms, t_end_ms=w.t_end_ms, source="slb")
        for w in windows
    ]
