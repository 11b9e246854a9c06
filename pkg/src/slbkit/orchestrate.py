"""Live-session orchestration: windows in, dispatches out.

The session walks a recording through sliding classifier windows, dispatches
the robot when a prediction clears the policy gates, and cross-checks every
detected weight change against what was predicted.  The weight sensors act
as a safeguard: a change whose class was never predicted, or that
contradicts the action in progress, raises an alarm event instead of being
silently absorbed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    ConfigError,
    IntentionLabel,
    ParseError,
    Recording,
    SlbError,
    atomic_write_text,
)
from .detect import StateChange
from .prng import Xoshiro256StarStar, derive_seed
from .robot import ExecutionPath, RobotClient

DEFAULT_STRIDE_MS = 2000


class OrchestrationError(SlbError):
    """Session-level failure (bad stub script, missing path, ...)."""


@dataclass(frozen=True)
class WindowDescriptor:
    index: int
    t_start_ms: int
    t_end_ms: int

    @property
    def duration_ms(self) -> int:
        return self.t_end_ms - self.t_start_ms


def window_stream(
    duration_ms: int,
    d_ms: int = 4000,
    stride_ms: int = DEFAULT_STRIDE_MS,
) -> list[WindowDescriptor]:
    """Sliding windows [k*stride, k*stride + D] fully inside the recording."""
    if d_ms < 1:
        raise ConfigError(f"d_ms must be >= 1, got {d_ms}")
    if stride_ms < 1:
        raise ConfigError(f"stride_ms must be >= 1, got {stride_ms}")
    windows = []
    k = 0
    while k * stride_ms + d_ms <= duration_ms:
        windows.append(
            WindowDescriptor(index=k, t_start_ms=k * stride_ms, t_end_ms=k * stride_ms + d_ms)
        )
        k += 1
    return windows


@dataclass(frozen=True)
class Prediction:
    window: WindowDescriptor
    class_id: int
    confidence: float


def true_class_for_window(
    window: WindowDescriptor,
    labels: list[IntentionLabel],
) -> int:
    """Class of the label covering at least half the window, else 0."""
    best_overlap = 0
    best_class = 0
    for lab in labels:
        overlap = min(window.t_end_ms, lab.t_end_ms) - max(window.t_start_ms, lab.t_start_ms)
        if overlap > best_overlap:
            best_overlap = overlap
            best_class = lab.class_id
    if best_overlap * 2 >= window.duration_ms:
        return best_class
    return 0


@dataclass(frozen=True)
class StubConfig:
    mode: str  # oracle | noisy | scripted
    accuracy: float = 0.83
    n_classes: int = 13
    seed: int = 0
    script_path: str | None = None

    def __post_init__(self):
        if self.mode not in ("oracle", "noisy", "scripted"):
            raise ConfigError(f"unknown classifier mode {self.mode!r}")
        if not (0.0 <= self.accuracy <= 1.0):
            raise ConfigError(f"accuracy must be in [0, 1], got {self.accuracy}")
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.mode == "scripted" and not self.script_path:
            raise ConfigError("scripted mode needs script_path")


class ClassifierStub:
    """Stand-in for the video intention classifier.

    oracle returns the window's true class; noisy returns it with the
    configured probability and otherwise a uniformly drawn wrong class
    (derived per window start, so results do not depend on call order);
    scripted replays (t_start_ms, class_id, confidence) entries from a
    line-delimited JSON file.
    """

    def __init__(self, config: StubConfig, truth_labels: list[IntentionLabel] | None = None):
        self.config = config
        self.truth_labels = truth_labels or []
        self._script: dict[int, tuple[int, float]] | None = None
        if config.mode == "scripted":
            self._script = {}
            path = Path(config.script_path)
            with open(path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                        self._script[int(rec["t_start_ms"])] = (
                            int(rec["class_id"]),
                            float(rec.get("confidence", 1.0)),
                        )
                    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                        raise ParseError(f"{path}:{line_no}: bad script entry: {exc}") from exc

    def classify(self, window: WindowDescriptor) -> Prediction:
        mode = self.config.mode
        if mode == "scripted":
            entry = self._script.get(window.t_start_ms)
            if entry is None:
                raise OrchestrationError(
                    f"script exhausted: no entry for window starting at {window.t_start_ms} ms"
                )
            class_id, confidence = entry
            return Prediction(window=window, class_id=class_id, confidence=confidence)

        true_class = true_class_for_window(window, self.truth_labels)
        if mode == "oracle":
            return Prediction(window=window, class_id=true_class, confidence=1.0)

        # noisy: wrong classes are uniform over all other classes incl. 0
        rng = Xoshiro256StarStar(derive_seed(self.config.seed, window.t_start_ms))
        if rng.random() < self.config.accuracy:
            return Prediction(window=window, class_id=true_class, confidence=0.9)
        wrong = rng.randint(0, self.config.n_classes - 1)
        if wrong >= true_class:
            wrong += 1
        return Prediction(window=window, class_id=wrong, confidence=0.9)


@dataclass(frozen=True)
class SessionPolicy:
    min_confidence: float = 0.5
    debounce_ms: int = 4000
    order_mode: str = "strict"  # strict: next pick only; any: any remaining pick

    def __post_init__(self):
        if not (0.0 <= self.min_confidence <= 1.0):
            raise ConfigError(f"min_confidence must be in [0, 1], got {self.min_confidence}")
        if self.debounce_ms < 0:
            raise ConfigError(f"debounce_ms must be >= 0, got {self.debounce_ms}")
        if self.order_mode not in ("strict", "any"):
            raise ConfigError(f"unknown order_mode {self.order_mode!r}")


@dataclass
class SafeguardState:
    remaining: list[int]
    completed: list[int] = field(default_factory=list)

    def expected_next(self, order_mode: str) -> set[int]:
        if not self.remaining:
            return set()
        if order_mode == "strict":
            return {self.remaining[0]}
        return set(self.remaining)

    def observe(self, class_id: int) -> None:
        if class_id in self.remaining:
            self.remaining.remove(class_id)
        self.completed.append(class_id)


@dataclass
class SessionLog:
    events: list[dict] = field(default_factory=list)

    def add(self, t_ms: int, kind: str, **detail) -> None:
        self.events.append({"t_ms": t_ms, "kind": kind, **detail})

    @property
    def dispatches(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "dispatch"]

    @property
    def alarms(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "alarm"]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(event, sort_keys=True, separators=(",", ":"))
            for event in self.events
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_jsonl())


def run_session(
    recording: Recording,
    state_changes: list[StateChange],
    classifier: ClassifierStub,
    robot: RobotClient | None,
    paths: dict[int, ExecutionPath],
    policy: SessionPolicy = SessionPolicy(),
    sop_order: list[int] | None = None,
    d_ms: int = 4000,
    stride_ms: int = DEFAULT_STRIDE_MS,
) -> SessionLog:
    """Replay a recording through the dispatch loop.

    Prediction events fire at each window's end; detected state changes are
    interleaved by time.  A dispatch requires an intention class, enough
    confidence, the class being an expected next pick, and no repeat of the
    same class within the debounce interval.  With robot None the dispatch
    is logged but not executed (dry run).  Log timestamps are recording
    time, so identical inputs give identical logs.
    """
    if sop_order is None:
        sop_order = sorted(paths.keys())
    log = SessionLog()
    safeguard = SafeguardState(remaining=list(sop_order))

    events: list[tuple[int, int, object]] = []
    for window in window_stream(recording.duration_ms, d_ms, stride_ms):
        events.append((window.t_end_ms, 0, window))
    for change in sorted(state_changes, key=lambda c: (c.t_ms, c.sensor_id)):
        events.append((change.t_ms, 1, change))
    events.sort(key=lambda e: (e[0], e[1]))

    predicted_classes: set[int] = set()
    last_dispatch_t: dict[int, int] = {}
    pending_dispatch: int | None = None

    for t_ms, kind, payload in events:
        if kind == 0:
            window = payload
            try:
                prediction = classifier.classify(window)
            except SlbError as exc:
                log.add(t_ms, "classifier_error", window_start_ms=window.t_start_ms,
                        error=str(exc))
                continue
            log.add(
                t_ms,
                "prediction",
                window_start_ms=window.t_start_ms,
                class_id=prediction.class_id,
                confidence=prediction.confidence,
            )
            if prediction.class_id < 1:
                continue
            if prediction.confidence < policy.min_confidence:
                continue
            predicted_classes.add(prediction.class_id)
            if prediction.class_id not in safeguard.expected_next(policy.order_mode):
                continue
            last_t = last_dispatch_t.get(prediction.class_id)
            if last_t is not None and t_ms - last_t <= policy.debounce_ms:
                log.add(t_ms, "debounced", class_id=prediction.class_id)
                continue
            path = paths.get(prediction.class_id)
            if path is None:
                raise OrchestrationError(f"no execution path for class {prediction.class_id}")
            last_dispatch_t[prediction.class_id] = t_ms
            pending_dispatch = prediction.class_id
            log.add(t_ms, "dispatch", class_id=prediction.class_id,
                    n_setpoints=len(path.setpoints))
            if robot is not None:
                exec_log = robot.execute(path)
                log.add(
                    t_ms,
                    "robot_done",
                    class_id=prediction.class_id,
                    status=exec_log.status,
                    n_completed=len(exec_log.entries),
                )
                if exec_log.status != "ok":
                    log.add(t_ms, "session_failed",
                            reason=f"robot {exec_log.status}: {exec_log.detail}")
                    break
        else:
            change = payload
            log.add(
                t_ms,
                "state_change",
                sensor=change.sensor_id,
                class_id=change.class_id,
                delta_g=change.delta_g,
            )
            if change.class_id is None or change.class_id not in predicted_classes:
                log.add(t_ms, "alarm", alarm="missed_prediction", class_id=change.class_id)
            elif pending_dispatch is not None and change.class_id != pending_dispatch:
                log.add(t_ms, "alarm", alarm="wrong_dispatch",
                        class_id=change.class_id, dispatched=pending_dispatch)
            if pending_dispatch is not None and change.class_id == pending_dispatch:
                pending_dispatch = None
            if change.class_id is not None:
                safeguard.observe(change.class_id)

    log.add(
        recording.duration_ms,
        "session_end",
        n_dispatches=len(log.dispatches),
        n_alarms=len(log.alarms),
        completed=list(safeguard.completed),
    )
    return log
