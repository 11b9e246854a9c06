"""HTTP service backing the browser annotation tool.

Serves recordings from a corpus directory and owns the label files.  Label
writes go through a per-recording lock and an atomic temp-file rename, so a
crash mid-write can never leave a half-written file, and every mutation is
durable before the response goes out.  Clients only ever send a class and a
start time; the server anchors the end time so every stored label has the
canonical intention length.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .core import (
    DEFAULT_INTENTION_MS,
    IntentionLabel,
    Recording,
    SlbError,
    save_labels,
    validate_labels,
)
from .corpus import (
    catalog_for_corpus,
    labels_path,
    list_recording_ids,
    load_labels_for,
    load_recording,
)
from .detect import DetectorConfig, DetectorError, detect_state_changes


class LabelRequest(BaseModel):
    class_id: int
    t_start_ms: int


def label_id_for(label: IntentionLabel) -> str:
    # class and start identify a label: same-class duplicates at one start
    # are collapsed on write, so the id is stable across reloads
    return f"{label.class_id}-{label.t_start_ms}"


def downsample_minmax(
    t_values: list[int],
    g_values: list[float],
    points: int,
) -> tuple[list[int], list[float], list[float]]:
    """Min/max preserving bucket downsample onto at most `points` buckets.

    Buckets split the time span evenly; each non-empty bucket reports its
    start time and the true extremes of the samples inside it, so spikes
    survive any zoom level.  Streams at or under the budget pass through.
    """
    n = len(t_values)
    if n <= points:
        return list(t_values), list(g_values), list(g_values)
    t0 = t_values[0]
    span = t_values[-1] - t0
    if span <= 0:
        return [t_values[0]], [min(g_values)], [max(g_values)]
    mins: dict[int, float] = {}
    maxs: dict[int, float] = {}
    for t, g in zip(t_values, g_values):
        bucket = (t - t0) * points // span
        if bucket >= points:
            bucket = points - 1
        if bucket not in mins or g < mins[bucket]:
            mins[bucket] = g
        if bucket not in maxs or g > maxs[bucket]:
            maxs[bucket] = g
    out_t, out_min, out_max = [], [], []
    for bucket in sorted(mins):
        out_t.append(t0 + bucket * span // points)
        out_min.append(mins[bucket])
        out_max.append(maxs[bucket])
    return out_t, out_min, out_max


class _CorpusState:
    def __init__(
        self,
        corpus_dir: Path,
        labels_dir: Path,
        detector: DetectorConfig,
        d_ms: int,
    ):
        self.corpus_dir = corpus_dir
        self.labels_dir = labels_dir
        self.detector = detector
        self.d_ms = d_ms
        self.catalog = catalog_for_corpus(corpus_dir)
        self._cache: dict[str, tuple[Recording, list[str], list, str | None]] = {}
        self._cache_lock = threading.Lock()
        self._label_locks: dict[str, threading.Lock] = {}

    def label_lock(self, rid: str) -> threading.Lock:
        with self._cache_lock:
            if rid not in self._label_locks:
                self._label_locks[rid] = threading.Lock()
            return self._label_locks[rid]

    def analysis(self, rid: str):
        """(recording, warnings, state_changes, detector_error), cached."""
        with self._cache_lock:
            cached = self._cache.get(rid)
        if cached is not None:
            return cached
        recording, warnings = load_recording(self.corpus_dir, rid)
        changes: list = []
        detector_error: str | None = None
        try:
            changes = detect_state_changes(recording, self.catalog, self.detector)
        except DetectorError as exc:
            detector_error = str(exc)
        result = (recording, warnings, changes, detector_error)
        with self._cache_lock:
            self._cache[rid] = result
        return result

    def load_label_list(self, rid: str) -> list[IntentionLabel]:
        label_file = load_labels_for(self.labels_dir, rid, self.d_ms)
        if label_file is None:
            return []
        return list(label_file.labels)

    def store_labels(self, rid: str, duration_ms: int, labels: list[IntentionLabel]) -> None:
        save_labels(
            labels,
            labels_path(self.labels_dir, rid),
            recording_id=rid,
            duration_ms=duration_ms,
            d_ms=self.d_ms,
        )


def _labels_payload(rid: str, duration_ms: int, d_ms: int, labels: list[IntentionLabel]) -> dict:
    return {
        "recording_id": rid,
        "duration_ms": duration_ms,
        "d_ms": d_ms,
        "labels": [
            {
                "label_id": label_id_for(lab),
                "class_id": lab.class_id,
                "t_start_ms": lab.t_start_ms,
                "t_end_ms": lab.t_end_ms,
                "source": lab.source,
            }
            for lab in sorted(labels, key=lambda l: (l.t_start_ms, l.class_id))
        ],
    }


def create_app(
    corpus_dir: str | Path,
    labels_dir: str | Path | None = None,
    detector: DetectorConfig | None = None,
    d_ms: int = DEFAULT_INTENTION_MS,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    corpus_dir = Path(corpus_dir)
    if labels_dir is None:
        labels_dir = corpus_dir / "labels"
    state = _CorpusState(
        corpus_dir=corpus_dir,
        labels_dir=Path(labels_dir),
        detector=detector or DetectorConfig(),
        d_ms=d_ms,
    )
    app = FastAPI(title="annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def _recording_or_404(rid: str):
        if rid not in list_recording_ids(state.corpus_dir):
            raise HTTPException(status_code=404, detail=f"unknown recording {rid!r}")
        try:
            return state.analysis(rid)
        except SlbError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

    @app.get("/recordings")
    def get_recordings():
        summaries = []
        invalid = []
        for rid in list_recording_ids(state.corpus_dir):
            try:
                recording, warnings, changes, detector_error = state.analysis(rid)
            except (SlbError, OSError) as exc:
                invalid.append({"recording_id": rid, "error": str(exc)})
                continue
            labels = state.load_label_list(rid)
            counts = {"manual": 0, "slb": 0}
            for lab in labels:
                counts[lab.source] += 1
            summaries.append(
                {
                    "recording_id": rid,
                    "duration_ms": recording.duration_ms,
                    "sensors": recording.sensor_ids,
                    "n_labels": len(labels),
                    "label_counts": counts,
                    "n_state_changes": None if detector_error else len(changes),
                    "warnings": warnings,
                }
            )
        classes = []
        if state.catalog is not None:
            classes = [
                {"class_id": p.class_id, "name": p.name, "sensor_id": p.sensor_id}
                for p in sorted(state.catalog.parts, key=lambda p: p.class_id)
            ]
        return {"recordings": summaries, "invalid": invalid, "classes": classes}

    @app.get("/recordings/{rid}/streams")
    def get_streams(rid: str, points: int = Query(default=2000, ge=1, le=200000)):
        recording, warnings, changes, detector_error = _recording_or_404(rid)
        streams = []
        for stream in recording.streams:
            t_out, min_out, max_out = downsample_minmax(
                stream.t_values(), stream.g_values(), points
            )
            streams.append(
                {
                    "sensor_id": stream.sensor_id,
                    "n_samples": len(stream.samples),
                    "t_ms": t_out,
                    "min_g": min_out,
                    "max_g": max_out,
                }
            )
        return {
            "recording_id": rid,
            "duration_ms": recording.duration_ms,
            "streams": streams,
            "state_changes": [
                {
                    "t_ms": c.t_ms,
                    "sensor": c.sensor_id,
                    "delta_g": c.delta_g,
                    "class_id": c.class_id,
                }
                for c in changes
            ],
            "detector_error": detector_error,
            "warnings": warnings,
        }

    @app.get("/recordings/{rid}/frames")
    def get_frames(rid: str):
        recording, _, _, _ = _recording_or_404(rid)
        return {
            "recording_id": rid,
            "entries": [
                {"t_ms": e.t_ms, "frame": e.frame} for e in recording.frames.entries
            ],
        }

    @app.get("/recordings/{rid}/labels")
    def get_labels(rid: str):
        recording, _, _, _ = _recording_or_404(rid)
        labels = state.load_label_list(rid)
        return _labels_payload(rid, recording.duration_ms, state.d_ms, labels)

    @app.post("/recordings/{rid}/labels")
    def post_label(rid: str, request: LabelRequest):
        recording, _, _, _ = _recording_or_404(rid)
        if state.catalog is not None and request.class_id > state.catalog.n_classes:
            raise HTTPException(
                status_code=422,
                detail=f"class_id {request.class_id} outside catalog "
                f"(max {state.catalog.n_classes})",
            )
        if request.class_id < 0:
            raise HTTPException(status_code=422, detail="class_id must be >= 0")
        try:
            new_label = IntentionLabel(
                class_id=request.class_id,
                t_start_ms=request.t_start_ms,
                t_end_ms=request.t_start_ms + state.d_ms,
                source="manual",
            )
        except SlbError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        with state.label_lock(rid):
            labels = state.load_label_list(rid)
            existing_ids = {label_id_for(l) for l in labels}
            if label_id_for(new_label) not in existing_ids:
                prospective = labels + [new_label]
                try:
                    validate_labels(prospective, recording.duration_ms, state.d_ms)
                except SlbError as exc:
                    raise HTTPException(status_code=422, detail=str(exc)) from exc
                state.store_labels(rid, recording.duration_ms, prospective)
                labels = prospective
        return _labels_payload(rid, recording.duration_ms, state.d_ms, labels)

    @app.delete("/recordings/{rid}/labels/{label_id}")
    def delete_label(rid: str, label_id: str):
        recording, _, _, _ = _recording_or_404(rid)
        with state.label_lock(rid):
            labels = state.load_label_list(rid)
            remaining = [l for l in labels if label_id_for(l) != label_id]
            if len(remaining) == len(labels):
                raise HTTPException(status_code=404, detail=f"unknown label {label_id!r}")
            state.store_labels(rid, recording.duration_ms, remaining)
        return _labels_payload(rid, recording.duration_ms, state.d_ms, remaining)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
