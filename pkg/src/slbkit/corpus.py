"""Reading corpus directories (generated or hand-assembled).

Layout per recording id RID:
    RID.<sensor>.jsonl      weight streams
    RID.frames.jsonl        camera frame index (optional)
    groundtruth.RID.json    exact truth sidecar (generated corpora only)
    labels/RID.labels.json  intention labels
    manifest.json           scenario config and file list (generated corpora)
"""

from __future__ import annotations

import json
from pathlib import Path

from .core import (
    FrameIndex,
    LabelFile,
    ParseError,
    PartCatalog,
    Recording,
    load_labels,
    parse_frame_index,
    parse_sensor_stream,
    align_recording,
)
from .synthgen import GroundTruth, ScenarioConfig, ground_truth_from_dict


def load_manifest(corpus_dir: str | Path) -> dict | None:
    path = Path(corpus_dir) / "manifest.json"
    if not path.exists():
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc


def scenario_from_manifest(corpus_dir: str | Path) -> ScenarioConfig | None:
    manifest = load_manifest(corpus_dir)
    if manifest is None or "config" not in manifest:
        return None
    return ScenarioConfig.from_dict(manifest["config"])


def catalog_for_corpus(corpus_dir: str | Path) -> PartCatalog | None:
    scenario = scenario_from_manifest(corpus_dir)
    return scenario.catalog if scenario is not None else None


def list_recording_ids(corpus_dir: str | Path) -> list[str]:
    """Recording ids from the manifest, or by scanning stream files."""
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    if manifest is not None and "recordings" in manifest:
        return [entry["recording_id"] for entry in manifest["recordings"]]
    ids = set()
    for path in corpus_dir.glob("*.jsonl"):
        stem_parts = path.name.split(".")
        if len(stem_parts) == 3:
            ids.add(stem_parts[0])
    return sorted(ids)


def stream_files_for(corpus_dir: Path, recording_id: str) -> dict[str, Path]:
    """Map sensor_id to stream file; frames files are excluded."""
    out = {}
    for path in sorted(corpus_dir.glob(f"{recording_id}.*.jsonl")):
        parts = path.name.split(".")
        if len(parts) != 3:
            continue
        _, sensor_id, _ = parts
        if sensor_id == "frames":
            continue
        out[sensor_id] = path
    return out


def load_recording(corpus_dir: str | Path, recording_id: str) -> tuple[Recording, list[str]]:
    """Parse and align one recording; returns (recording, warnings)."""
    corpus_dir = Path(corpus_dir)
    stream_files = stream_files_for(corpus_dir, recording_id)
    if not stream_files:
        raise FileNotFoundError(f"no streams for recording {recording_id} in {corpus_dir}")
    streams = [
        parse_sensor_stream(path, sensor_id)
        for sensor_id, path in sorted(stream_files.items())
    ]
    frames_path = corpus_dir / f"{recording_id}.frames.jsonl"
    if frames_path.exists():
        frames = parse_frame_index(frames_path)
    else:
        frames = FrameIndex(entries=())
    return align_recording(recording_id, streams, frames)


def ground_truth_path(corpus_dir: str | Path, recording_id: str) -> Path:
    return Path(corpus_dir) / f"groundtruth.{recording_id}.json"


def load_ground_truth(corpus_dir: str | Path, recording_id: str) -> GroundTruth:
    path = ground_truth_path(corpus_dir, recording_id)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    return ground_truth_from_dict(doc)


def labels_path(labels_dir: str | Path, recording_id: str) -> Path:
    return Path(labels_dir) / f"{recording_id}.labels.json"


def load_labels_for(
    labels_dir: str | Path, recording_id: str, d_ms: int = 4000
) -> LabelFile | None:
    path = labels_path(labels_dir, recording_id)
    if not path.exists():
        return None
    return load_labels(path, d_ms)
