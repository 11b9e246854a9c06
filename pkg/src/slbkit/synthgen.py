"""Synthetic assembly recordings with exact ground truth.

Each recording walks the full pick order once: for every part class there
is an intention window, a reaction gap tau, and then a step drop on the
tray scale holding that part.  Weight streams get Gaussian noise and short
benign spikes (a hand brushing the tray); the camera index runs at a fixed
frame rate with occasional lost frames.  All randomness flows through the
portable generator so a (seed, recording index) pair always produces the
same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    FrameEntry,
    FrameIndex,
    IntentionLabel,
    ParseError,
    Part,
    PartCatalog,
    Recording,
    Sample,
    SensorStream,
    align_recording,
    atomic_write_json,
    atomic_write_text,
    catalog_to_dict,
    json_dumps_canonical,
)
from .detect import StateChange
from .prng import Xoshiro256StarStar, derive_seed

DEFAULT_WOOD_PARTS = [
    ("seat", 270.0),
    ("backrest", 240.0),
    ("left_leg", 210.0),
    ("right_leg", 180.0),
    ("front_rail", 150.0),
    ("back_rail", 120.0),
    ("side_rail", 90.0),
    ("armrest", 60.0),
]

DEFAULT_PLASTIC_PARTS = [
    ("connector_a", 170.0),
    ("connector_b", 140.0),
    ("connector_c", 110.0),
    ("connector_d", 80.0),
    ("connector_e", 50.0),
]


def default_catalog() -> PartCatalog:
    """Two-tray catalog: eight wood pieces and five plastic connectors."""
    parts = []
    class_id = 1
    for name, grams in DEFAULT_WOOD_PARTS:
        parts.append(
            Part(
                class_id=class_id,
                name=name,
                sensor_id="wood",
                expected_delta_g=-grams,
                tolerance_g=10.0,
            )
        )
        class_id += 1
    for name, grams in DEFAULT_PLASTIC_PARTS:
        parts.append(
            Part(
                class_id=class_id,
                name=name,
                sensor_id="plastic",
                expected_delta_g=-grams,
                tolerance_g=10.0,
            )
        )
        class_id += 1
    return PartCatalog(parts=tuple(parts))


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    n_recordings: int
    catalog: PartCatalog = field(default_factory=default_catalog)
    sample_rate_hz: int = 50
    noise_sigma_g: float = 2.0
    spike_rate_per_min: float = 2.0
    spike_max_ms: int = 300
    tau_mean_ms: dict[int, int] = field(default_factory=dict)
    tau_jitter_ms: dict[int, int] = field(default_factory=dict)
    tau_jitter_dist: str = "uniform"
    inter_step_gap_ms: tuple[int, int] = (7000, 11000)
    d_ms: int = 4000
    fps: int = 30
    frame_drop_rate: float = 0.01
    tare_g: float = 500.0

    def __post_init__(self):
        if self.n_recordings < 1:
            raise ConfigError(f"n_recordings must be >= 1, got {self.n_recordings}")
        if self.sample_rate_hz < 1:
            raise ConfigError(f"sample_rate_hz must be >= 1, got {self.sample_rate_hz}")
        if self.noise_sigma_g < 0:
            raise ConfigError("noise_sigma_g must be >= 0")
        if self.spike_rate_per_min < 0:
            raise ConfigError("spike_rate_per_min must be >= 0")
        if self.spike_max_ms < 1:
            raise ConfigError("spike_max_ms must be >= 1")
        if self.tau_jitter_dist not in ("uniform", "normal"):
            raise ConfigError(f"unknown tau_jitter_dist {self.tau_jitter_dist!r}")
        if self.d_ms < 1:
            raise ConfigError("d_ms must be >= 1")
        if self.fps < 1:
            raise ConfigError("fps must be >= 1")
        if not (0.0 <= self.frame_drop_rate < 1.0):
            raise ConfigError("frame_drop_rate must be in [0, 1)")
        lo, hi = self.inter_step_gap_ms
        if lo > hi or lo < 0:
            raise ConfigError(f"bad inter_step_gap_ms range ({lo}, {hi})")
        for class_id in self.catalog.class_ids:
            if self.tau_for(class_id) < 1:
                raise ConfigError(f"tau_mean_ms for class {class_id} must be >= 1")
        # the slowest plausible reaction still has to leave room for the
        # intention window between consecutive state changes
        worst = max(self._tau_upper(cid) for cid in self.catalog.class_ids)
        if lo <= self.d_ms + worst:
            raise ConfigError(
                f"inter_step_gap_ms min {lo} cannot fit an intention window "
                f"({self.d_ms} ms) plus the slowest reaction ({worst} ms)"
            )

    def tau_for(self, class_id: int) -> int:
        return self.tau_mean_ms.get(class_id, 2000)

    def jitter_for(self, class_id: int) -> int:
        return self.tau_jitter_ms.get(class_id, 400)

    def _tau_upper(self, class_id: int) -> int:
        jitter = self.jitter_for(class_id)
        if self.tau_jitter_dist == "uniform":
            return self.tau_for(class_id) + jitter
        # normal draws are clamped to four sigma at generation time
        return self.tau_for(class_id) + 4 * jitter

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_recordings": self.n_recordings,
            "catalog": catalog_to_dict(self.catalog),
            "sample_rate_hz": self.sample_rate_hz,
            "noise_sigma_g": self.noise_sigma_g,
            "spike_rate_per_min": self.spike_rate_per_min,
            "spike_max_ms": self.spike_max_ms,
            "tau_mean_ms": {str(k): v for k, v in sorted(self.tau_mean_ms.items())},
            "tau_jitter_ms": {str(k): v for k, v in sorted(self.tau_jitter_ms.items())},
            "tau_jitter_dist": self.tau_jitter_dist,
            "inter_step_gap_ms": list(self.inter_step_gap_ms),
            "d_ms": self.d_ms,
            "fps": self.fps,
            "frame_drop_rate": self.frame_drop_rate,
            "tare_g": self.tare_g,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {
            "seed",
            "n_recordings",
            "catalog",
            "sample_rate_hz",
            "noise_sigma_g",
            "spike_rate_per_min",
            "spike_max_ms",
            "tau_mean_ms",
            "tau_jitter_ms",
            "tau_jitter_dist",
            "inter_step_gap_ms",
            "d_ms",
            "fps",
            "frame_drop_rate",
            "tare_g",
        }
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown scenario config keys: {sorted(extra)}")
        parts = tuple(
            Part(
                class_id=int(p["class_id"]),
                name=str(p["name"]),
                sensor_id=str(p["sensor_id"]),
                expected_delta_g=float(p["expected_delta_g"]),
                tolerance_g=float(p["tolerance_g"]),
            )
            for p in doc["catalog"]["parts"]
        )
        return cls(
            seed=int(doc["seed"]),
            n_recordings=int(doc["n_recordings"]),
            catalog=PartCatalog(parts=parts),
            sample_rate_hz=int(doc.get("sample_rate_hz", 50)),
            noise_sigma_g=float(doc.get("noise_sigma_g", 2.0)),
            spike_rate_per_min=float(doc.get("spike_rate_per_min", 2.0)),
            spike_max_ms=int(doc.get("spike_max_ms", 300)),
            tau_mean_ms={int(k): int(v) for k, v in doc.get("tau_mean_ms", {}).items()},
            tau_jitter_ms={int(k): int(v) for k, v in doc.get("tau_jitter_ms", {}).items()},
            tau_jitter_dist=str(doc.get("tau_jitter_dist", "uniform")),
            inter_step_gap_ms=tuple(doc.get("inter_step_gap_ms", (7000, 11000))),
            d_ms=int(doc.get("d_ms", 4000)),
            fps=int(doc.get("fps", 30)),
            frame_drop_rate=float(doc.get("frame_drop_rate", 0.01)),
            tare_g=float(doc.get("tare_g", 500.0)),
        )


def default_scenario(seed: int, n_recordings: int) -> ScenarioConfig:
    catalog = default_catalog()
    return ScenarioConfig(
        seed=seed,
        n_recordings=n_recordings,
        catalog=catalog,
        tau_mean_ms={cid: 2000 for cid in catalog.class_ids},
        tau_jitter_ms={cid: 400 for cid in catalog.class_ids},
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    return ScenarioConfig.from_dict(doc)


@dataclass(frozen=True)
class GroundTruth:
    recording_id: str
    true_changes: tuple[StateChange, ...]
    true_labels: tuple[IntentionLabel, ...]
    true_taus: tuple[int, ...]
    pairing: tuple[tuple[int, int], ...]
    inter_change_gaps_ms: tuple[int, ...]


def recording_id_for(index: int) -> str:
    return f"rec{index:03d}"


def _draw_tau(rng: Xoshiro256StarStar, mean: int, jitter: int, dist: str) -> int:
    if jitter == 0:
        return mean
    if dist == "uniform":
        return mean + rng.randint(-jitter, jitter)
    raw = int(round(rng.gauss(mean, jitter)))
    return max(1, min(mean + 4 * jitter, max(mean - 4 * jitter, raw)))


def generate_recording(
    config: ScenarioConfig,
    index: int,
) -> tuple[Recording, GroundTruth]:
    """Build one recording; index is 1-based within the scenario."""
    rng = Xoshiro256StarStar(derive_seed(config.seed, index))
    rid = recording_id_for(index)
    class_order = config.catalog.class_ids  # pick order follows class ids
    n_steps = len(class_order)
    gap_lo, gap_hi = config.inter_step_gap_ms

    gaps = [rng.randint(gap_lo, gap_hi) for _ in range(n_steps + 1)]
    change_times = []
    cursor = 0
    for k in range(n_steps):
        cursor += gaps[k]
        change_times.append(cursor)
    duration = cursor + gaps[n_steps]

    taus = [
        _draw_tau(rng, config.tau_for(cid), config.jitter_for(cid), config.tau_jitter_dist)
        for cid in class_order
    ]

    true_changes = []
    true_labels = []
    for cid, t_change, tau in zip(class_order, change_times, taus):
        part = config.catalog.part(cid)
        true_changes.append(
            StateChange(
                t_ms=t_change,
                sensor_id=part.sensor_id,
                delta_g=part.expected_delta_g,
                class_id=cid,
            )
        )
        t_end = t_change - tau
        true_labels.append(
            IntentionLabel(
                class_id=cid,
                t_start_ms=t_end - config.d_ms,
                t_end_ms=t_end,
                source="manual",
            )
        )
    pairing = tuple((k, k) for k in range(n_steps))

    dt = round(1000 / config.sample_rate_hz)
    n_samples = duration // dt + 1
    sample_t = np.arange(n_samples, dtype=np.int64) * dt

    sensor_ids = []
    for part in config.catalog.parts:
        if part.sensor_id not in sensor_ids:
            sensor_ids.append(part.sensor_id)

    streams = []
    for sensor_id in sensor_ids:
        sensor_changes = [
            (t, config.catalog.part(cid).expected_delta_g)
            for cid, t in zip(class_order, change_times)
            if config.catalog.part(cid).sensor_id == sensor_id
        ]
        initial = config.tare_g + sum(-delta for _, delta in sensor_changes)
        change_t = np.array([t for t, _ in sensor_changes], dtype=np.int64)
        deltas = np.array([d for _, d in sensor_changes], dtype=float)
        cumulative = np.concatenate(([0.0], np.cumsum(deltas)))
        # level at sample time t is the tare plus whatever is still on the tray
        level = initial + cumulative[np.searchsorted(change_t, sample_t, side="right")]

        noise = np.array(
            [rng.gauss(0.0, config.noise_sigma_g) for _ in range(n_samples)]
            if config.noise_sigma_g > 0
            else np.zeros(n_samples)
        )
        values = level + noise

        n_spikes = int(round(duration / 60000 * config.spike_rate_per_min))
        for _ in range(n_spikes):
            start = rng.randint(0, max(0, duration - config.spike_max_ms))
            length = rng.randint(1, config.spike_max_ms)
            magnitude = rng.uniform(30.0, 200.0)
            if rng.random() < 0.5:
                magnitude = -magnitude
            mask = (sample_t >= start) & (sample_t < start + length)
            values = values + np.where(mask, magnitude, 0.0)

        samples = tuple(
            Sample(int(t), round(float(v), 3)) for t, v in zip(sample_t, values)
        )
        streams.append(SensorStream(sensor_id=sensor_id, samples=samples))

    entries = []
    frame_no = 0
    while True:
        t = round(frame_no * 1000 / config.fps)
        if t > duration:
            break
        dropped = rng.random() < config.frame_drop_rate
        if not dropped:
            entries.append(FrameEntry(t_ms=t, frame=frame_no))
        frame_no += 1
    frames = FrameIndex(entries=tuple(entries))

    recording, warnings = align_recording(rid, streams, frames)
    if warnings:
        raise ConfigError(f"{rid}: generated recording failed alignment: {warnings[0]}")
    truth = GroundTruth(
        recording_id=rid,
        true_changes=tuple(true_changes),
        true_labels=tuple(true_labels),
        true_taus=tuple(taus),
        pairing=pairing,
        inter_change_gaps_ms=tuple(gaps[1 : n_steps]),
    )
    return recording, truth


def ground_truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "recording_id": truth.recording_id,
        "true_changes": [
            {
                "t_ms": c.t_ms,
                "sensor": c.sensor_id,
                "delta_g": c.delta_g,
                "class_id": c.class_id,
            }
            for c in truth.true_changes
        ],
        "true_labels": [
            {
                "class_id": l.class_id,
                "t_start_ms": l.t_start_ms,
                "t_end_ms": l.t_end_ms,
                "source": l.source,
            }
            for l in truth.true_labels
        ],
        "true_taus": list(truth.true_taus),
        "pairing": [list(p) for p in truth.pairing],
        "inter_change_gaps_ms": list(truth.inter_change_gaps_ms),
    }


def ground_truth_from_dict(doc: dict) -> GroundTruth:
    return GroundTruth(
        recording_id=str(doc["recording_id"]),
        true_changes=tuple(
            StateChange(
                t_ms=int(c["t_ms"]),
                sensor_id=str(c["sensor"]),
                delta_g=float(c["delta_g"]),
                class_id=None if c["class_id"] is None else int(c["class_id"]),
            )
            for c in doc["true_changes"]
        ),
        true_labels=tuple(
            IntentionLabel(
                class_id=int(l["class_id"]),
                t_start_ms=int(l["t_start_ms"]),
                t_end_ms=int(l["t_end_ms"]),
                source=l.get("source", "manual"),
            )
            for l in doc["true_labels"]
        ),
        true_taus=tuple(int(t) for t in doc["true_taus"]),
        pairing=tuple((int(a), int(b)) for a, b in doc["pairing"]),
        inter_change_gaps_ms=tuple(int(g) for g in doc["inter_change_gaps_ms"]),
    )


def write_recording_files(
    corpus_dir: Path,
    recording: Recording,
    truth: GroundTruth,
) -> list[str]:
    """Write stream, frame, ground truth, and manual label files for one recording."""
    rid = recording.recording_id
    written = []
    for stream in recording.streams:
        name = f"{rid}.{stream.sensor_id}.jsonl"
        lines = [
            json.dumps({"t_ms": s.t_ms, "grams": s.grams}, separators=(",", ":"))
            for s in stream.samples
        ]
        atomic_write_text(corpus_dir / name, "\n".join(lines) + "\n")
        written.append(name)

    name = f"{rid}.frames.jsonl"
    lines = [
        json.dumps({"t_ms": e.t_ms, "frame": e.frame}, separators=(",", ":"))
        for e in recording.frames.entries
    ]
    atomic_write_text(corpus_dir / name, "\n".join(lines) + "\n")
    written.append(name)

    name = f"groundtruth.{rid}.json"
    atomic_write_json(corpus_dir / name, ground_truth_to_dict(truth))
    written.append(name)

    labels_doc = {
        "recording_id": rid,
        "duration_ms": recording.duration_ms,
        "labels": [
            {
                "class_id": l.class_id,
                "t_start_ms": l.t_start_ms,
                "t_end_ms": l.t_end_ms,
                "source": l.source,
            }
            for l in truth.true_labels
        ],
    }
    atomic_write_json(corpus_dir / "labels" / f"{rid}.labels.json", labels_doc)
    written.append(f"labels/{rid}.labels.json")
    return written


def generate_corpus(
    config: ScenarioConfig,
    out_dir: str | Path,
    force: bool = False,
    jobs: int = 1,
) -> list[str]:
    """Generate the whole scenario into out_dir and write a manifest.

    Refuses a non-empty target unless force is set.  Returns recording ids.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ConfigError(f"{out_dir}: directory not empty (use force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)

    def build(index: int):
        recording, truth = generate_recording(config, index)
        files = write_recording_files(out_dir, recording, truth)
        return recording.recording_id, files

    indices = list(range(1, config.n_recordings + 1))
    results: dict[int, tuple[str, list[str]]] = {}
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for index, res in zip(indices, pool.map(build, indices)):
                results[index] = res
    else:
        for index in indices:
            results[index] = build(index)

    manifest = {
        "config": config.to_dict(),
        "recordings": [
            {"recording_id": results[i][0], "files": results[i][1]} for i in indices
        ],
    }
    atomic_write_text(out_dir / "manifest.json", json_dumps_canonical(manifest))
    return [results[i][0] for i in indices]
