"""Command line entry point wiring the pipeline stages together.

Each subcommand reads and writes plain files, so stages compose through
the filesystem and rerunning a stage with the same inputs and seed gives
byte-identical outputs.  Failures print a single `error: ...` line on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .core import (
    DEFAULT_INTENTION_MS,
    SlbError,
    ValidationError,
    atomic_write_json,
    json_dumps_canonical,
    load_labels,
    save_labels,
)
from .corpus import (
    catalog_for_corpus,
    labels_path,
    list_recording_ids,
    load_labels_for,
    load_recording,
)
from .detect import DetectorConfig, detect_state_changes, read_changes_report, write_changes_report
from .evaluate import (
    MatchRule,
    build_confusion,
    combine_agreement,
    score_agreement,
    time_savings,
)
from .orchestrate import ClassifierStub, SessionPolicy, StubConfig, run_session
from .prng import derive_seed
from .robot import (
    DEFAULT_TIMEOUT_MS,
    RobotClient,
    RobotServer,
    SimConfig,
    load_waypoints,
    record_waypoint,
    simulated_freedrive,
    synthesize_paths,
)
from .selflabel import (
    extract_negative_windows,
    fit_itm,
    generate_self_labels,
    load_itm,
    negatives_to_labels,
    pair_labels_to_changes,
    save_itm,
)
from .synthgen import default_scenario, generate_corpus, load_scenario


def changes_path(changes_dir: str | Path, recording_id: str) -> Path:
    return Path(changes_dir) / f"{recording_id}.changes.jsonl"


def _label_file_rids(labels_dir: Path) -> list[str]:
    return sorted(p.name[: -len(".labels.json")] for p in labels_dir.glob("*.labels.json"))


def _pick_rids(requested: list[str] | None, available: list[str], where: str) -> list[str]:
    if not requested:
        return available
    missing = [r for r in requested if r not in available]
    if missing:
        raise ValidationError(f"recordings not found in {where}: {', '.join(missing)}")
    return list(requested)


def _detector_from_args(args) -> DetectorConfig:
    if getattr(args, "detector", None):
        return DetectorConfig.load(args.detector)
    return DetectorConfig()


def _cmd_scenario(args) -> int:
    config = default_scenario(seed=args.seed, n_recordings=args.recordings)
    text = json_dumps_canonical(config.to_dict())
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote scenario to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gen(args) -> int:
    if args.config:
        config = load_scenario(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.recordings is not None:
            config = replace(config, n_recordings=args.recordings)
    else:
        if args.seed is None:
            raise ValidationError("gen without --config needs an explicit --seed")
        config = default_scenario(seed=args.seed, n_recordings=args.recordings or 50)
    rids = generate_corpus(config, args.out, force=args.force, jobs=args.jobs)
    print(f"wrote {len(rids)} recordings to {args.out}")
    return 0


def _cmd_detect(args) -> int:
    corpus = Path(args.corpus)
    rids = _pick_rids(args.recordings, list_recording_ids(corpus), str(corpus))
    if not rids:
        raise ValidationError(f"no recordings found in {corpus}")
    config = _detector_from_args(args)
    catalog = catalog_for_corpus(corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(rid: str) -> int:
        recording, _ = load_recording(corpus, rid)
        changes = detect_state_changes(recording, catalog, config)
        write_changes_report(changes, changes_path(out_dir, rid))
        return len(changes)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            counts = list(pool.map(one, rids))
    else:
        counts = [one(rid) for rid in rids]
    for rid, n in zip(rids, counts):
        print(f"{rid}: {n} state changes")
    return 0


def _cmd_fit_itm(args) -> int:
    labels_dir = Path(args.labels)
    changes_dir = Path(args.changes)
    rids = _pick_rids(args.recordings, _label_file_rids(labels_dir), str(labels_dir))
    if not rids:
        raise ValidationError(f"no label files found in {labels_dir}")
    pairs = []
    unpaired = 0
    for rid in rids:
        path = changes_path(changes_dir, rid)
        if not path.exists():
            raise ValidationError(f"missing changes report {path}")
        labels = load_labels(labels_path(labels_dir, rid), d_ms=args.d_ms).labels
        changes = read_changes_report(path)
        got, no_change, _ = pair_labels_to_changes(list(labels), changes)
        pairs.extend(got)
        unpaired += len(no_change)
    model, rejected = fit_itm(pairs, d_ms=args.d_ms)
    save_itm(model, args.out)
    print(
        f"fitted {len(model.classes)} classes from {len(pairs)} pairs "
        f"({unpaired} labels unpaired, {len(rejected)} pairs rejected); "
        f"global tau {model.global_tau_ms} ms -> {args.out}"
    )
    return 0


def _cmd_selflabel(args) -> int:
    corpus = Path(args.corpus)
    changes_dir = Path(args.changes)
    itm = load_itm(args.itm)
    available = sorted(
        p.name[: -len(".changes.jsonl")] for p in changes_dir.glob("*.changes.jsonl")
    )
    rids = _pick_rids(args.recordings, available, str(changes_dir))
    if not rids:
        raise ValidationError(f"no changes reports found in {changes_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for rid in rids:
        recording, _ = load_recording(corpus, rid)
        changes = read_changes_report(changes_path(changes_dir, rid))
        result = generate_self_labels(changes, itm)
        save_labels(
            result.labels,
            labels_path(out_dir, rid),
            recording_id=rid,
            duration_ms=recording.duration_ms,
            d_ms=itm.d_ms,
        )
        total += len(result.labels)
        print(
            f"{rid}: {len(result.labels)} labels "
            f"({len(result.skipped_unmatched)} unmatched, {len(result.dropped)} dropped)"
        )
    print(f"wrote {total} labels to {out_dir}")
    return 0


def _cmd_negatives(args) -> int:
    corpus = Path(args.corpus)
    labels_dir = Path(args.labels)
    rids = _pick_rids(args.recordings, _label_file_rids(labels_dir), str(labels_dir))
    if not rids:
        raise ValidationError(f"no label files found in {labels_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    shortfall = 0
    for index, rid in enumerate(rids):
        recording, _ = load_recording(corpus, rid)
        labels = load_labels(labels_path(labels_dir, rid), d_ms=args.d_ms).labels
        result = extract_negative_windows(
            recording,
            list(labels),
            count_per_class=args.per_class,
            margin_ms=args.margin_ms,
            seed=derive_seed(args.seed, index),
            d_ms=args.d_ms,
        )
        negatives = negatives_to_labels(result.windows)
        save_labels(
            negatives,
            labels_path(out_dir, rid),
            recording_id=rid,
            duration_ms=recording.duration_ms,
            d_ms=args.d_ms,
        )
        total += len(negatives)
        shortfall += result.shortfall
    note = f" (short by {shortfall})" if shortfall else ""
    print(f"wrote {total} negative windows to {out_dir}{note}")
    return 0


def _cmd_eval_agreement(args) -> int:
    reference_dir = Path(args.reference)
    candidate_dir = Path(args.candidate)
    rids = _pick_rids(args.recordings, _label_file_rids(reference_dir), str(reference_dir))
    if not rids:
        raise ValidationError(f"no label files found in {reference_dir}")
    if args.onset_ms is not None:
        rule = MatchRule.onset(args.onset_ms)
    else:
        rule = MatchRule.iou(args.iou)
    reports = {}
    for rid in rids:
        reference = load_labels(labels_path(reference_dir, rid), d_ms=args.d_ms).labels
        cand_file = load_labels_for(candidate_dir, rid, d_ms=args.d_ms)
        candidate = list(cand_file.labels) if cand_file else []
        reports[rid] = score_agreement(list(reference), candidate, rule)
    overall = combine_agreement(list(reports.values()))
    if args.out:
        atomic_write_json(
            args.out,
            {
                "overall": overall.to_dict(),
                "per_recording": {rid: r.to_dict() for rid, r in sorted(reports.items())},
            },
        )
    print(
        f"agreement {overall.agreement:.3f} "
        f"({overall.matched}/{overall.total_reference} reference labels, "
        f"{overall.total_candidate} candidates, rule {overall.rule})"
    )
    return 0


def _read_class_column(path: str | Path) -> list[int]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(int(rec["class_id"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: bad class entry: {exc}") from exc
    return out


def _cmd_eval_confusion(args) -> int:
    truth = _read_class_column(args.truth)
    predicted = _read_class_column(args.pred)
    # --classes counts class 0, so the catalog size is one less
    matrix = build_confusion(truth, predicted, n_classes=args.classes - 1)
    if args.out:
        atomic_write_json(args.out, matrix.to_dict())
    print(f"accuracy {matrix.accuracy:.4f} over {len(truth)} windows")
    return 0


def _cmd_time_report(args) -> int:
    report = time_savings(args.samples, args.minutes_per_label, args.slb_hours)
    print(f"samples: {report.n_samples}")
    print(f"minutes per manual label: {report.minutes_per_manual_label:g}")
    print(
        f"manual {report.manual_hours:.1f} h, saved {report.saved_hours:.1f} h "
        f"(self-labeling took {report.slb_hours:.1f} h)"
    )
    return 0


def _cmd_serve_annotation(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        corpus_dir=args.corpus,
        labels_dir=args.labels,
        detector=_detector_from_args(args),
        d_ms=args.d_ms,
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_serve_robot(args) -> int:
    sim = SimConfig(speed=args.speed, tick_ms=args.tick_ms, realtime=not args.instant)
    server = RobotServer(host=args.host, port=args.port, sim=sim)
    server.start()
    print(f"robot listening on {args.host}:{server.port}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _cmd_calibrate(args) -> int:
    out_dir = Path(args.out)
    existing = [p for p in out_dir.glob("*.csv")] if out_dir.exists() else []
    if existing:
        if not args.force:
            raise ValidationError(f"{out_dir}: waypoint files already present (use --force)")
        for p in existing:
            p.unlink()
    rows = simulated_freedrive(args.classes, seed=args.seed, jitter_m=args.jitter_m)
    for cls, step, pose in rows:
        record_waypoint(lambda p=pose: p, cls, step, out_dir)
    paths = load_waypoints(out_dir)
    print(f"calibrated {len(paths)} classes ({len(rows)} waypoints) -> {out_dir}")
    return 0


def _parse_classifier_spec(spec: str, n_classes: int, seed: int | None) -> StubConfig:
    if spec == "oracle":
        return StubConfig(mode="oracle")
    if spec == "noisy" or spec.startswith("noisy:"):
        accuracy = 0.83
        if ":" in spec:
            accuracy = float(spec.split(":", 1)[1])
        if seed is None:
            raise ValidationError("noisy classifier needs an explicit --seed")
        return StubConfig(mode="noisy", accuracy=accuracy, n_classes=n_classes, seed=seed)
    if spec.startswith("scripted:"):
        return StubConfig(mode="scripted", script_path=spec.split(":", 1)[1])
    raise ValidationError(
        f"unknown classifier {spec!r} (expected oracle, noisy[:p], or scripted:file)"
    )


def _cmd_run_session(args) -> int:
    corpus = Path(args.corpus)
    recording, _ = load_recording(corpus, args.recording)
    catalog = catalog_for_corpus(corpus)

    if args.changes:
        changes = read_changes_report(changes_path(args.changes, args.recording))
    else:
        changes = detect_state_changes(recording, catalog, _detector_from_args(args))

    labels_dir = Path(args.labels) if args.labels else corpus / "labels"
    label_file = load_labels_for(labels_dir, args.recording, d_ms=args.d_ms)
    truth_labels = list(label_file.labels) if label_file else []

    n_classes = args.classes
    if n_classes is None:
        n_classes = catalog.n_classes if catalog else 13

    stub_config = _parse_classifier_spec(args.classifier, n_classes, args.seed)
    if stub_config.mode == "oracle" and not truth_labels:
        raise ValidationError(f"oracle classifier needs labels for {args.recording}")
    classifier = ClassifierStub(stub_config, truth_labels=truth_labels)

    if args.waypoints:
        paths = load_waypoints(args.waypoints)
    else:
        paths = synthesize_paths(n_classes, seed=args.seed or 0)

    picks = [l.class_id for l in sorted(truth_labels, key=lambda l: l.t_start_ms)
             if l.class_id >= 1]
    sop_order = picks or sorted(paths)

    robot = None
    if args.robot:
        host, _, port = args.robot.rpartition(":")
        if not host or not port.isdigit():
            raise ValidationError(f"--robot expects host:port, got {args.robot!r}")
        robot = RobotClient(host, int(port), timeout_ms=args.timeout_ms)

    policy = SessionPolicy(
        min_confidence=args.min_confidence,
        debounce_ms=args.debounce_ms,
        order_mode=args.order,
    )
    try:
        log = run_session(
            recording,
            changes,
            classifier,
            robot,
            paths,
            policy=policy,
            sop_order=sop_order,
            d_ms=args.d_ms,
        )
    finally:
        if robot is not None:
            robot.close()
    if args.out:
        log.write(args.out)
    print(f"{len(log.dispatches)} dispatches, {len(log.alarms)} alarms, "
          f"{len(log.events)} events")
    return 1 if log.alarms else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slbkit",
        description="Self-labeling pipeline for weight-sensed assembly recordings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="print a scenario config to edit")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--recordings", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--config", help="scenario config json (default scenario if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--recordings", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("detect", help="detect weight state changes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--detector", help="detector config json")
    p.add_argument("--out", required=True, help="directory for changes reports")
    p.add_argument("--recordings", nargs="*")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("fit-itm", help="fit the interaction time model")
    p.add_argument("--labels", required=True, help="manual label directory")
    p.add_argument("--changes", required=True, help="changes report directory")
    p.add_argument("--out", required=True)
    p.add_argument("--recordings", nargs="*")
    p.add_argument("--d-ms", type=int, default=DEFAULT_INTENTION_MS)
    p.set_defaults(func=_cmd_fit_itm)

    p = sub.add_parser("selflabel", help="generate labels from state changes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--itm", required=True)
    p.add_argument("--changes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recordings", nargs="*")
    p.set_defaults(func=_cmd_selflabel)

    p = sub.add_parser("negatives", help="sample non-intention windows")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--margin-ms", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recordings", nargs="*")
    p.add_argument("--d-ms", type=int, default=DEFAULT_INTENTION_MS)
    p.set_defaults(func=_cmd_negatives)

    p = sub.add_parser("eval-agreement", help="score candidate labels against a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--onset-ms", type=int, help="match on onset distance instead of overlap")
    p.add_argument("--recordings", nargs="*")
    p.add_argument("--d-ms", type=int, default=DEFAULT_INTENTION_MS)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_agreement)

    p = sub.add_parser("eval-confusion", help="confusion matrix from class columns")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--classes", type=int, required=True,
                   help="number of classes including the idle class 0")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_confusion)

    p = sub.add_parser("time-report", help="annotation time saved by self-labeling")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--minutes-per-label", type=float, required=True)
    p.add_argument("--slb-hours", type=float, required=True)
    p.set_defaults(func=_cmd_time_report)

    p = sub.add_parser("serve-annotation", help="run the annotation HTTP service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels")
    p.add_argument("--detector")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--ui", help="static directory to mount at /ui")
    p.add_argument("--d-ms", type=int, default=DEFAULT_INTENTION_MS)
    p.set_defaults(func=_cmd_serve_annotation)

    p = sub.add_parser("serve-robot", help="run the simulated arm server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8452)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--tick-ms", type=int, default=8)
    p.add_argument("--instant", action="store_true",
                   help="advance simulated time without sleeping")
    p.set_defaults(func=_cmd_serve_robot)

    p = sub.add_parser("calibrate", help="record a waypoint set from the simulated freedrive")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=13)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jitter-m", type=float, default=0.01)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("run-session", help="replay a recording through the dispatch loop")
    p.add_argument("--corpus", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--classifier", required=True,
                   help="oracle, noisy[:accuracy], or scripted:file")
    p.add_argument("--labels", help="label directory (default <corpus>/labels)")
    p.add_argument("--changes", help="changes report directory (default: run the detector)")
    p.add_argument("--detector")
    p.add_argument("--robot", help="host:port of a running arm server (default: dry run)")
    p.add_argument("--waypoints", help="waypoint directory (default: synthesized)")
    p.add_argument("--classes", type=int)
    p.add_argument("--order", choices=("strict", "any"), default="strict")
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.add_argument("--debounce-ms", type=int, default=4000)
    p.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-ms", type=int, default=DEFAULT_INTENTION_MS)
    p.add_argument("--out", help="write the session log as line-delimited JSON")
    p.set_defaults(func=_cmd_run_session)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SlbError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
