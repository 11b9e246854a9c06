"""Session orchestration: windows, classifier stubs, dispatch policy, alarms."""

import json
import socket

import pytest

from slbkit.core import (
    ConfigError,
    FrameIndex,
    IntentionLabel,
    ParseError,
    Recording,
    Sample,
    SensorStream,
)
from slbkit.detect import StateChange
from slbkit.orchestrate import (
    ClassifierStub,
    OrchestrationError,
    SessionPolicy,
    StubConfig,
    WindowDescriptor,
    run_session,
    true_class_for_window,
    window_stream,
)
from slbkit.robot import RobotClient, RobotServer, SimConfig, synthesize_paths


def make_recording(duration_ms, rid="recsim"):
    stream = SensorStream(
        sensor_id="wood",
        samples=(Sample(0, 500.0), Sample(duration_ms, 500.0)),
    )
    return Recording(
        recording_id=rid,
        streams=(stream,),
        frames=FrameIndex(entries=()),
        duration_ms=duration_ms,
    )


def label(class_id, t_start, d=4000):
    return IntentionLabel(
        class_id=class_id, t_start_ms=t_start, t_end_ms=t_start + d, source="manual"
    )


def change(class_id, t_ms, sensor="wood"):
    return StateChange(
        t_ms=t_ms, sensor_id=sensor, delta_g=-100.0, class_id=class_id
    )


def write_script(path, entries):
    lines = [
        json.dumps({"t_start_ms": t, "class_id": c, "confidence": conf})
        for t, c, conf in entries
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


class TestWindowStream:
    def test_covers_recording_with_fixed_overlap(self):
        windows = window_stream(10_000, d_ms=4000, stride_ms=2000)
        assert [(w.t_start_ms, w.t_end_ms) for w in windows] == [
            (0, 4000), (2000, 6000), (4000, 8000), (6000, 10_000),
        ]
        for a, b in zip(windows, windows[1:]):
            assert a.t_end_ms - b.t_start_ms == 4000 - 2000

    def test_short_recording_has_no_windows(self):
        assert window_stream(3999, d_ms=4000) == []
        assert len(window_stream(4000, d_ms=4000)) == 1

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            window_stream(10_000, d_ms=0)
        with pytest.raises(ConfigError):
            window_stream(10_000, stride_ms=0)


class TestTrueClassForWindow:
    def window(self, start, end):
        return WindowDescriptor(index=0, t_start_ms=start, t_end_ms=end)

    def test_fully_covered_window(self):
        assert true_class_for_window(self.window(1000, 5000), [label(3, 0, 6000)]) == 3

    def test_exact_half_coverage_counts(self):
        assert true_class_for_window(self.window(2000, 6000), [label(2, 0)]) == 2

    def test_under_half_is_non_intention(self):
        assert true_class_for_window(self.window(2001, 6001), [label(2, 0)]) == 0

    def test_no_labels(self):
        assert true_class_for_window(self.window(0, 4000), []) == 0

    def test_larger_overlap_wins(self):
        labels = [label(1, 0), label(2, 3000)]
        # window [2000, 6000]: 2000 ms of class 1, 3000 ms of class 2
        assert true_class_for_window(self.window(2000, 6000), labels) == 2


class TestStubConfig:
    def test_validation(self):
        with pytest.raises(ConfigError, match="mode"):
            StubConfig(mode="psychic")
        with pytest.raises(ConfigError, match="accuracy"):
            StubConfig(mode="noisy", accuracy=1.2)
        with pytest.raises(ConfigError, match="script_path"):
            StubConfig(mode="scripted")


class TestClassifierStub:
    def test_oracle_returns_truth(self):
        stub = ClassifierStub(StubConfig(mode="oracle"), truth_labels=[label(5, 0)])
        pred = stub.classify(WindowDescriptor(0, 0, 4000))
        assert pred.class_id == 5
        assert pred.confidence == 1.0

    def test_noisy_is_call_order_independent(self):
        config = StubConfig(mode="noisy", accuracy=0.5, seed=9)
        truth = [label(3, 0)]
        w1 = WindowDescriptor(0, 0, 4000)
        w2 = WindowDescriptor(1, 2000, 6000)
        a = ClassifierStub(config, truth)
        forward = (a.classify(w1), a.classify(w2))
        b = ClassifierStub(config, truth)
        backward = (b.classify(w2), b.classify(w1))
        assert forward == (backward[1], backward[0])

    def test_noisy_hits_configured_rate(self):
        config = StubConfig(mode="noisy", accuracy=0.83, n_classes=13, seed=4)
        truth = [label(1 + (k % 13), k * 10_000) for k in range(3000)]
        stub = ClassifierStub(config, truth)
        correct = 0
        for k in range(3000):
            window = WindowDescriptor(k, k * 10_000, k * 10_000 + 4000)
            pred = stub.classify(window)
            true_class = 1 + (k % 13)
            if pred.class_id == true_class:
                correct += 1
            else:
                assert 0 <= pred.class_id <= 13
        assert correct / 3000 == pytest.approx(0.83, abs=0.02)

    def test_scripted_replay_and_exhaustion(self, tmp_path):
        script = write_script(tmp_path / "s.jsonl", [(0, 4, 0.8)])
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        pred = stub.classify(WindowDescriptor(0, 0, 4000))
        assert (pred.class_id, pred.confidence) == (4, 0.8)
        with pytest.raises(OrchestrationError, match="script exhausted"):
            stub.classify(WindowDescriptor(1, 2000, 6000))

    def test_scripted_bad_line_names_position(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"t_start_ms": 0, "class_id": 1}\n{"class_id": 2}\n')
        with pytest.raises(ParseError, match=r"s\.jsonl:2"):
            ClassifierStub(StubConfig(mode="scripted", script_path=str(path)))


class TestSessionPolicy:
    def test_validation(self):
        with pytest.raises(ConfigError):
            SessionPolicy(min_confidence=2.0)
        with pytest.raises(ConfigError):
            SessionPolicy(debounce_ms=-1)
        with pytest.raises(ConfigError):
            SessionPolicy(order_mode="shuffled")


class TestRunSessionDry:
    def two_class_setup(self):
        truth = [label(1, 2000), label(2, 14_000)]
        changes = [change(1, 8000), change(2, 20_000)]
        recording = make_recording(26_000)
        paths = synthesize_paths(2, seed=6)
        return recording, truth, changes, paths

    def test_oracle_session_dispatches_in_order_with_no_alarms(self):
        recording, truth, changes, paths = self.two_class_setup()
        stub = ClassifierStub(StubConfig(mode="oracle"), truth)
        log = run_session(recording, changes, stub, None, paths, sop_order=[1, 2])
        assert [d["class_id"] for d in log.dispatches] == [1, 2]
        assert log.alarms == []
        end = log.events[-1]
        assert end["kind"] == "session_end"
        assert end["n_dispatches"] == 2
        assert end["completed"] == [1, 2]

    def test_never_predicted_change_raises_alarm(self, tmp_path):
        recording, truth, changes, paths = self.two_class_setup()
        script = write_script(
            tmp_path / "zeros.jsonl",
            [(t, 0, 0.9) for t in range(0, 26_000, 2000)],
        )
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        log = run_session(recording, changes, stub, None, paths, sop_order=[1, 2])
        assert log.dispatches == []
        assert [a["alarm"] for a in log.alarms] == ["missed_prediction"] * 2

    def test_wrong_dispatch_alarm(self, tmp_path):
        recording = make_recording(16_000)
        entries = [(t, 0, 0.9) for t in range(0, 16_000, 2000)]
        entries[0] = (0, 1, 0.9)
        entries[1] = (2000, 2, 0.9)
        script = write_script(tmp_path / "swap.jsonl", entries)
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        changes = [change(1, 5000), change(1, 7000)]
        log = run_session(
            recording, changes, stub, None, synthesize_paths(2, seed=6),
            policy=SessionPolicy(order_mode="any"), sop_order=[1, 2],
        )
        assert [d["class_id"] for d in log.dispatches] == [1, 2]
        assert [a["alarm"] for a in log.alarms] == ["wrong_dispatch"]
        assert log.alarms[0]["dispatched"] == 2

    def test_debounce_swallows_repeats_at_boundary(self):
        recording = make_recording(16_000)
        truth = [label(1, 4000)]
        stub = ClassifierStub(StubConfig(mode="oracle"), truth)
        log = run_session(
            recording, [], stub, None, synthesize_paths(1, seed=6),
            policy=SessionPolicy(debounce_ms=4000), sop_order=[1],
        )
        # windows ending 6000, 8000, 10000 all see class 1; gaps of 2000
        # and 4000 ms are both inside the boundary-inclusive debounce
        assert len(log.dispatches) == 1
        debounced = [e for e in log.events if e["kind"] == "debounced"]
        assert len(debounced) == 2

    def test_low_confidence_never_dispatches(self, tmp_path):
        recording = make_recording(8000)
        script = write_script(tmp_path / "meek.jsonl",
                              [(0, 1, 0.4), (2000, 1, 0.4), (4000, 1, 0.4)])
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        log = run_session(recording, [], stub, None, synthesize_paths(1, seed=6),
                          sop_order=[1])
        assert log.dispatches == []

    def test_strict_order_blocks_out_of_turn_pick(self, tmp_path):
        recording = make_recording(8000)
        script = write_script(tmp_path / "skip.jsonl",
                              [(0, 2, 0.9), (2000, 0, 0.9), (4000, 0, 0.9)])
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        log = run_session(recording, [], stub, None, synthesize_paths(2, seed=6),
                          sop_order=[1, 2])
        assert log.dispatches == []

    def test_missing_execution_path_fails_loudly(self, tmp_path):
        recording = make_recording(8000)
        script = write_script(tmp_path / "odd.jsonl",
                              [(0, 5, 0.9), (2000, 0, 0.9), (4000, 0, 0.9)])
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        with pytest.raises(OrchestrationError, match="class 5"):
            run_session(recording, [], stub, None, synthesize_paths(2, seed=6),
                        sop_order=[5])

    def test_script_exhaustion_is_logged_not_fatal(self, tmp_path):
        recording = make_recording(8000)
        script = write_script(tmp_path / "thin.jsonl", [(0, 0, 0.9)])
        stub = ClassifierStub(StubConfig(mode="scripted", script_path=script))
        log = run_session(recording, [], stub, None, synthesize_paths(1, seed=6))
        errors = [e for e in log.events if e["kind"] == "classifier_error"]
        assert len(errors) == 2
        assert log.events[-1]["kind"] == "session_end"

    def test_identical_inputs_identical_logs(self):
        recording, truth, changes, paths = self.two_class_setup()
        runs = []
        for _ in range(2):
            stub = ClassifierStub(StubConfig(mode="noisy", accuracy=0.8, seed=3), truth)
            log = run_session(recording, changes, stub, None, paths, sop_order=[1, 2])
            runs.append(log.to_jsonl())
        assert runs[0] == runs[1]
        assert runs[0].endswith("\n")
        assert ": " not in runs[0]


class TestRunSessionWithRobot:
    def test_oracle_session_drives_real_server(self):
        recording, truth, changes, paths = TestRunSessionDry().two_class_setup()
        server = RobotServer(sim=SimConfig())
        server.start()
        try:
            client = RobotClient("127.0.0.1", server.port, timeout_ms=5000)
            try:
                stub = ClassifierStub(StubConfig(mode="oracle"), truth)
                log = run_session(recording, changes, stub, client, paths,
                                  sop_order=[1, 2])
            finally:
                client.close()
            done = [e for e in log.events if e["kind"] == "robot_done"]
            assert [(e["class_id"], e["status"]) for e in done] == [
                (1, "ok"), (2, "ok"),
            ]
            assert log.alarms == []
            assert server.state.gripper_closed is False
        finally:
            server.stop()

    def test_robot_failure_ends_session(self):
        recording, truth, changes, paths = TestRunSessionDry().two_class_setup()
        mute = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        mute.bind(("127.0.0.1", 0))
        mute.listen(1)
        try:
            client = RobotClient("127.0.0.1", mute.getsockname()[1], timeout_ms=200)
            try:
                stub = ClassifierStub(StubConfig(mode="oracle"), truth)
                log = run_session(recording, changes, stub, client, paths,
                                  sop_order=[1, 2])
            finally:
                client.close()
        finally:
            mute.close()
        failed = [e for e in log.events if e["kind"] == "session_failed"]
        assert len(failed) == 1
        assert "aborted" in failed[0]["reason"]
        assert len(log.dispatches) == 1
