"""Annotation service endpoints over a generated corpus."""

import pytest
from fastapi.testclient import TestClient

from slbkit.core import Part, PartCatalog
from slbkit.service import create_app, downsample_minmax, label_id_for
from slbkit.synthgen import ScenarioConfig, generate_corpus


def build_corpus(directory, n_recordings=2):
    catalog = PartCatalog(
        parts=(
            Part(class_id=1, name="slab", sensor_id="tray_a",
                 expected_delta_g=-120.0, tolerance_g=10.0),
            Part(class_id=2, name="peg", sensor_id="tray_a",
                 expected_delta_g=-60.0, tolerance_g=10.0),
            Part(class_id=3, name="rod", sensor_id="tray_b",
                 expected_delta_g=-90.0, tolerance_g=10.0),
        )
    )
    config = ScenarioConfig(
        seed=77,
        n_recordings=n_recordings,
        catalog=catalog,
        noise_sigma_g=0.0,
        spike_rate_per_min=0.0,
        frame_drop_rate=0.0,
        tau_mean_ms={1: 2000, 2: 2000, 3: 2000},
        tau_jitter_ms={1: 200, 2: 200, 3: 200},
    )
    generate_corpus(config, directory)
    return config


@pytest.fixture()
def corpus(tmp_path):
    config = build_corpus(tmp_path / "corpus")
    return tmp_path / "corpus", config


@pytest.fixture()
def client(corpus):
    corpus_dir, _ = corpus
    return TestClient(create_app(corpus_dir))


class TestDownsample:
    def test_small_stream_passes_through(self):
        t = list(range(0, 100, 10))
        g = [float(k) for k in range(10)]
        out_t, out_min, out_max = downsample_minmax(t, g, points=10)
        assert out_t == t
        assert out_min == g
        assert out_max == g

    def test_matches_bucket_scan_oracle(self):
        t = list(range(0, 20_000, 20))
        g = [((k * 37) % 101) / 3.0 for k in range(len(t))]
        points = 64
        out_t, out_min, out_max = downsample_minmax(t, g, points)
        span = t[-1] - t[0]
        buckets = {}
        for tk, gk in zip(t, g):
            b = min((tk - t[0]) * points // span, points - 1)
            buckets.setdefault(b, []).append(gk)
        assert out_t == [t[0] + b * span // points for b in sorted(buckets)]
        assert out_min == [min(buckets[b]) for b in sorted(buckets)]
        assert out_max == [max(buckets[b]) for b in sorted(buckets)]
        assert len(out_t) <= points

    def test_spike_survives_any_budget(self):
        t = list(range(0, 10_000, 10))
        g = [500.0] * len(t)
        g[617] = 950.0
        for points in (8, 50, 333):
            _, _, out_max = downsample_minmax(t, g, points)
            assert max(out_max) == 950.0

    def test_zero_span(self):
        out_t, out_min, out_max = downsample_minmax([5, 5, 5], [1.0, 9.0, 4.0], 2)
        assert (out_t, out_min, out_max) == ([5], [1.0], [9.0])


class TestRecordingsIndex:
    def test_summaries_and_catalog(self, client, corpus):
        _, config = corpus
        doc = client.get("/recordings").json()
        assert doc["invalid"] == []
        assert [c["class_id"] for c in doc["classes"]] == [1, 2, 3]
        assert [c["name"] for c in doc["classes"]] == ["slab", "peg", "rod"]
        assert [r["recording_id"] for r in doc["recordings"]] == ["rec001", "rec002"]
        for summary in doc["recordings"]:
            assert summary["sensors"] == ["tray_a", "tray_b"]
            assert summary["n_labels"] == 3
            assert summary["label_counts"] == {"manual": 3, "slb": 0}
            assert summary["n_state_changes"] == 3
            assert summary["warnings"] == []

    def test_corrupt_recording_listed_invalid(self, corpus):
        corpus_dir, _ = corpus
        stream = corpus_dir / "rec002.tray_a.jsonl"
        stream.write_text('{"t_ms": "eleven"}\n', encoding="utf-8")
        doc = TestClient(create_app(corpus_dir)).get("/recordings").json()
        assert [r["recording_id"] for r in doc["recordings"]] == ["rec001"]
        assert len(doc["invalid"]) == 1
        assert doc["invalid"][0]["recording_id"] == "rec002"
        assert "rec002.tray_a.jsonl" in doc["invalid"][0]["error"]


class TestStreams:
    def test_full_resolution_when_budget_allows(self, client, corpus):
        corpus_dir, config = corpus
        doc = client.get("/recordings/rec001/streams", params={"points": 200000}).json()
        assert doc["recording_id"] == "rec001"
        assert doc["detector_error"] is None
        by_sensor = {s["sensor_id"]: s for s in doc["streams"]}
        assert set(by_sensor) == {"tray_a", "tray_b"}
        stream = by_sensor["tray_a"]
        assert stream["n_samples"] == len(stream["t_ms"])
        assert stream["min_g"] == stream["max_g"]
        changes = doc["state_changes"]
        assert [c["class_id"] for c in changes] == [1, 2, 3]
        assert all(c["sensor"] in ("tray_a", "tray_b") for c in changes)

    def test_budget_respected(self, client):
        doc = client.get("/recordings/rec001/streams", params={"points": 40}).json()
        for stream in doc["streams"]:
            assert len(stream["t_ms"]) <= 40
            assert all(lo <= hi for lo, hi in zip(stream["min_g"], stream["max_g"]))

    def test_unknown_recording_404(self, client):
        assert client.get("/recordings/rec999/streams").status_code == 404

    def test_zero_points_rejected(self, client):
        assert client.get("/recordings/rec001/streams",
                          params={"points": 0}).status_code == 422


class TestFrames:
    def test_entries_match_corpus(self, client, corpus):
        corpus_dir, _ = corpus
        doc = client.get("/recordings/rec001/frames").json()
        entries = doc["entries"]
        assert entries[0] == {"t_ms": 0, "frame": 0}
        frames = [e["frame"] for e in entries]
        assert frames == sorted(frames)
        assert len(frames) == len(set(frames))


class TestLabelCrud:
    def test_initial_labels_are_corpus_manual_labels(self, client):
        doc = client.get("/recordings/rec001/labels").json()
        assert doc["d_ms"] == 4000
        assert len(doc["labels"]) == 3
        for lab in doc["labels"]:
            assert lab["source"] == "manual"
            assert lab["t_end_ms"] - lab["t_start_ms"] == 4000
            assert lab["label_id"] == f"{lab['class_id']}-{lab['t_start_ms']}"

    def test_post_appends_and_persists(self, client, corpus):
        corpus_dir, _ = corpus
        before = client.get("/recordings/rec001/labels").json()
        free_start = before["duration_ms"] - 4000
        doc = client.post(
            "/recordings/rec001/labels",
            json={"class_id": 2, "t_start_ms": free_start},
        ).json()
        assert len(doc["labels"]) == 4
        added = [l for l in doc["labels"] if l["t_start_ms"] == free_start]
        assert added[0]["class_id"] == 2
        assert added[0]["source"] == "manual"
        # a fresh app over the same directories sees the write
        reloaded = TestClient(create_app(corpus_dir)).get(
            "/recordings/rec001/labels"
        ).json()
        assert reloaded == doc

    def test_duplicate_post_is_idempotent(self, client):
        before = client.get("/recordings/rec001/labels").json()
        free_start = before["duration_ms"] - 4000
        payload = {"class_id": 1, "t_start_ms": free_start}
        first = client.post("/recordings/rec001/labels", json=payload).json()
        second = client.post("/recordings/rec001/labels", json=payload).json()
        assert first == second
        assert len(second["labels"]) == 4

    def test_same_class_overlap_rejected(self, client):
        existing = client.get("/recordings/rec001/labels").json()["labels"][0]
        response = client.post(
            "/recordings/rec001/labels",
            json={"class_id": existing["class_id"],
                  "t_start_ms": existing["t_start_ms"] + 1000},
        )
        assert response.status_code == 422
        assert "overlap" in response.json()["detail"]

    def test_class_outside_catalog_rejected(self, client):
        response = client.post(
            "/recordings/rec001/labels", json={"class_id": 9, "t_start_ms": 0}
        )
        assert response.status_code == 422
        assert "catalog" in response.json()["detail"]

    def test_negative_start_rejected(self, client):
        response = client.post(
            "/recordings/rec001/labels", json={"class_id": 1, "t_start_ms": -100}
        )
        assert response.status_code == 422

    def test_window_past_end_rejected(self, client):
        duration = client.get("/recordings/rec001/labels").json()["duration_ms"]
        response = client.post(
            "/recordings/rec001/labels",
            json={"class_id": 1, "t_start_ms": duration - 3999},
        )
        assert response.status_code == 422

    def test_delete_by_id(self, client):
        doc = client.get("/recordings/rec001/labels").json()
        victim = doc["labels"][1]["label_id"]
        after = client.delete(f"/recordings/rec001/labels/{victim}").json()
        assert len(after["labels"]) == 2
        assert victim not in [l["label_id"] for l in after["labels"]]

    def test_delete_unknown_404(self, client):
        response = client.delete("/recordings/rec001/labels/7-123456")
        assert response.status_code == 404

    def test_labels_sorted_by_start(self, client):
        doc = client.get("/recordings/rec001/labels").json()
        starts = [l["t_start_ms"] for l in doc["labels"]]
        assert starts == sorted(starts)


class TestAnnotationRoundTrip:
    def test_add_many_reload_delete_one(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        build_corpus(corpus_dir, n_recordings=1)
        labels_dir = tmp_path / "fresh_labels"
        client = TestClient(create_app(corpus_dir, labels_dir=labels_dir))
        assert client.get("/recordings/rec001/labels").json()["labels"] == []

        # classes cycle 1,2,3 so same-class windows sit 7500 ms apart
        for k in range(13):
            response = client.post(
                "/recordings/rec001/labels",
                json={"class_id": 1 + (k % 3), "t_start_ms": k * 2500},
            )
            assert response.status_code == 200, response.text

        reloaded_client = TestClient(create_app(corpus_dir, labels_dir=labels_dir))
        doc = reloaded_client.get("/recordings/rec001/labels").json()
        assert len(doc["labels"]) == 13
        victim = doc["labels"][6]["label_id"]
        doc = reloaded_client.delete(f"/recordings/rec001/labels/{victim}").json()
        assert len(doc["labels"]) == 12
        assert all(l["t_end_ms"] - l["t_start_ms"] == 4000 for l in doc["labels"])


class TestCorsAndUi:
    def test_cors_allows_browser_origin(self, client):
        response = client.get("/recordings", headers={"Origin": "http://localhost:5173"})
        assert response.headers["access-control-allow-origin"] == "*"

    def test_static_ui_mount(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        build_corpus(corpus_dir, n_recordings=1)
        ui_dir = tmp_path / "ui"
        ui_dir.mkdir()
        (ui_dir / "index.html").write_text("<!doctype html><title>annotate</title>")
        client = TestClient(create_app(corpus_dir, ui_dir=ui_dir))
        response = client.get("/ui/")
        assert response.status_code == 200
        assert "annotate" in response.text
