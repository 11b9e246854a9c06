"""Timing-model fitting, label-change pairing, and label generation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slbkit.core import (
    FrameIndex,
    IntentionLabel,
    ParseError,
    Recording,
    Sample,
    SensorStream,
    ValidationError,
)
from slbkit.detect import StateChange
from slbkit.selflabel import (
    ClassTiming,
    ItmModel,
    extract_negative_windows,
    fit_itm,
    generate_self_labels,
    load_itm,
    negatives_to_labels,
    pair_labels_to_changes,
    save_itm,
)


def label(class_id, t_start, d=4000, source="manual"):
    return IntentionLabel(
        class_id=class_id, t_start_ms=t_start, t_end_ms=t_start + d, source=source
    )


def change(t_ms, class_id, sensor="s", delta=-100.0):
    return StateChange(t_ms=t_ms, sensor_id=sensor, delta_g=delta, class_id=class_id)


def pair(class_id, t_end, gap):
    lab = IntentionLabel(
        class_id=class_id, t_start_ms=t_end - 4000, t_end_ms=t_end, source="manual"
    )
    return (lab, change(t_end + gap, class_id))


class TestFitItm:
    def test_median_of_three_gaps(self):
        pairs = [pair(1, 10_000, g) for g in (1500, 2000, 4000)]
        model, rejected = fit_itm(pairs)
        assert rejected == []
        assert model.classes[1].tau_ms == 2000
        assert model.classes[1].count == 3
        # median absolute deviation around 2000: |{-500, 0, 2000}| -> 500
        assert model.classes[1].spread_ms == 500
        assert model.global_tau_ms == 2000

    def test_even_count_interpolates(self):
        pairs = [pair(2, 10_000, g) for g in (1000, 2000)]
        model, _ = fit_itm(pairs)
        assert model.classes[2].tau_ms == 1500

    def test_global_tau_pools_classes(self):
        pairs = [pair(1, 10_000, 1000), pair(2, 20_000, 3000), pair(2, 30_000, 5000)]
        model, _ = fit_itm(pairs)
        assert model.classes[1].tau_ms == 1000
        assert model.classes[2].tau_ms == 4000
        assert model.global_tau_ms == 3000

    def test_non_positive_gap_rejected(self):
        good = pair(1, 10_000, 2000)
        bad = pair(1, 20_000, -500)
        zero = pair(1, 30_000, 0)
        model, rejected = fit_itm([good, bad, zero])
        assert len(rejected) == 2
        assert model.classes[1].count == 1

    def test_empty_pairs_error(self):
        with pytest.raises(ValidationError, match="empty"):
            fit_itm([])

    def test_all_rejected_error(self):
        with pytest.raises(ValidationError, match="rejected"):
            fit_itm([pair(1, 10_000, 0)])

    def test_mixed_class_pair_error(self):
        lab = label(1, 0)
        with pytest.raises(ValidationError, match="mixes"):
            fit_itm([(lab, change(6000, 2))])

    def test_unclassified_change_allowed(self):
        # detector output without a catalog carries class None; the label
        # side supplies the class
        lab = label(3, 0)
        model, _ = fit_itm([(lab, change(6000, None))])
        assert model.classes[3].tau_ms == 2000

    def test_tau_for_falls_back_to_global(self):
        model = ItmModel(
            d_ms=4000,
            global_tau_ms=1800,
            classes={1: ClassTiming(tau_ms=2500, spread_ms=100, count=4)},
        )
        assert model.tau_for(1) == 2500
        assert model.tau_for(9) == 1800

    def test_round_trip(self, tmp_path):
        pairs = [pair(1, 10_000, 1500), pair(2, 20_000, 2500)]
        model, _ = fit_itm(pairs)
        path = tmp_path / "itm.json"
        save_itm(model, path)
        assert load_itm(path) == model

    def test_load_bad_file(self, tmp_path):
        path = tmp_path / "itm.json"
        path.write_text('{"D_ms": 4000}', encoding="utf-8")
        with pytest.raises(ParseError):
            load_itm(path)


class TestPairing:
    def test_earliest_following_change_wins(self):
        lab = label(1, 2000)  # ends 6000
        early = change(5000, 1)  # before the label ends
        first = change(8000, 1)
        later = change(9000, 1)
        pairs, unpaired_labels, unpaired_changes = pair_labels_to_changes(
            [lab], [later, first, early]
        )
        assert pairs == [(lab, first)]
        assert unpaired_labels == []
        assert set(unpaired_changes) == {early, later}

    def test_change_not_shared_between_labels(self):
        a = label(1, 0)  # ends 4000
        b = label(1, 10_000)  # ends 14000
        only = change(15_000, 1)
        pairs, unpaired_labels, _ = pair_labels_to_changes([a, b], [only])
        assert pairs == [(b, only)]
        assert unpaired_labels == [a]

    def test_next_label_start_bounds_the_search(self):
        a = label(1, 0)  # ends 4000
        b = label(1, 8000)  # ends 12000
        late = change(13_000, 1)  # past b's start, so a may not reach over it
        pairs, unpaired_labels, _ = pair_labels_to_changes([a, b], [late])
        assert pairs == [(b, late)]
        assert unpaired_labels == [a]

    def test_other_class_ignored(self):
        lab = label(1, 0)
        other = change(6000, 2)
        pairs, unpaired_labels, unpaired_changes = pair_labels_to_changes([lab], [other])
        assert pairs == []
        assert unpaired_labels == [lab]
        assert unpaired_changes == [other]

    def test_pairs_sorted_by_label_start(self):
        labels = [label(2, 10_000), label(1, 0)]
        changes = [change(16_000, 2), change(6000, 1)]
        pairs, _, _ = pair_labels_to_changes(labels, changes)
        assert [p[0].t_start_ms for p in pairs] == [0, 10_000]


class TestGenerateSelfLabels:
    def model(self, taus=None, d=4000):
        taus = taus or {1: 2000}
        classes = {
            cid: ClassTiming(tau_ms=t, spread_ms=0, count=1) for cid, t in taus.items()
        }
        return ItmModel(d_ms=d, global_tau_ms=2000, classes=classes)

    def test_projection_arithmetic(self):
        result = generate_self_labels([change(10_000, 1)], self.model())
        assert result.labels == [
            IntentionLabel(class_id=1, t_start_ms=4000, t_end_ms=8000, source="slb")
        ]
        assert result.skipped_unmatched == []
        assert result.dropped == []

    def test_unmatched_changes_skipped(self):
        result = generate_self_labels(
            [change(10_000, None), change(20_000, 0)], self.model()
        )
        assert result.labels == []
        assert len(result.skipped_unmatched) == 2

    def test_negative_start_dropped(self):
        result = generate_self_labels([change(5000, 1)], self.model())
        assert result.labels == []
        assert len(result.dropped) == 1
        assert "start" in result.dropped[0][1]

    def test_window_crossing_another_change_dropped(self):
        # label for the second change spans [6000, 10000], which contains
        # the first change at 9000
        first = change(9000, 1)
        second = change(12_000, 2)
        result = generate_self_labels(
            [first, second], self.model(taus={1: 2000, 2: 2000})
        )
        # the first change's own label [3000, 7000] holds no other change
        # and survives; the second is dropped
        assert [l.class_id for l in result.labels] == [1]
        assert [(c.class_id, reason) for c, reason in result.dropped] == [
            (2, "label window crosses state change at 9000 ms")
        ]

    def test_clean_spacing_keeps_both(self):
        first = change(9000, 1)
        second = change(18_000, 2)
        result = generate_self_labels(
            [first, second], self.model(taus={1: 2000, 2: 2000})
        )
        assert [(l.class_id, l.t_start_ms) for l in result.labels] == [
            (1, 3000),
            (2, 12_000),
        ]

    def test_same_class_overlap_drops_later(self):
        # gap 1500 < d_ms, so the windows [4000, 8000] and [5500, 9500]
        # collide without either swallowing the other change
        result = generate_self_labels(
            [change(10_000, 1), change(11_500, 1)], self.model()
        )
        assert len(result.labels) == 1
        assert result.labels[0].t_start_ms == 4000
        assert len(result.dropped) == 1
        assert "overlaps" in result.dropped[0][1]

    def test_unknown_class_uses_global_tau(self):
        model = ItmModel(
            d_ms=4000,
            global_tau_ms=1000,
            classes={1: ClassTiming(tau_ms=2000, spread_ms=0, count=1)},
        )
        result = generate_self_labels([change(10_000, 7)], model)
        assert result.labels[0].t_end_ms == 9000

    def test_empty_model_error(self):
        model = ItmModel(d_ms=4000, global_tau_ms=2000, classes={})
        with pytest.raises(ValidationError, match="no classes"):
            generate_self_labels([change(10_000, 1)], model)

    def test_labels_sorted(self):
        changes = [change(30_000, 2), change(10_000, 1)]
        result = generate_self_labels(changes, self.model(taus={1: 2000, 2: 2000}))
        starts = [l.t_start_ms for l in result.labels]
        assert starts == sorted(starts)


def make_recording(duration_ms):
    stream = SensorStream(
        sensor_id="s",
        samples=(Sample(0, 0.0), Sample(duration_ms, 0.0)),
    )
    return Recording(
        recording_id="r",
        streams=(stream,),
        frames=FrameIndex(entries=()),
        duration_ms=duration_ms,
    )


class TestNegativeWindows:
    def blocked_spans(self, labels, margin, duration):
        spans = [
            (max(0, l.t_start_ms - margin), min(duration, l.t_end_ms + margin))
            for l in labels
        ]
        return spans

    def test_windows_avoid_labels_with_margin(self):
        duration = 120_000
        labels = [label(1, 20_000), label(2, 50_000), label(1, 90_000)]
        result = extract_negative_windows(
            make_recording(duration), labels, count_per_class=3, margin_ms=1000, seed=5
        )
        assert result.requested == 6
        spans = self.blocked_spans(labels, 1000, duration)
        for w in result.windows:
            assert 0 <= w.t_start_ms and w.t_end_ms <= duration
            assert w.t_end_ms - w.t_start_ms == 4000
            for lo, hi in spans:
                assert w.t_end_ms <= lo or w.t_start_ms >= hi

    def test_windows_do_not_overlap_each_other(self):
        duration = 200_000
        labels = [label(1, 40_000)]
        result = extract_negative_windows(
            make_recording(duration), labels, count_per_class=20, margin_ms=500, seed=9
        )
        ordered = sorted(result.windows, key=lambda w: w.t_start_ms)
        for a, b in zip(ordered, ordered[1:]):
            assert a.t_end_ms <= b.t_start_ms

    def test_shortfall_reported_not_raised(self):
        # only the tail gap [5000+margin misses: labels block most of it
        duration = 14_000
        labels = [label(1, 1000), label(2, 6000)]
        result = extract_negative_windows(
            make_recording(duration), labels, count_per_class=5, margin_ms=0, seed=3
        )
        assert result.requested == 10
        assert len(result.windows) == 1
        assert result.shortfall == 9

    def test_no_positive_classes_requests_nothing(self):
        duration = 50_000
        result = extract_negative_windows(
            make_recording(duration), [], count_per_class=5, margin_ms=0, seed=1
        )
        assert result.requested == 0
        assert result.windows == []

    def test_deterministic_for_seed(self):
        duration = 100_000
        labels = [label(1, 30_000), label(2, 60_000)]
        a = extract_negative_windows(
            make_recording(duration), labels, count_per_class=4, margin_ms=800, seed=7
        )
        b = extract_negative_windows(
            make_recording(duration), labels, count_per_class=4, margin_ms=800, seed=7
        )
        assert a.windows == b.windows

    def test_invalid_args_rejected(self):
        rec = make_recording(50_000)
        with pytest.raises(ValidationError):
            extract_negative_windows(rec, [], count_per_class=-1, margin_ms=0, seed=1)
        with pytest.raises(ValidationError):
            extract_negative_windows(rec, [], count_per_class=1, margin_ms=-5, seed=1)

    @given(
        seed=st.integers(0, 2**32),
        margin=st.integers(0, 3000),
        starts=st.lists(
            st.integers(0, 20).map(lambda k: k * 9000), min_size=1, max_size=5, unique=True
        ),
    )
    @settings(deadline=None, max_examples=60)
    def test_never_touches_blocked_time(self, seed, margin, starts):
        duration = 200_000
        labels = [label(1 + (i % 3), s) for i, s in enumerate(sorted(starts))]
        result = extract_negative_windows(
            make_recording(duration), labels, count_per_class=10,
            margin_ms=margin, seed=seed,
        )
        for w in result.windows:
            for lab in labels:
                lo = max(0, lab.t_start_ms - margin)
                hi = min(duration, lab.t_end_ms + margin)
                assert w.t_end_ms <= lo or w.t_start_ms >= hi

    def test_to_class_zero_labels(self):
        windows = extract_negative_windows(
            make_recording(60_000), [label(1, 30_000)], count_per_class=2,
            margin_ms=0, seed=2,
        ).windows
        labels = negatives_to_labels(windows)
        assert len(labels) == len(windows)
        assert all(l.class_id == 0 and l.source == "slb" for l in labels)
        assert all(l.t_end_ms - l.t_start_ms == 4000 for l in labels)
