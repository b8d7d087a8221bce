import numpy as np
import pytest

from setlist.catalog import Annotation
from setlist.errors import IoFailure, ParseError, SingleClass, TooFewSamples, UnsortedInput
from setlist.postprocess import (
    MatchClassifier,
    RawMatch,
    Segment,
    apply_classifier,
    consolidate,
    dump_raw_matches,
    label_segments,
    load_classifier,
    load_raw_matches,
    save_classifier,
    train_classifier,
)


def matches(*rows):
    """(start, end, ref, distance) rows, numbered as consecutive windows."""
    return [RawMatch(i, float(start), float(end), ref, distance) for i, (start, end, ref, distance) in enumerate(rows)]


def random_matches(rng, n_refs=3):
    count = int(rng.integers(1, 16))
    starts = np.sort(rng.integers(0, 60, size=count))
    return [
        RawMatch(
            i,
            float(start),
            float(start + rng.integers(1, 25)),
            f"ref-{rng.integers(n_refs)}",
            float(np.round(rng.uniform(0, 1), 3)),
        )
        for i, start in enumerate(starts)
    ]


def covered(intervals, start, end):
    """Whether [start, end) lies inside the union of intervals (all on an integer grid)."""
    return all(any(a <= t and t + 1 <= b for a, b in intervals) for t in range(int(start), int(end)))


class TestConsolidateExamples:
    """Hand-worked consolidation cases."""

    def test_same_reference_overlap_merges(self):
        result = consolidate(matches((0, 120, "A", 0.2), (30, 150, "A", 0.15)))
        assert result == [Segment("A", 0.0, 150.0, 0.15)]

    def test_overlap_goes_to_lower_distance(self):
        result = consolidate(matches((0, 120, "A", 0.2), (60, 180, "B", 0.1)))
        assert result == [Segment("A", 0.0, 60.0, 0.2), Segment("B", 60.0, 180.0, 0.1)]

    def test_single_match(self):
        assert consolidate(matches((30, 150, "A", 0.4))) == [Segment("A", 30.0, 150.0, 0.4)]

    def test_empty(self):
        assert consolidate([]) == []

    def test_split_parts_keep_their_own_distance(self):
        rows = [
            RawMatch(0, 0.0, 120.0, "A", 0.3),
            RawMatch(1, 90.0, 210.0, "A", 0.6),
            RawMatch(2, 120.0, 180.0, "B", 0.1),
            RawMatch(3, 180.0, 300.0, "A", 0.5),
        ]
        assert consolidate(rows) == [
            Segment("A", 0.0, 120.0, 0.3),
            Segment("B", 120.0, 180.0, 0.1),
            Segment("A", 180.0, 300.0, 0.5),
        ]

    def test_abutting_same_reference_merges(self):
        result = consolidate(matches((0, 30, "A", 0.5), (30, 60, "A", 0.4)))
        assert result == [Segment("A", 0.0, 60.0, 0.4)]

    def test_slivers_are_dropped(self):
        result = consolidate(matches((0, 100, "A", 0.1), (0, 100.05, "B", 0.5)), tolerance_s=0.1)
        assert result == [Segment("A", 0.0, 100.0, 0.1)]

    def test_gap_within_tolerance_is_joined(self):
        result = consolidate(matches((0, 10, "A", 0.2), (10.05, 20, "A", 0.3)), tolerance_s=0.1)
        assert result == [Segment("A", 0.0, 20.0, 0.2)]

    def test_gap_beyond_tolerance_is_kept(self):
        result = consolidate(matches((0, 10, "A", 0.2), (10.5, 20, "A", 0.3)), tolerance_s=0.1)
        assert len(result) == 2

    def test_unsorted_input(self):
        with pytest.raises(UnsortedInput):
            consolidate([RawMatch(1, 30.0, 150.0, "A", 0.1), RawMatch(0, 0.0, 120.0, "A", 0.1)])


class TestConsolidateProperties:
    """Properties over random match sets on an integer time grid."""

    def test_random_match_sets(self, rng):
        for _ in range(1000):
            raw = random_matches(rng)
            segments = consolidate(raw, tolerance_s=0.1)
            ordered = sorted(segments, key=lambda s: s.start_s)
            assert ordered == segments

            for previous, current in zip(segments, segments[1:]):
                assert previous.end_s <= current.start_s

            union = [(m.start_s, m.end_s) for m in raw]
            for segment in segments:
                assert segment.start_s < segment.end_s
                assert covered(union, segment.start_s, segment.end_s)
                overlapping = [
                    m.distance for m in raw
                    if m.ref_id == segment.ref_id and m.start_s < segment.end_s and m.end_s > segment.start_s
                ]
                assert segment.distance == min(overlapping)

            replay = [RawMatch(i, s.start_s, s.end_s, s.ref_id, s.distance) for i, s in enumerate(segments)]
            assert consolidate(replay, tolerance_s=0.1) == segments

    def test_every_covered_instant_is_kept(self, rng):
        for _ in range(200):
            raw = random_matches(rng)
            segments = consolidate(raw, tolerance_s=0.1)
            union = [(m.start_s, m.end_s) for m in raw]
            kept = [(s.start_s, s.end_s) for s in segments]
            for a, b in union:
                assert covered(kept, a, b)


class TestLabelSegments:
    annotations = [Annotation("A", 0.0, 100.0)]

    @pytest.mark.parametrize("segment, correct", [
        (Segment("A", 10.0, 50.0, 0.1), True),
        (Segment("B", 10.0, 50.0, 0.1), False),
        (Segment("A", 100.0, 150.0, 0.1), False),
    ])
    def test_positive_overlap_rule(self, segment, correct):
        assert label_segments([segment], self.annotations) == [(segment, correct)]


def separable_samples(rng, n=100):
    positives = [((float(rng.uniform(0.0, 0.3)), float(rng.uniform(60, 300))), True) for _ in range(n)]
    negatives = [((float(rng.uniform(0.7, 1.0)), float(rng.uniform(1, 30))), False) for _ in range(n)]
    return positives + negatives


class TestClassifier:
    """Linear SVM training, application and persistence."""

    def test_separable_clusters(self, rng):
        samples = separable_samples(rng)
        clf = train_classifier(samples, seed=7)
        segments = [Segment("x", 0.0, duration, distance) for (distance, duration), _ in samples]
        decisions = apply_classifier(clf, segments)
        accuracy = np.mean([accepted == correct for (_, accepted), (_, correct) in zip(decisions, samples)])
        assert accuracy >= 0.95

    def test_deterministic(self, rng):
        samples = separable_samples(rng, n=30)
        assert train_classifier(samples, seed=3) == train_classifier(samples, seed=3)

    def test_single_class(self):
        with pytest.raises(SingleClass):
            train_classifier([((0.1, 100.0), True)] * 20)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            train_classifier([((0.1, 100.0), True), ((0.9, 10.0), False)])

    def test_constant_feature(self):
        samples = [((0.1 * i, 50.0), i < 5) for i in range(10)]
        clf = train_classifier(samples)
        assert clf.feature_stds[1] == 1.0

    def test_sign_of_distance_weight(self):
        clf = MatchClassifier(weights=(-1.0, 0.0), bias=0.0, feature_means=(0.5, 100.0), feature_stds=(0.1, 10.0))
        segments = [Segment("a", 0.0, 80.0, 0.4), Segment("b", 0.0, 80.0, 0.6), Segment("c", 0.0, 300.0, 0.5)]
        assert [accepted for _, accepted in apply_classifier(clf, segments)] == [True, False, True]

    def test_order_preserved_and_empty(self):
        clf = MatchClassifier(weights=(-1.0, 1.0), bias=0.5, feature_means=(0.5, 100.0), feature_stds=(0.1, 10.0))
        segments = [Segment(str(i), 0.0, 10.0 * (i + 1), 0.1 * i) for i in range(8)]
        assert [s for s, _ in apply_classifier(clf, segments)] == segments
        assert apply_classifier(clf, []) == []

    def test_non_positive_std(self):
        with pytest.raises(ParseError):
            MatchClassifier(weights=(1.0, 1.0), bias=0.0, feature_means=(0.0, 0.0), feature_stds=(1.0, 0.0))

    def test_save_and_load(self, rng, tmp_path):
        clf = train_classifier(separable_samples(rng, n=20), seed=1, classifier_id="qmax-120-30")
        path = tmp_path / "clf.ini"
        save_classifier(clf, path)
        assert load_classifier(path) == clf

    def test_load_errors(self, tmp_path):
        with pytest.raises(IoFailure):
            load_classifier(tmp_path / "missing.ini")
        path = tmp_path / "bad.ini"
        path.write_text("[classifier]\nweights = 1.0\nbias = 0\n")
        with pytest.raises(ParseError):
            load_classifier(path)


class TestRawMatchFiles:
    def test_dump_and_load(self, tmp_path):
        raw = [RawMatch(0, 0.0, 120.0, "007", 0.1 + 0.2), RawMatch(1, 30.0, 150.0, "song-a", 1e9)]
        path = tmp_path / "c.raw.csv"
        dump_raw_matches(raw, path)
        assert load_raw_matches(path) == raw

    def test_bad_header(self, tmp_path):
        path = tmp_path / "c.raw.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ParseError):
            load_raw_matches(path)
