import json

import pandas as pd
import pytest

from setlist.catalog import (
    Annotation,
    AudioQuality,
    CatalogManifest,
    ConcertEntry,
    ConfigFingerprint,
    Genre,
    SetlistDocument,
    SetlistEntry,
    write_annotations,
    write_setlist_document,
)
from setlist.errors import MissingResults, OverlappingSegments, UnknownConcert
from setlist.evaluation import (
    REPORT_COLUMNS,
    TOTAL_ROW,
    EvalReport,
    aggregate,
    evaluate,
    evaluate_results,
    segments_from_document,
)
from setlist.postprocess import Segment


def concert_entry(concert_id, quality, genre, tmp_path=None):
    root = tmp_path if tmp_path is not None else "/nonexistent"
    return ConcertEntry(
        concert_id=concert_id,
        feature_path=f"{root}/{concert_id}.slpc",
        annotation_path=f"{root}/{concert_id}.csv",
        audio_quality=quality,
        genre=genre,
    )


class TestEvaluate:
    """TP/FP/DAP/DLP of single concerts."""

    def test_two_true_positives_on_one_annotation(self):
        report = evaluate([Segment("A", 10, 50, 0.1), Segment("A", 60, 90, 0.1)], [Annotation("A", 0, 100)])
        assert (report.tp, report.fp) == (2, 0)
        assert report.dap == 1.0
        assert report.dlp == pytest.approx(0.70)

    def test_wrong_song(self):
        report = evaluate([Segment("B", 10, 50, 0.1)], [Annotation("A", 0, 100)])
        assert (report.tp, report.fp, report.dap, report.dlp) == (0, 1, 0.0, 0.0)

    def test_no_segments(self):
        report = evaluate([], [Annotation("A", 0, 100)])
        assert (report.tp, report.fp, report.dap, report.dlp) == (0, 0, 0.0, 0.0)
        assert (report.ta, report.tl) == (1, 100.0)

    def test_no_annotations(self):
        report = evaluate([Segment("A", 0, 10, 0.1)], [])
        assert (report.tp, report.fp, report.dap, report.dlp) == (0, 1, 0.0, 0.0)

    def test_endpoint_contact_is_not_a_match(self):
        report = evaluate([Segment("A", 100, 150, 0.1)], [Annotation("A", 0, 100)])
        assert (report.tp, report.fp) == (0, 1)

    def test_one_segment_over_two_annotations(self):
        report = evaluate(
            [Segment("A", 50, 250, 0.1)],
            [Annotation("A", 0, 100), Annotation("B", 100, 200), Annotation("A", 200, 300)],
        )
        assert report.tp == 1
        assert report.detected == 2
        assert report.dap == pytest.approx(2 / 3)
        assert report.dlp == pytest.approx(100 / 300)

    def test_order_invariance(self):
        segments = [Segment("A", 0, 40, 0.1), Segment("B", 50, 90, 0.2), Segment("A", 120, 200, 0.3)]
        annotations = [Annotation("A", 0, 45), Annotation("B", 45, 100), Annotation("C", 110, 210)]
        assert evaluate(segments, annotations) == evaluate(segments[::-1], annotations)

    def test_split_segment_adds_a_tp_only(self):
        annotations = [Annotation("A", 0, 100)]
        whole = evaluate([Segment("A", 20, 80, 0.1)], annotations)
        split = evaluate([Segment("A", 20, 50, 0.1), Segment("A", 50, 80, 0.1)], annotations)
        assert split.tp == whole.tp + 1
        assert split.dlp == pytest.approx(whole.dlp)

    def test_overlapping_segments(self):
        with pytest.raises(OverlappingSegments):
            evaluate([Segment("A", 0, 50, 0.1), Segment("B", 40, 90, 0.1)], [])


class TestAggregate:
    manifest = CatalogManifest(
        references=(),
        concerts=(
            concert_entry("c1", AudioQuality.AQ_A, Genre.ROCK),
            concert_entry("c2", AudioQuality.AQ_B, Genre.ROCK),
            concert_entry("c3", AudioQuality.AQ_A, Genre.POP),
        ),
    )

    def test_single_concert(self):
        report = EvalReport(tp=3, fp=1, detected=2, ta=4, matched_s=50.0, tl=100.0)
        pooled = aggregate([("c1", report)], self.manifest)
        assert (pooled.tp, pooled.fp, pooled.dap, pooled.dlp) == (3, 1, 0.5, 0.5)

    def test_pooled_not_averaged(self):
        reports = [
            ("c1", EvalReport(detected=5, ta=10, matched_s=10.0, tl=100.0)),
            ("c2", EvalReport(detected=10, ta=10, matched_s=300.0, tl=300.0)),
        ]
        pooled = aggregate(reports, self.manifest)
        assert pooled.dap == 0.75
        assert pooled.dlp == pytest.approx(310 / 400)

    def test_groups(self):
        reports = [
            ("c1", EvalReport(tp=1, detected=1, ta=2, tl=10.0)),
            ("c2", EvalReport(tp=2, detected=2, ta=2, tl=10.0)),
            ("c3", EvalReport(fp=4, ta=1, tl=10.0)),
        ]
        pooled = aggregate(reports, self.manifest)
        assert list(pooled.groups) == ["aq:AQ-A", "aq:AQ-B", "genre:pop", "genre:rock"]
        assert pooled.groups["aq:AQ-A"].tp == 1
        assert pooled.groups["aq:AQ-A"].fp == 4
        assert pooled.groups["genre:rock"].dap == 0.75

    def test_unknown_concert(self):
        with pytest.raises(UnknownConcert):
            aggregate([("c9", EvalReport())], self.manifest)


class TestEvaluateResults:
    """Scoring a results directory against a manifest."""

    fingerprint = ConfigFingerprint(backend="qmax", window_s=120.0, hop_s=30.0)

    def setup_concert(self, tmp_path, concert_id, quality, genre, annotations, entries):
        entry = concert_entry(concert_id, quality, genre, tmp_path)
        write_annotations(annotations, entry.annotation_path)
        write_setlist_document(SetlistDocument(concert_id, tuple(entries), self.fingerprint),
                               tmp_path / "results" / f"{concert_id}.setlist.json")
        return entry

    def test_perfect_results(self, tmp_path):
        (tmp_path / "results").mkdir()
        concerts = (
            self.setup_concert(
                tmp_path, "c1", AudioQuality.AQ_A, Genre.ROCK,
                [Annotation("s1", 0, 100), Annotation("s2", 110, 200)],
                [SetlistEntry("s1", "", "", 0, 100, 0.1), SetlistEntry("s2", "", "", 110, 200, 0.1)],
            ),
            self.setup_concert(
                tmp_path, "c2", AudioQuality.AQ_C, Genre.ELECTRONIC,
                [Annotation("s3", 5, 50)],
                [SetlistEntry("s3", "", "", 5, 50, 0.2), SetlistEntry("s9", "", "", 60, 70, 0.9, accepted=False)],
            ),
        )
        manifest = CatalogManifest(references=(), concerts=concerts)
        out = tmp_path / "report.csv"

        per_concert, pooled = evaluate_results(tmp_path / "results", manifest, out)
        assert [concert_id for concert_id, _ in per_concert] == ["c1", "c2"]
        assert (pooled.tp, pooled.fp, pooled.dap, pooled.dlp) == (3, 0, 1.0, 1.0)

        table = pd.read_csv(out, keep_default_na=False)
        assert list(table.columns) == REPORT_COLUMNS
        assert set(table["group"]) == {"", "aq:AQ-A", "aq:AQ-C", "genre:electronic", "genre:rock", TOTAL_ROW}
        document = json.loads(out.with_suffix(".json").read_text())
        assert document[TOTAL_ROW]["DAP"] == 1.0

        _, before = evaluate_results(tmp_path / "results", manifest, out, accepted_only=False)
        assert before.fp == 1

    def test_empty_results_dir(self, tmp_path):
        (tmp_path / "results").mkdir()
        with pytest.raises(MissingResults):
            evaluate_results(tmp_path / "results", CatalogManifest((), ()), tmp_path / "report.csv")

    def test_missing_results_dir(self, tmp_path):
        with pytest.raises(MissingResults):
            evaluate_results(tmp_path / "nowhere", CatalogManifest((), ()), tmp_path / "report.csv")

    def test_segments_from_document(self):
        doc = SetlistDocument(
            "c",
            (SetlistEntry("a", "", "", 0, 10, 0.1), SetlistEntry("b", "", "", 10, 20, 0.8, accepted=False)),
            self.fingerprint,
        )
        assert [s.ref_id for s in segments_from_document(doc)] == ["a"]
        assert [s.ref_id for s in segments_from_document(doc, accepted_only=False)] == ["a", "b"]
