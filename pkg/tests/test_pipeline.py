from dataclasses import replace

import numpy as np
import pytest

from setlist.backends.qmax import QmaxBackend
from setlist.catalog import load_annotations, load_manifest, load_references
from setlist.errors import EmptyCatalog, MissingFile, UnknownConcert, UsageError
from setlist.evaluation import evaluate, evaluate_results, segments_from_document
from setlist.features import PcpMatrix, SourceKind, parse_feature_file
from setlist.pipeline import (
    RunConfig,
    build_backend,
    finalize,
    identify,
    identify_manifest,
    identify_with_matches,
    labeled_features_from_results,
)
from setlist.postprocess import MatchClassifier, load_raw_matches, save_classifier
from setlist.synthkit import SynthConfig, synth_reference, write_synthetic_dataset
from setlist.windowing import WindowingConfig
from tests.conftest import collect_points, reference

RATE = 2.0
WINDOWING = WindowingConfig(60.0, 15.0, min_tail_s=15.0)


@pytest.fixture
def dataset(tmp_path):
    cfg = SynthConfig(
        seed=3,
        n_references=6,
        ref_duration_range_s=(60.0, 90.0),
        songs_per_concert_range=(3, 3),
        gap_range_s=(5.0, 10.0),
        frame_rate_hz=RATE,
    )
    return load_manifest(write_synthetic_dataset(cfg, 2, tmp_path / "data"))


def load_concert(manifest, concert_id):
    entry = manifest.concert(concert_id)
    concert, _, _ = parse_feature_file(entry.feature_path, source_kind=SourceKind.CONCERT)
    return concert, load_annotations(entry.annotation_path)


class TestIdentify:
    """End-to-end identification of one concert."""

    def test_single_song_with_noise_tails(self, rng):
        song, _ = synth_reference(41, 120.0, RATE)
        other, _ = synth_reference(42, 100.0, RATE)
        tail = rng.uniform(size=(int(10 * RATE), 12))
        concert = PcpMatrix(np.concatenate([tail, song.values, tail]), RATE)

        doc = identify(concert, [reference("song", song), reference("other", other)], RunConfig())
        assert [entry.song_id for entry in doc.entries] == ["song"]
        (entry,) = doc.entries
        assert abs(entry.start_s - 10.0) <= 30.0
        assert abs(entry.end_s - 130.0) <= 30.0
        assert entry.artist == "Artist of song"
        assert doc.fingerprint.backend == "qmax"
        assert doc.fingerprint.classifier_id == "none"

    def test_synthetic_concert(self, dataset):
        references = load_references(dataset)
        concert, annotations = load_concert(dataset, "concert-00")
        doc = identify(concert, references, RunConfig(windowing=WINDOWING), "concert-00")
        report = evaluate(segments_from_document(doc), annotations)
        assert report.dap == 1.0
        assert report.dlp > 0.5

    def test_empty_catalog(self, rng):
        with pytest.raises(EmptyCatalog):
            identify(PcpMatrix(rng.uniform(size=(100, 12)), RATE), [], RunConfig())

    def test_parallelism_does_not_change_the_document(self, dataset):
        references = load_references(dataset)
        concert, _ = load_concert(dataset, "concert-01")
        serial = identify(concert, references, RunConfig(windowing=WINDOWING, parallelism=1), "concert-01")
        parallel = identify(concert, references, RunConfig(windowing=WINDOWING, parallelism=8), "concert-01")
        assert serial == parallel

    def test_other_backends_run(self, dataset):
        references = load_references(dataset)
        concert, annotations = load_concert(dataset, "concert-00")
        for backend in ("2dftm", "embed-fallback"):
            doc = identify(concert, references, RunConfig(backend=backend, windowing=WINDOWING), "concert-00")
            assert doc.fingerprint.backend == backend
            assert doc.entries

    def test_keep_every_halves_the_windows(self, dataset):
        references = load_references(dataset)
        concert, _ = load_concert(dataset, "concert-00")
        full = identify_with_matches(concert, references, RunConfig(windowing=WINDOWING), "c")
        half = identify_with_matches(concert, references, RunConfig(windowing=WINDOWING, keep_every=2), "c")
        assert [m.window_index for m in half.raw_matches] == [m.window_index for m in full.raw_matches][::2]
        assert half.document.fingerprint.keep_every == 2

    def test_classifier_marks_entries(self, dataset, tmp_path):
        references = load_references(dataset)
        concert, _ = load_concert(dataset, "concert-00")
        clf = MatchClassifier(weights=(0.0, 0.0), bias=-1.0, feature_means=(0.0, 0.0),
                              feature_stds=(1.0, 1.0), id="reject-all")
        path = tmp_path / "reject.ini"
        save_classifier(clf, path)

        plain = identify(concert, references, RunConfig(windowing=WINDOWING))
        filtered = identify(concert, references, RunConfig(windowing=WINDOWING, classifier_path=path))
        assert len(filtered.entries) == len(plain.entries)
        assert not any(entry.accepted for entry in filtered.entries)
        assert filtered.fingerprint.classifier_id == "reject-all"


class TestStages:
    def test_raw_matches_replay_to_the_same_document(self, dataset, tmp_path):
        references = load_references(dataset)
        cfg = RunConfig(windowing=WINDOWING, out_dir=tmp_path / "results", dump_raw=True)
        identify_manifest(dataset, cfg, ["concert-00"])
        concert, _ = load_concert(dataset, "concert-00")
        result = identify_with_matches(concert, references, cfg, "concert-00")

        raw = load_raw_matches(tmp_path / "results" / "concert-00.raw.csv")
        assert tuple(raw) == result.raw_matches
        document, segments = finalize(raw, references, result.document.fingerprint, "concert-00", concert.frame_rate_hz)
        assert document == result.document
        assert tuple(segments) == result.segments

    def test_manifest_replay_from_raw_dumps(self, dataset, tmp_path):
        cfg = RunConfig(windowing=WINDOWING, out_dir=tmp_path / "results", dump_raw=True)
        identify_manifest(dataset, cfg)
        replayed = replace(cfg, out_dir=tmp_path / "replayed", dump_raw=False)
        written = identify_manifest(dataset, replayed, raw_dir=tmp_path / "results")

        assert [path.name for path in written] == ["concert-00.setlist.json", "concert-01.setlist.json"]
        for path in written:
            assert path.read_text() == (tmp_path / "results" / path.name).read_text()

    def test_replay_without_dump(self, dataset, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(MissingFile):
            identify_manifest(dataset, RunConfig(out_dir=tmp_path / "results"), ["concert-00"],
                              raw_dir=tmp_path / "empty")

    def test_retrieval_reduces_over_sorted_ids(self, rng):
        song, _ = synth_reference(5, 60.0, RATE)
        concert = PcpMatrix(song.values, RATE)
        twins = [reference("b-copy", song), reference("a-copy", song)]
        result = identify_with_matches(concert, twins, RunConfig(windowing=WINDOWING), "c")
        assert {m.ref_id for m in result.raw_matches} == {"a-copy"}


class TestSilentInput:
    """Silent stretches stay unlabeled instead of failing the concert."""

    @pytest.mark.parametrize("backend", ["qmax", "2dftm", "embed-fallback"])
    def test_silent_stretches_are_left_unmatched(self, backend):
        song, _ = synth_reference(41, 120.0, RATE)
        other, _ = synth_reference(42, 100.0, RATE)
        concert = PcpMatrix(np.concatenate([
            np.zeros((int(90 * RATE), 12)), song.values, np.zeros((int(60 * RATE), 12)),
        ]), RATE)
        refs = [reference("song", song), reference("other", other)]

        result = identify_with_matches(concert, refs, RunConfig(backend=backend, windowing=WINDOWING), "c")
        assert result.document.entries
        assert min(m.start_s for m in result.raw_matches) == 45.0
        assert max(m.end_s for m in result.raw_matches) == 255.0
        assert all(45.0 <= e.start_s and e.end_s <= 255.0 for e in result.document.entries)

    def test_silent_concert_gives_an_empty_setlist(self):
        song, _ = synth_reference(41, 120.0, RATE)
        concert = PcpMatrix(np.zeros((int(200 * RATE), 12)), RATE)
        result = identify_with_matches(concert, [reference("song", song)], RunConfig(windowing=WINDOWING), "c")
        assert result.raw_matches == ()
        assert result.document.entries == ()

    def test_silent_reference_is_never_matched(self):
        song, _ = synth_reference(41, 120.0, RATE)
        quiet = PcpMatrix(np.zeros((int(120 * RATE), 12)), RATE)
        doc = identify(PcpMatrix(song.values, RATE), [reference("a-quiet", quiet), reference("song", song)],
                       RunConfig(windowing=WINDOWING))
        assert {entry.song_id for entry in doc.entries} == {"song"}

    def test_only_silent_references(self, rng):
        quiet = PcpMatrix(np.zeros((int(120 * RATE), 12)), RATE)
        with pytest.raises(EmptyCatalog):
            identify(PcpMatrix(rng.uniform(size=(240, 12)), RATE), [reference("quiet", quiet)], RunConfig())


class TestIdentifyManifest:
    def test_writes_documents_and_evaluates(self, dataset, tmp_path):
        cfg = RunConfig(windowing=WINDOWING, out_dir=tmp_path / "results")
        written = identify_manifest(dataset, cfg)
        assert [path.name for path in written] == ["concert-00.setlist.json", "concert-01.setlist.json"]
        assert not list((tmp_path / "results").glob("*.raw.csv"))

        _, pooled = evaluate_results(tmp_path / "results", dataset, tmp_path / "report.csv")
        assert pooled.ta == 6
        assert pooled.dap == 1.0

        samples = labeled_features_from_results(tmp_path / "results", dataset)
        assert len(samples) == pooled.tp + pooled.fp
        assert all(distance >= 0 and duration > 0 for (distance, duration), _ in samples)

    def test_unknown_concert(self, dataset, tmp_path):
        with pytest.raises(UnknownConcert):
            identify_manifest(dataset, RunConfig(out_dir=tmp_path / "results"), ["concert-99"])


class TestRunConfig:
    def test_invalid_parallelism(self):
        with pytest.raises(UsageError):
            RunConfig(parallelism=0)

    def test_missing_classifier(self, tmp_path):
        with pytest.raises(MissingFile):
            RunConfig(classifier_path=tmp_path / "missing.ini")

    def test_embed_backend_needs_files(self):
        with pytest.raises(UsageError):
            build_backend(RunConfig(backend="embed"))

    def test_unknown_backend(self):
        with pytest.raises(UsageError):
            build_backend(replace(RunConfig(), backend="dmax"))

    def test_default_backend(self):
        assert isinstance(build_backend(RunConfig()), QmaxBackend)


class TestPipelineMetrics:
    def test_counts_windows_and_distances(self, metric_reader, dataset):
        from otel.metrics.custom_metrics_manager import CustomMetricsManager

        CustomMetricsManager().get_or_create_pipeline_metrics_manager()
        references = load_references(dataset)
        concert, _ = load_concert(dataset, "concert-00")
        result = identify_with_matches(concert, references, RunConfig(windowing=WINDOWING), "concert-00")

        points = collect_points(metric_reader)
        n_windows = len(result.raw_matches)
        assert sum(p.value for p in points["setlist_windows_processed_count"]) == n_windows
        assert sum(p.value for p in points["setlist_distance_computations_count"]) == n_windows * len(references)
        assert sum(p.value for p in points["setlist_segments_emitted_count"]) == len(result.segments)
        stages = {p.attributes["stage"] for p in points["setlist_stage_duration_milliseconds"]}
        assert stages == {"windowing", "retrieval", "postprocess"}
        assert all(p.attributes["backend"] == "qmax" for p in points["setlist_windows_processed_count"])
