"""
End-to-end identification: windows, per-window top-1 retrieval, consolidation, optional
classifier, results document.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from opentelemetry import trace

from otel.otel_utils import get_pipeline_metrics_manager
from otel.utils.tracing_executor import map_with_otel_context
from setlist.backends import make_backend
from setlist.backends.embed import load_embeddings
from setlist.backends.qmax import QmaxParams
from setlist.backends.tdftm import TdftmParams
from setlist.catalog import (
    CatalogManifest,
    ConfigFingerprint,
    ReferenceTrack,
    SetlistDocument,
    SetlistEntry,
    load_annotations,
    load_references,
    write_setlist_document,
)
from setlist.errors import EmptyCatalog, MissingFile, UnknownConcert, UsageError
from setlist.evaluation import RESULT_SUFFIX, load_result_documents, segments_from_document
from setlist.features import BeatGrid, PathLike, PcpMatrix, SourceKind, parse_feature_file
from setlist.logging_utils import get_setlist_logger
from setlist.os_utils import ensure_dir
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
)
from setlist.windowing import QueryWindow, WindowingConfig, audible_windows, decimate_windows, make_windows

logger = get_setlist_logger()
tracer = trace.get_tracer(__name__)

RAW_SUFFIX = ".raw.csv"


@dataclass(frozen=True)
class RunConfig:
    backend: str = "qmax"
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    classifier_path: Optional[Path] = None
    parallelism: int = 1
    keep_every: int = 1
    out_dir: Path = Path("results")
    dump_raw: bool = False
    qmax: QmaxParams = field(default_factory=QmaxParams)
    tdftm: TdftmParams = field(default_factory=TdftmParams)
    reference_embeddings_path: Optional[Path] = None
    query_embeddings_path: Optional[Path] = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise UsageError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.keep_every < 1:
            raise UsageError(f"keep_every must be >= 1, got {self.keep_every}")
        for path in (self.classifier_path, self.reference_embeddings_path, self.query_embeddings_path):
            if path is not None and not Path(path).is_file():
                raise MissingFile(f"{path} does not exist")


@dataclass(frozen=True)
class IdentificationResult:
    document: SetlistDocument
    raw_matches: Tuple[RawMatch, ...]
    segments: Tuple[Segment, ...]


def build_backend(cfg: RunConfig):
    reference_embeddings = query_embeddings = None
    if cfg.reference_embeddings_path is not None:
        reference_embeddings = load_embeddings(cfg.reference_embeddings_path)
    if cfg.query_embeddings_path is not None:
        query_embeddings = load_embeddings(cfg.query_embeddings_path)
    return make_backend(cfg.backend, cfg.qmax, cfg.tdftm, reference_embeddings, query_embeddings)


def audible_references(references: Sequence[ReferenceTrack]) -> List[ReferenceTrack]:
    """
    The references with non-zero content; silent ones can never be matched.

    Raises:
        EmptyCatalog: If every reference is silent.
    """
    audible = []
    for ref in references:
        if ref.features.is_silent:
            logger.debug(f"Reference {ref.track_id} is silent and is never matched")
        else:
            audible.append(ref)
    if references and not audible:
        raise EmptyCatalog("Every reference in the catalog is silent")
    return audible


def run_fingerprint(cfg: RunConfig, backend_name: str, classifier: Optional[MatchClassifier] = None) -> ConfigFingerprint:
    return ConfigFingerprint(
        backend=backend_name,
        window_s=cfg.windowing.window_s,
        hop_s=cfg.windowing.hop_s,
        keep_every=cfg.keep_every,
        classifier_id=classifier.id if classifier is not None else "none",
    )


def _record_stage(backend_name: str, stage: str, started: float) -> None:
    metrics_manager = get_pipeline_metrics_manager()
    if metrics_manager is not None:
        metrics_manager.record_stage_duration_milliseconds(backend_name, stage, (time.perf_counter() - started) * 1000)


def retrieve(
        backend,
        windows: Sequence[QueryWindow],
        reference_ids: Sequence[str],
        concert_id: str = "",
        parallelism: int = 1,
) -> List[RawMatch]:
    """
    Finds the closest reference for every window. Silent windows get no match.

    Pairwise backends fan out over (window, reference) pairs; the per-window reduction runs
    over references in lexicographic order and keeps the first minimum, so the result does
    not depend on the number of workers.
    """
    audible = audible_windows(windows)
    if len(audible) < len(windows):
        logger.debug(f"{concert_id}: {len(windows) - len(audible)} silent windows left unmatched")
    windows = audible
    ordered_ids = sorted(reference_ids)
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        queries = map_with_otel_context(executor, lambda w: backend.prepare_query(w, concert_id), windows)
        if backend.pairwise:
            pairs = [(n, ref_id) for n in range(len(windows)) for ref_id in ordered_ids]
            distances = map_with_otel_context(executor, lambda pair: backend.distance(queries[pair[0]], pair[1]), pairs)
            best = []
            for n in range(len(windows)):
                row = distances[n * len(ordered_ids):(n + 1) * len(ordered_ids)]
                position = min(range(len(row)), key=lambda i: row[i])
                best.append((ordered_ids[position], row[position]))
            computations = len(pairs)
        else:
            best = map_with_otel_context(executor, backend.search, queries)
            computations = len(windows) * len(ordered_ids)

    metrics_manager = get_pipeline_metrics_manager()
    if metrics_manager is not None:
        metrics_manager.increment_windows_processed(backend.name, len(windows))
        metrics_manager.increment_distance_computations(backend.name, computations)

    return [
        RawMatch(window.index, window.start_s, window.end_s, ref_id, float(distance))
        for window, (ref_id, distance) in zip(windows, best)
    ]


def finalize(
        raw_matches: Sequence[RawMatch],
        references: Sequence[ReferenceTrack],
        fingerprint: ConfigFingerprint,
        concert_id: str,
        frame_rate_hz: float,
        classifier: Optional[MatchClassifier] = None,
) -> Tuple[SetlistDocument, List[Segment]]:
    """Consolidation, classification and document assembly; usable on re-ingested raw matches."""
    with tracer.start_as_current_span("consolidation"):
        segments = consolidate(raw_matches, tolerance_s=1.0 / frame_rate_hz)
    with tracer.start_as_current_span("classification"):
        if classifier is not None:
            decisions = apply_classifier(classifier, segments)
        else:
            decisions = [(segment, True) for segment in segments]

    metadata: Dict[str, ReferenceTrack] = {ref.track_id: ref for ref in references}
    entries = []
    for segment, accepted in decisions:
        ref = metadata.get(segment.ref_id)
        entries.append(SetlistEntry(
            song_id=segment.ref_id,
            artist=ref.artist if ref else "",
            title=ref.title if ref else "",
            start_s=segment.start_s,
            end_s=segment.end_s,
            distance=segment.distance,
            accepted=accepted,
        ))

    metrics_manager = get_pipeline_metrics_manager()
    if metrics_manager is not None:
        n_accepted = sum(accepted for _, accepted in decisions)
        metrics_manager.increment_segments_emitted(fingerprint.backend, True, n_accepted)
        metrics_manager.increment_segments_emitted(fingerprint.backend, False, len(decisions) - n_accepted)
    return SetlistDocument(concert_id, tuple(entries), fingerprint), segments


def identify_with_matches(
        concert: PcpMatrix,
        references: Sequence[ReferenceTrack],
        cfg: RunConfig,
        concert_id: str = "concert",
        beats: Optional[BeatGrid] = None,
        backend=None,
        classifier: Optional[MatchClassifier] = None,
) -> IdentificationResult:
    if not references:
        raise EmptyCatalog("The reference catalog is empty")
    if backend is None:
        backend = build_backend(cfg)
    if classifier is None and cfg.classifier_path is not None:
        classifier = load_classifier(cfg.classifier_path)

    with tracer.start_as_current_span("identify") as span:
        span.set_attribute("setlist.concert_id", concert_id)
        span.set_attribute("setlist.backend", backend.name)

        started = time.perf_counter()
        with tracer.start_as_current_span("windowing"):
            windows = decimate_windows(make_windows(concert, cfg.windowing, beats), cfg.keep_every)
        _record_stage(backend.name, "windowing", started)

        started = time.perf_counter()
        with tracer.start_as_current_span("retrieval"):
            candidates = audible_references(references)
            backend.prepare_references(candidates)
            raw_matches = retrieve(
                backend, windows, [ref.track_id for ref in candidates], concert_id, cfg.parallelism,
            )
        _record_stage(backend.name, "retrieval", started)

        started = time.perf_counter()
        fingerprint = run_fingerprint(cfg, backend.name, classifier)
        document, segments = finalize(
            raw_matches, references, fingerprint, concert_id, concert.frame_rate_hz, classifier,
        )
        _record_stage(backend.name, "postprocess", started)

    logger.info(
        f"Identified {concert_id}: {len(windows)} windows, {len(segments)} segments, "
        f"{sum(e.accepted for e in document.entries)} accepted ({backend.name})"
    )
    return IdentificationResult(document, tuple(raw_matches), tuple(segments))


def identify(
        concert: PcpMatrix,
        references: Sequence[ReferenceTrack],
        cfg: RunConfig,
        concert_id: str = "concert",
        beats: Optional[BeatGrid] = None,
        backend=None,
        classifier: Optional[MatchClassifier] = None,
) -> SetlistDocument:
    """
    Runs the whole pipeline on one concert.

    The document is identical for any ``cfg.parallelism``.

    Raises:
        EmptyCatalog: If there are no references.
    """
    return identify_with_matches(concert, references, cfg, concert_id, beats, backend, classifier).document


def identify_manifest(
        manifest: CatalogManifest,
        cfg: RunConfig,
        concert_ids: Optional[Sequence[str]] = None,
        frame_rate_hz: Optional[float] = None,
        raw_dir: Optional[PathLike] = None,
) -> List[Path]:
    """
    Identifies the manifest's concerts (all of them, or ``concert_ids``) and writes
    ``<concert_id>.setlist.json`` (and ``<concert_id>.raw.csv`` with ``dump_raw``) into ``cfg.out_dir``.

    With ``raw_dir`` the retrieval stage is skipped: each concert's ``<concert_id>.raw.csv``
    is read from there and only consolidated, classified and written.

    Raises:
        MissingFile: If ``raw_dir`` lacks the dump of a selected concert.
    """
    known = {entry.concert_id for entry in manifest.concerts}
    unknown = sorted(set(concert_ids or ()) - known)
    if unknown:
        raise UnknownConcert(f"Concerts not in the manifest: {', '.join(unknown)}")
    references = load_references(manifest, frame_rate_hz)
    if not references:
        raise EmptyCatalog("The manifest lists no references")
    backend = build_backend(cfg) if raw_dir is None else None
    classifier = load_classifier(cfg.classifier_path) if cfg.classifier_path is not None else None
    out_dir = ensure_dir(cfg.out_dir)

    written = []
    for entry in manifest.concerts:
        if concert_ids is not None and entry.concert_id not in concert_ids:
            continue
        concert, _, beats = parse_feature_file(entry.feature_path, frame_rate_hz, SourceKind.CONCERT)
        if raw_dir is None:
            result = identify_with_matches(concert, references, cfg, entry.concert_id, beats, backend, classifier)
        else:
            result = replay_raw_matches(
                Path(raw_dir) / f"{entry.concert_id}{RAW_SUFFIX}", references, cfg, entry.concert_id,
                concert.frame_rate_hz, classifier,
            )
        path = out_dir / f"{entry.concert_id}{RESULT_SUFFIX}"
        write_setlist_document(result.document, path)
        if cfg.dump_raw:
            dump_raw_matches(result.raw_matches, out_dir / f"{entry.concert_id}{RAW_SUFFIX}")
        written.append(path)
    return written


def replay_raw_matches(
        raw_path: PathLike,
        references: Sequence[ReferenceTrack],
        cfg: RunConfig,
        concert_id: str,
        frame_rate_hz: float,
        classifier: Optional[MatchClassifier] = None,
) -> IdentificationResult:
    """Finalizes a ``.raw.csv`` dump; the fingerprint names ``cfg.backend`` as the retrieval backend."""
    if not Path(raw_path).is_file():
        raise MissingFile(f"Raw matches {raw_path} do not exist")
    raw_matches = load_raw_matches(raw_path)
    document, segments = finalize(
        raw_matches, references, run_fingerprint(cfg, cfg.backend, classifier), concert_id, frame_rate_hz, classifier,
    )
    logger.info(f"Replayed {len(raw_matches)} raw matches of {concert_id}: {len(segments)} segments")
    return IdentificationResult(document, tuple(raw_matches), tuple(segments))


def labeled_features_from_results(results_dir: PathLike, manifest: CatalogManifest) -> List[Tuple[Tuple[float, float], bool]]:
    """
    Labels every consolidated entry of the result documents (accepted or not) against its
    concert's annotations, as ``((distance, duration_s), correct)`` training samples.
    """
    samples = []
    for doc in load_result_documents(results_dir):
        try:
            entry = manifest.concert(doc.concert_id)
        except KeyError:
            raise UnknownConcert(f"Concert '{doc.concert_id}' is not in the manifest") from None
        annotations = load_annotations(entry.annotation_path)
        for segment, correct in label_segments(segments_from_document(doc, accepted_only=False), annotations):
            samples.append(((segment.distance, segment.duration_s), correct))
    return samples
