"""
Setlist metrics: true/false positives, detected annotations percentage (DAP) and detected
length percentage (DLP), per concert and pooled over a manifest with audio-quality and
genre breakdowns.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import pandas as pd

from setlist.catalog import Annotation, CatalogManifest, SetlistDocument, load_annotations, read_setlist_document
from setlist.errors import IoFailure, MissingResults, OverlappingSegments, UnknownConcert
from setlist.features import PathLike
from setlist.logging_utils import get_setlist_logger
from setlist.postprocess import Segment

logger = get_setlist_logger()

REPORT_COLUMNS = ["concert_id", "group", "TP", "FP", "DAP", "DLP", "TA", "TL"]
TOTAL_ROW = "total"
RESULT_SUFFIX = ".setlist.json"


@dataclass
class EvalReport:
    """Raw counts; DAP and DLP are derived so pooled reports divide pooled sums."""
    tp: int = 0
    fp: int = 0
    detected: int = 0
    ta: int = 0
    matched_s: float = 0.0
    tl: float = 0.0
    groups: Dict[str, "EvalReport"] = field(default_factory=dict)

    @property
    def dap(self) -> float:
        return self.detected / self.ta if self.ta else 0.0

    @property
    def dlp(self) -> float:
        return min(1.0, self.matched_s / self.tl) if self.tl else 0.0

    def add(self, other: "EvalReport") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.detected += other.detected
        self.ta += other.ta
        self.matched_s += other.matched_s
        self.tl += other.tl

    def as_row(self, concert_id: str, group: str) -> dict:
        return {
            "concert_id": concert_id,
            "group": group,
            "TP": self.tp,
            "FP": self.fp,
            "DAP": self.dap,
            "DLP": self.dlp,
            "TA": self.ta,
            "TL": self.tl,
        }


def segments_from_document(doc: SetlistDocument, accepted_only: bool = True) -> List[Segment]:
    return [
        Segment(entry.song_id, entry.start_s, entry.end_s, entry.distance)
        for entry in doc.entries
        if entry.accepted or not accepted_only
    ]


def _intersection(segment: Segment, annotation: Annotation) -> float:
    return max(0.0, min(segment.end_s, annotation.end_s) - max(segment.start_s, annotation.start_s))


def evaluate(segments: Sequence[Segment], annotations: Sequence[Annotation]) -> EvalReport:
    """
    Scores one concert.

    A segment is a TP iff it intersects an annotation of the same song by a positive length;
    several TPs on one annotation count separately. An annotation is detected when at least
    one TP intersects it. DLP sums the matching intersections over the annotated duration.

    Raises:
        OverlappingSegments: If two segments overlap.
    """
    ordered = sorted(segments, key=lambda s: (s.start_s, s.end_s))
    for previous, current in zip(ordered, ordered[1:]):
        if current.start_s < previous.end_s:
            raise OverlappingSegments(
                f"Segments {previous.ref_id} [{previous.start_s}, {previous.end_s}) and "
                f"{current.ref_id} [{current.start_s}, {current.end_s}) overlap"
            )

    report = EvalReport(ta=len(annotations), tl=sum(a.duration_s for a in annotations))
    detected = [False] * len(annotations)
    for segment in ordered:
        hits = [
            (i, overlap)
            for i, annotation in enumerate(annotations)
            if annotation.song_id == segment.ref_id and (overlap := _intersection(segment, annotation)) > 0
        ]
        if not hits:
            report.fp += 1
            continue
        report.tp += 1
        for i, overlap in hits:
            detected[i] = True
            report.matched_s += overlap
    report.detected = sum(detected)
    return report


def group_keys(manifest: CatalogManifest, concert_id: str) -> Tuple[str, str]:
    concert = manifest.concert(concert_id)
    return f"aq:{concert.audio_quality.value}", f"genre:{concert.genre.value}"


def aggregate(reports: Sequence[Tuple[str, EvalReport]], manifest: CatalogManifest) -> EvalReport:
    """
    Pools per-concert reports: counts and durations are summed, so DAP and DLP are
    ratios of pooled sums. Group tables are keyed ``aq:<quality>`` and ``genre:<genre>``.

    Raises:
        UnknownConcert: A concert id that the manifest does not list.
    """
    total = EvalReport()
    for concert_id, report in reports:
        try:
            keys = group_keys(manifest, concert_id)
        except KeyError:
            raise UnknownConcert(f"Concert '{concert_id}' is not in the manifest") from None
        total.add(report)
        for key in keys:
            total.groups.setdefault(key, EvalReport()).add(report)
    total.groups = dict(sorted(total.groups.items()))
    return total


def report_frame(per_concert: Sequence[Tuple[str, EvalReport]], pooled: EvalReport) -> pd.DataFrame:
    rows = [report.as_row(concert_id, "") for concert_id, report in per_concert]
    rows += [report.as_row("", group) for group, report in pooled.groups.items()]
    rows.append(pooled.as_row("", TOTAL_ROW))
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report_csv(per_concert: Sequence[Tuple[str, EvalReport]], pooled: EvalReport, path: PathLike) -> None:
    try:
        report_frame(per_concert, pooled).to_csv(path, index=False)
    except OSError as e:
        raise IoFailure(f"Could not write report {path}: {e}") from e


def write_report_json(per_concert: Sequence[Tuple[str, EvalReport]], pooled: EvalReport, path: PathLike) -> None:
    document = {
        "concerts": {concert_id: report.as_row(concert_id, "") for concert_id, report in per_concert},
        "groups": {group: report.as_row("", group) for group, report in pooled.groups.items()},
        TOTAL_ROW: pooled.as_row("", TOTAL_ROW),
    }
    try:
        with open(path, "w") as handle:
            json.dump(document, handle, indent=2)
            handle.write("\n")
    except OSError as e:
        raise IoFailure(f"Could not write report {path}: {e}") from e


def load_result_documents(results_dir: PathLike) -> List[SetlistDocument]:
    """
    Reads every ``*.setlist.json`` document of a results directory, sorted by concert id.

    Raises:
        MissingResults: If the directory holds no result documents.
    """
    results_dir = Path(results_dir)
    paths = sorted(results_dir.glob(f"*{RESULT_SUFFIX}")) if results_dir.is_dir() else []
    if not paths:
        raise MissingResults(f"No *{RESULT_SUFFIX} documents in {results_dir}")
    return sorted((read_setlist_document(path) for path in paths), key=lambda doc: doc.concert_id)


def evaluate_results(
        results_dir: PathLike,
        manifest: CatalogManifest,
        out_csv: PathLike,
        accepted_only: bool = True,
) -> Tuple[List[Tuple[str, EvalReport]], EvalReport]:
    """
    Scores every result document against its concert's annotations and writes the CSV
    report plus a JSON copy next to it.

    Raises:
        MissingResults, UnknownConcert
    """
    per_concert = []
    for doc in load_result_documents(results_dir):
        try:
            entry = manifest.concert(doc.concert_id)
        except KeyError:
            raise UnknownConcert(f"Concert '{doc.concert_id}' is not in the manifest") from None
        annotations = load_annotations(entry.annotation_path)
        per_concert.append((doc.concert_id, evaluate(segments_from_document(doc, accepted_only), annotations)))

    pooled = aggregate(per_concert, manifest)
    out_csv = Path(out_csv)
    write_report_csv(per_concert, pooled, out_csv)
    write_report_json(per_concert, pooled, out_csv.with_suffix(".json"))
    logger.info(
        f"Evaluated {len(per_concert)} concerts: TP={pooled.tp} FP={pooled.fp} "
        f"DAP={pooled.dap:.3f} DLP={pooled.dlp:.3f}"
    )
    return per_concert, pooled
