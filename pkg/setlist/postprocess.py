"""
Consolidation of per-window matches into disjoint segments, and the linear
classifier that filters likely false positives by (distance, duration).
"""
import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from setlist.catalog import Annotation
from setlist.errors import IoFailure, ParseError, SingleClass, TooFewSamples, UnsortedInput
from setlist.features import DEFAULT_FRAME_RATE_HZ, PathLike
from setlist.logging_utils import get_setlist_logger

logger = get_setlist_logger()

DEFAULT_TOLERANCE_S = 1.0 / DEFAULT_FRAME_RATE_HZ
SVM_LAMBDA = 1e-3
SVM_EPOCHS = 200
MIN_TRAINING_SAMPLES = 10
RAW_MATCH_COLUMNS = ["window_index", "start_s", "end_s", "ref_id", "distance"]


@dataclass(frozen=True)
class RawMatch:
    window_index: int
    start_s: float
    end_s: float
    ref_id: str
    distance: float


@dataclass(frozen=True)
class Segment:
    ref_id: str
    start_s: float
    end_s: float
    distance: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class _Run:
    ref_id: str
    start_s: float
    end_s: float
    distance: float
    matches: Tuple[RawMatch, ...]


def _merge_same_reference(matches: Sequence[RawMatch]) -> List[_Run]:
    runs = []
    by_reference = {}
    for match in matches:
        by_reference.setdefault(match.ref_id, []).append(match)
    for ref_id in sorted(by_reference):
        group = sorted(by_reference[ref_id], key=lambda m: (m.start_s, m.end_s, m.window_index))
        current = [group[0]]
        end = group[0].end_s
        for match in group[1:]:
            if match.start_s <= end:
                current.append(match)
                end = max(end, match.end_s)
            else:
                runs.append(_close_run(ref_id, current, end))
                current, end = [match], match.end_s
        runs.append(_close_run(ref_id, current, end))
    return runs


def _close_run(ref_id: str, matches: List[RawMatch], end_s: float) -> _Run:
    return _Run(ref_id, matches[0].start_s, end_s, min(m.distance for m in matches), tuple(matches))


def _resolve_overlaps(runs: Sequence[_Run], tolerance_s: float) -> List[Segment]:
    breakpoints = sorted({t for run in runs for t in (run.start_s, run.end_s)})
    pieces: List[Tuple[_Run, float, float]] = []
    for left, right in zip(breakpoints, breakpoints[1:]):
        covering = [run for run in runs if run.start_s <= left and run.end_s >= right]
        if not covering:
            continue
        owner = min(covering, key=lambda run: (run.distance, run.start_s, run.ref_id))
        if pieces and pieces[-1][0] is owner and pieces[-1][2] == left:
            pieces[-1] = (owner, pieces[-1][1], right)
        else:
            pieces.append((owner, left, right))

    segments = []
    for run, start_s, end_s in pieces:
        if end_s - start_s < tolerance_s:
            continue
        # a surviving part keeps the best distance among its own matches that overlap it
        distance = min(m.distance for m in run.matches if m.start_s < end_s and m.end_s > start_s)
        segments.append(Segment(run.ref_id, start_s, end_s, distance))
    return segments


def _join_abutting(segments: Sequence[Segment], tolerance_s: float) -> List[Segment]:
    joined: List[Segment] = []
    for segment in sorted(segments, key=lambda s: s.start_s):
        if joined and joined[-1].ref_id == segment.ref_id and segment.start_s - joined[-1].end_s <= tolerance_s:
            previous = joined[-1]
            joined[-1] = Segment(
                previous.ref_id, previous.start_s, segment.end_s, min(previous.distance, segment.distance)
            )
        else:
            joined.append(segment)
    return joined


def consolidate(matches: Sequence[RawMatch], tolerance_s: float = DEFAULT_TOLERANCE_S) -> List[Segment]:
    """
    Turns overlapping per-window matches into disjoint segments.

    1. Overlapping or abutting matches of the same reference merge into one run spanning
       their union, with the lowest distance among them.
    2. Every atomic interval between run boundaries covered by several runs goes to the run
       with the lowest distance; the others are truncated or split. Parts shorter than
       ``tolerance_s`` (one frame) are dropped.
    3. Same-reference parts separated by at most ``tolerance_s`` are joined again.

    Args:
        matches: Raw matches sorted by window index.
        tolerance_s: One frame duration.

    Returns:
        Segments sorted by start time, pairwise disjoint.

    Raises:
        UnsortedInput: If window indices decrease.
    """
    for previous, current in zip(matches, matches[1:]):
        if current.window_index < previous.window_index:
            raise UnsortedInput(
                f"Matches must be sorted by window index ({previous.window_index} precedes {current.window_index})"
            )
    if not matches:
        return []
    runs = _merge_same_reference(matches)
    return _join_abutting(_resolve_overlaps(runs, tolerance_s), tolerance_s)


def _overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def label_segments(segments: Sequence[Segment], annotations: Sequence[Annotation]) -> List[Tuple[Segment, bool]]:
    """A segment is correct iff it overlaps an annotation of the same song by a positive length."""
    return [
        (
            segment,
            any(
                a.song_id == segment.ref_id and _overlap(segment.start_s, segment.end_s, a.start_s, a.end_s) > 0
                for a in annotations
            ),
        )
        for segment in segments
    ]


@dataclass(frozen=True)
class MatchClassifier:
    weights: Tuple[float, float]
    bias: float
    feature_means: Tuple[float, float]
    feature_stds: Tuple[float, float]
    id: str = "linear-svm"

    def __post_init__(self):
        if not all(std > 0 for std in self.feature_stds):
            raise ParseError(f"Classifier {self.id} has non-positive feature stds {self.feature_stds}")

    def decision(self, distance: float, duration_s: float) -> float:
        z = (np.array([distance, duration_s]) - np.array(self.feature_means)) / np.array(self.feature_stds)
        return float(np.dot(self.weights, z) + self.bias)


def train_classifier(
        labeled: Sequence[Tuple[Tuple[float, float], bool]],
        seed: int = 0,
        classifier_id: str = "linear-svm",
) -> MatchClassifier:
    """
    Trains a linear SVM on z-scored (distance, duration) features.

    Deterministic primal subgradient descent on the L2-regularized hinge loss
    (lambda = 1e-3, 200 epochs, step 1 / (lambda * t)), shuffled by ``seed``. The bias is
    the weight of a constant feature.

    Raises:
        TooFewSamples: Fewer than 10 samples.
        SingleClass: Only one label present.
    """
    if len(labeled) < MIN_TRAINING_SAMPLES:
        raise TooFewSamples(f"Need at least {MIN_TRAINING_SAMPLES} samples, got {len(labeled)}")
    features = np.array([f for f, _ in labeled], dtype=np.float64)
    labels = np.array([1.0 if correct else -1.0 for _, correct in labeled])
    if np.all(labels == labels[0]):
        raise SingleClass("Training labels contain a single class")

    means = features.mean(axis=0)
    stds = features.std(axis=0)
    stds[stds == 0] = 1.0
    x = np.hstack([(features - means) / stds, np.ones((len(labels), 1))])

    rng = np.random.default_rng(seed)
    w = np.zeros(x.shape[1])
    t = 0
    for _ in range(SVM_EPOCHS):
        for i in rng.permutation(len(labels)):
            t += 1
            step = 1.0 / (SVM_LAMBDA * t)
            margin = labels[i] * np.dot(w, x[i])
            w *= 1.0 - step * SVM_LAMBDA
            if margin < 1.0:
                w += step * labels[i] * x[i]

    accuracy = float(np.mean(np.sign(x @ w + 1e-300) == labels))
    logger.info(f"Trained classifier {classifier_id} on {len(labels)} samples, training accuracy {accuracy:.3f}")
    return MatchClassifier(
        weights=(float(w[0]), float(w[1])),
        bias=float(w[2]),
        feature_means=(float(means[0]), float(means[1])),
        feature_stds=(float(stds[0]), float(stds[1])),
        id=classifier_id,
    )


def apply_classifier(clf: MatchClassifier, segments: Sequence[Segment]) -> List[Tuple[Segment, bool]]:
    """Accepts a segment iff ``w . z(distance, duration) + b >= 0``."""
    return [(segment, clf.decision(segment.distance, segment.duration_s) >= 0.0) for segment in segments]


def save_classifier(clf: MatchClassifier, path: PathLike) -> None:
    parser = configparser.ConfigParser()
    parser["classifier"] = {
        "id": clf.id,
        "weights": ",".join(repr(w) for w in clf.weights),
        "bias": repr(clf.bias),
        "feature_means": ",".join(repr(m) for m in clf.feature_means),
        "feature_stds": ",".join(repr(s) for s in clf.feature_stds),
    }
    try:
        with open(path, "w") as handle:
            parser.write(handle)
    except OSError as e:
        raise IoFailure(f"Could not write classifier {path}: {e}") from e


def load_classifier(path: PathLike) -> MatchClassifier:
    parser = configparser.ConfigParser()
    try:
        if not parser.read(path):
            raise IoFailure(f"Could not read classifier {path}")
        section = parser["classifier"]

        def pair(key: str) -> Tuple[float, float]:
            first, second = (float(v) for v in section[key].split(","))
            return first, second

        return MatchClassifier(
            weights=pair("weights"),
            bias=float(section["bias"]),
            feature_means=pair("feature_means"),
            feature_stds=pair("feature_stds"),
            id=section.get("id", Path(path).stem),
        )
    except (KeyError, ValueError, configparser.Error) as e:
        raise ParseError(f"{path} is not a classifier file: {e}") from e


def dump_raw_matches(matches: Iterable[RawMatch], path: PathLike) -> None:
    frame = pd.DataFrame(
        [(m.window_index, m.start_s, m.end_s, m.ref_id, m.distance) for m in matches],
        columns=RAW_MATCH_COLUMNS,
    )
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise IoFailure(f"Could not write raw matches {path}: {e}") from e


def load_raw_matches(path: PathLike) -> List[RawMatch]:
    try:
        frame = pd.read_csv(path, dtype={"ref_id": str}, float_precision="round_trip", keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Could not read raw matches {path}: {e}") from e
    if list(frame.columns) != RAW_MATCH_COLUMNS:
        raise ParseError(f"{path} must have header {','.join(RAW_MATCH_COLUMNS)}")
    return [
        RawMatch(int(row.window_index), float(row.start_s), float(row.end_s), row.ref_id, float(row.distance))
        for row in frame.itertuples(index=False)
    ]
