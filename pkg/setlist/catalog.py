"""
Reference catalog, concert list, ground-truth annotations and the setlist results document.

Manifest files hold one record per line with named fields (values may be quoted)::

    kind=reference track_id=song-001 feature_path=refs/song-001.slpc artist="Some Band" title="Opener"
    kind=concert concert_id=c-01 feature_path=concerts/c-01.slpc annotation_path=ann/c-01.csv audio_quality=AQ-A genre=rock

Relative paths are resolved against the manifest's directory.
"""
import dataclasses
import enum
import json
import shlex
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from setlist.errors import (
    DuplicateId,
    IoFailure,
    MissingFile,
    NegativeDuration,
    OverlappingAnnotations,
    OverlappingEntries,
    ParseError,
    UnknownEnumValue,
    UnknownSongId,
)
from setlist.features import BeatGrid, PathLike, PcpMatrix, SourceKind, parse_feature_file
from setlist.logging_utils import get_setlist_logger

logger = get_setlist_logger()

UNKNOWN_SONG_ID = "unknown"
ANNOTATION_COLUMNS = ["song_id", "start_s", "end_s"]


class AudioQuality(str, enum.Enum):
    AQ_A = "AQ-A"
    AQ_B = "AQ-B"
    AQ_C = "AQ-C"


class Genre(str, enum.Enum):
    POP = "pop"
    ROCK = "rock"
    INDIE = "indie"
    HIPHOP = "hiphop"
    ELECTRONIC = "electronic"


@dataclass(frozen=True)
class ReferenceEntry:
    track_id: str
    feature_path: Path
    artist: str = ""
    title: str = ""


@dataclass(frozen=True)
class ConcertEntry:
    concert_id: str
    feature_path: Path
    annotation_path: Path
    audio_quality: AudioQuality
    genre: Genre


@dataclass(frozen=True)
class CatalogManifest:
    references: Tuple[ReferenceEntry, ...]
    concerts: Tuple[ConcertEntry, ...]

    def reference(self, track_id: str) -> ReferenceEntry:
        for entry in self.references:
            if entry.track_id == track_id:
                return entry
        raise KeyError(track_id)

    def concert(self, concert_id: str) -> ConcertEntry:
        for entry in self.concerts:
            if entry.concert_id == concert_id:
                return entry
        raise KeyError(concert_id)

    @property
    def track_ids(self) -> Tuple[str, ...]:
        return tuple(entry.track_id for entry in self.references)


@dataclass(frozen=True)
class ReferenceTrack:
    track_id: str
    features: PcpMatrix
    beats: Optional[BeatGrid] = None
    artist: str = ""
    title: str = ""


@dataclass(frozen=True)
class Annotation:
    song_id: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s < 0:
            raise ParseError(f"Annotation of {self.song_id} starts before 0: {self.start_s}")
        if not self.end_s > self.start_s:
            raise NegativeDuration(
                f"Annotation of {self.song_id} has non-positive duration [{self.start_s}, {self.end_s})"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SetlistEntry:
    song_id: str
    artist: str
    title: str
    start_s: float
    end_s: float
    distance: float
    accepted: bool = True


@dataclass(frozen=True)
class ConfigFingerprint:
    backend: str
    window_s: float
    hop_s: float
    keep_every: int = 1
    classifier_id: str = "none"


@dataclass(frozen=True)
class SetlistDocument:
    """The final results document of one concert. Entries are sorted and pairwise disjoint."""
    concert_id: str
    entries: Tuple[SetlistEntry, ...]
    fingerprint: ConfigFingerprint

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: (e.start_s, e.end_s, e.song_id)))
        for entry in entries:
            if not entry.start_s < entry.end_s:
                raise OverlappingEntries(f"Entry {entry.song_id} has empty interval [{entry.start_s}, {entry.end_s})")
        for previous, current in zip(entries, entries[1:]):
            if current.start_s < previous.end_s:
                raise OverlappingEntries(
                    f"Entries {previous.song_id} [{previous.start_s}, {previous.end_s}) and "
                    f"{current.song_id} [{current.start_s}, {current.end_s}) overlap"
                )
        object.__setattr__(self, "entries", entries)


def _parse_enum(enum_cls, value: str, line_no: int):
    try:
        return enum_cls(value)
    except ValueError:
        valid = ", ".join(member.value for member in enum_cls)
        raise UnknownEnumValue(f"line {line_no}: '{value}' is not one of: {valid}") from None


def _parse_record(line: str, line_no: int) -> Dict[str, str]:
    try:
        tokens = shlex.split(line, comments=True)
    except ValueError as e:
        raise ParseError(f"line {line_no}: {e}") from e
    record = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise ParseError(f"line {line_no}: expected key=value, got '{token}'")
        record[key] = value
    return record


def _require(record: Dict[str, str], key: str, line_no: int) -> str:
    if not record.get(key):
        raise ParseError(f"line {line_no}: missing field '{key}'")
    return record[key]


def _resolve(root: Path, value: str, line_no: int) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = root / path
    if not path.is_file():
        raise MissingFile(f"line {line_no}: {path} does not exist")
    return path.resolve()


def load_manifest(path: PathLike) -> CatalogManifest:
    """
    Loads and validates a manifest. Row order does not matter: references and concerts
    are kept sorted by id.

    Raises:
        ParseError, DuplicateId, MissingFile, UnknownEnumValue
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ParseError(f"Could not read manifest {path}: {e}") from e

    root = path.parent
    references: Dict[str, ReferenceEntry] = {}
    concerts: Dict[str, ConcertEntry] = {}
    for line_no, line in enumerate(lines, start=1):
        record = _parse_record(line, line_no)
        if not record:
            continue
        kind = _require(record, "kind", line_no)
        if kind == "reference":
            track_id = _require(record, "track_id", line_no)
            if track_id in references:
                raise DuplicateId(f"line {line_no}: duplicate track_id '{track_id}'")
            references[track_id] = ReferenceEntry(
                track_id=track_id,
                feature_path=_resolve(root, _require(record, "feature_path", line_no), line_no),
                artist=record.get("artist", ""),
                title=record.get("title", ""),
            )
        elif kind == "concert":
            concert_id = _require(record, "concert_id", line_no)
            if concert_id in concerts:
                raise DuplicateId(f"line {line_no}: duplicate concert_id '{concert_id}'")
            concerts[concert_id] = ConcertEntry(
                concert_id=concert_id,
                feature_path=_resolve(root, _require(record, "feature_path", line_no), line_no),
                annotation_path=_resolve(root, _require(record, "annotation_path", line_no), line_no),
                audio_quality=_parse_enum(AudioQuality, _require(record, "audio_quality", line_no), line_no),
                genre=_parse_enum(Genre, _require(record, "genre", line_no), line_no),
            )
        else:
            raise ParseError(f"line {line_no}: unknown kind '{kind}'")

    logger.info(f"Loaded manifest {path}: {len(references)} references, {len(concerts)} concerts")
    return CatalogManifest(
        references=tuple(references[key] for key in sorted(references)),
        concerts=tuple(concerts[key] for key in sorted(concerts)),
    )


def _relative(path: Path, root: Path) -> str:
    try:
        return str(Path(path).resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path)


def write_manifest(manifest: CatalogManifest, path: PathLike) -> None:
    path = Path(path)
    root = path.parent
    lines = []
    for ref in manifest.references:
        lines.append(shlex.join([
            "kind=reference",
            f"track_id={ref.track_id}",
            f"feature_path={_relative(ref.feature_path, root)}",
            f"artist={ref.artist}",
            f"title={ref.title}",
        ]))
    for concert in manifest.concerts:
        lines.append(shlex.join([
            "kind=concert",
            f"concert_id={concert.concert_id}",
            f"feature_path={_relative(concert.feature_path, root)}",
            f"annotation_path={_relative(concert.annotation_path, root)}",
            f"audio_quality={concert.audio_quality.value}",
            f"genre={concert.genre.value}",
        ]))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise IoFailure(f"Could not write manifest {path}: {e}") from e


def load_references(manifest: CatalogManifest, frame_rate_hz: Optional[float] = None) -> List[ReferenceTrack]:
    tracks = []
    for entry in manifest.references:
        matrix, _, beats = parse_feature_file(entry.feature_path, frame_rate_hz, SourceKind.REFERENCE)
        tracks.append(ReferenceTrack(entry.track_id, matrix, beats, entry.artist, entry.title))
    return tracks


def load_annotations(path: PathLike, known_song_ids: Optional[Iterable[str]] = None) -> List[Annotation]:
    """
    Loads a ``song_id,start_s,end_s`` annotation CSV (header required).

    Returns:
        Annotations sorted by start time.

    Raises:
        ParseError: Malformed file or header.
        NegativeDuration: An annotation with end_s <= start_s.
        OverlappingAnnotations: Two annotations of the concert overlap.
        UnknownSongId: A song id not in ``known_song_ids`` (``unknown`` is always allowed).
    """
    try:
        frame = pd.read_csv(path, dtype={"song_id": str}, float_precision="round_trip", keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path} is empty; a header {','.join(ANNOTATION_COLUMNS)} is required") from None
    except (OSError, pd.errors.ParserError) as e:
        raise ParseError(f"Could not read annotations {path}: {e}") from e
    if list(frame.columns) != ANNOTATION_COLUMNS:
        raise ParseError(f"{path} must have header {','.join(ANNOTATION_COLUMNS)}")

    known = set(known_song_ids) if known_song_ids is not None else None
    annotations = []
    for row in frame.itertuples(index=False):
        try:
            start_s, end_s = float(row.start_s), float(row.end_s)
        except ValueError as e:
            raise ParseError(f"{path}: bad timestamp in row {row}") from e
        if known is not None and row.song_id != UNKNOWN_SONG_ID and row.song_id not in known:
            raise UnknownSongId(f"{path}: song '{row.song_id}' is not in the reference catalog")
        annotations.append(Annotation(row.song_id, start_s, end_s))

    annotations.sort(key=lambda a: (a.start_s, a.end_s))
    for previous, current in zip(annotations, annotations[1:]):
        if current.start_s < previous.end_s:
            raise OverlappingAnnotations(
                f"{path}: {previous.song_id} [{previous.start_s}, {previous.end_s}) overlaps "
                f"{current.song_id} [{current.start_s}, {current.end_s})"
            )
    return annotations


def write_annotations(annotations: Sequence[Annotation], path: PathLike) -> None:
    frame = pd.DataFrame(
        [(a.song_id, a.start_s, a.end_s) for a in annotations],
        columns=ANNOTATION_COLUMNS,
    )
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise IoFailure(f"Could not write annotations {path}: {e}") from e


def setlist_document_to_dict(doc: SetlistDocument) -> dict:
    return {
        "concert_id": doc.concert_id,
        "fingerprint": dataclasses.asdict(doc.fingerprint),
        "entries": [dataclasses.asdict(entry) for entry in doc.entries],
    }


def write_setlist_document(doc: SetlistDocument, path: PathLike) -> None:
    """Writes the document as JSON with a fixed field order; equal documents give equal bytes."""
    text = json.dumps(setlist_document_to_dict(doc), indent=2) + "\n"
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise IoFailure(f"Could not write setlist document {path}: {e}") from e


def read_setlist_document(path: PathLike) -> SetlistDocument:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise IoFailure(f"Could not read setlist document {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not a setlist document: {e}") from e

    try:
        return SetlistDocument(
            concert_id=data["concert_id"],
            entries=tuple(SetlistEntry(**entry) for entry in data["entries"]),
            fingerprint=ConfigFingerprint(**data["fingerprint"]),
        )
    except (KeyError, TypeError) as e:
        raise ParseError(f"{path} is missing document fields: {e}") from e
