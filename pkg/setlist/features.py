"""
Pitch-class-profile feature matrices, beat grids and the ``SLPC`` feature file format.

Binary layout (little-endian)::

    magic 'SLPC' | u32 version=1 | u32 n_frames | u32 n_bins | f64 frame_rate_hz | u8 has_beats
    | n_frames * n_bins f32 row-major | [u32 n_beats | n_beats f64 beat times]
"""
import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from setlist.errors import (
    BadMagic,
    EmptyFeature,
    FactorOutOfRange,
    IoFailure,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    ValueOutOfRange,
    VersionUnsupported,
)

N_BINS = 12
DEFAULT_FRAME_RATE_HZ = 44100.0 / 4096.0
CLAMP_TOLERANCE = 1e-6

MAGIC = b"SLPC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdB")
_BEAT_COUNT = struct.Struct("<I")

PathLike = Union[str, Path]


class SourceKind(str, enum.Enum):
    REFERENCE = "reference"
    CONCERT = "concert"


@dataclass(frozen=True, eq=False)
class PcpMatrix:
    """
    A frames x 12 pitch-class-profile matrix with its frame rate.

    Values are stored as read-only float32 so that a write/parse round-trip through the
    ``SLPC`` payload is bit-exact. Entries outside [0, 1] by at most ``CLAMP_TOLERANCE``
    are clamped; anything further out is rejected.
    """
    values: np.ndarray
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.ndim != 2 or values.shape[1] != N_BINS:
            raise ShapeMismatch(f"Expected a (n_frames, {N_BINS}) matrix, got shape {values.shape}")
        if values.shape[0] == 0:
            raise EmptyFeature("Feature matrix has no frames")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("Feature matrix contains NaN or infinite values")
        if values.min() < -CLAMP_TOLERANCE or values.max() > 1.0 + CLAMP_TOLERANCE:
            raise ValueOutOfRange(
                f"Feature values must lie in [0, 1], found range [{values.min()}, {values.max()}]"
            )
        np.clip(values, 0.0, 1.0, out=values)
        values.flags.writeable = False
        if not (np.isfinite(self.frame_rate_hz) and self.frame_rate_hz > 0):
            raise ValueOutOfRange(f"Frame rate must be positive, got {self.frame_rate_hz}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "frame_rate_hz", float(self.frame_rate_hz))

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate_hz

    def slice(self, start_frame: int, end_frame: int) -> "PcpMatrix":
        return PcpMatrix(self.values[start_frame:end_frame], self.frame_rate_hz)

    def global_profile(self) -> np.ndarray:
        return self.values.astype(np.float64).mean(axis=0)

    @property
    def is_silent(self) -> bool:
        """True when every value is zero, so the global profile is the zero vector."""
        return not np.any(self.values)

    def __eq__(self, other):
        if not isinstance(other, PcpMatrix):
            return NotImplemented
        return self.frame_rate_hz == other.frame_rate_hz and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.values.shape, self.frame_rate_hz, self.values.tobytes()))


@dataclass(frozen=True)
class BeatGrid:
    beat_times_s: Tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.beat_times_s)
        if any(not np.isfinite(t) for t in times):
            raise NonFiniteValue("Beat times must be finite")
        if times and times[0] < 0:
            raise ValueOutOfRange("Beat times must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueOutOfRange("Beat times must be strictly increasing")
        object.__setattr__(self, "beat_times_s", times)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.beat_times_s, dtype=np.float64)


@dataclass(frozen=True)
class FeatureMeta:
    track_id: str
    duration_s: float
    source_kind: SourceKind = SourceKind.REFERENCE

    def __post_init__(self):
        if not self.track_id:
            raise ParseError("track_id must be non-empty")
        if not self.duration_s > 0:
            raise ValueOutOfRange(f"duration_s must be positive, got {self.duration_s}")


def frame_to_seconds(frame_index: int, frame_rate_hz: float) -> float:
    return frame_index / frame_rate_hz


def seconds_to_frames(seconds: float, frame_rate_hz: float) -> int:
    """Converts seconds to a frame count, rounding down."""
    return int(np.floor(seconds * frame_rate_hz + 1e-9))


def rotate_pitch(matrix: PcpMatrix, k: int) -> PcpMatrix:
    """Column ``c`` of the result is column ``(c - k) mod 12`` of the input."""
    return PcpMatrix(np.roll(matrix.values, k % N_BINS, axis=1), matrix.frame_rate_hz)


def time_stretch(matrix: PcpMatrix, factor: float) -> PcpMatrix:
    """
    Resamples the matrix to ``round(n_frames * factor)`` frames by linear interpolation
    along time. The frame rate is unchanged, so the track becomes longer or shorter.

    Raises:
        FactorOutOfRange: If factor is outside [0.5, 2.0].
    """
    if not 0.5 <= factor <= 2.0:
        raise FactorOutOfRange(f"Stretch factor must lie in [0.5, 2.0], got {factor}")
    if factor == 1.0:
        return matrix

    n_in = matrix.n_frames
    n_out = max(1, int(round(n_in * factor)))
    source = np.arange(n_in, dtype=np.float64)
    positions = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    values = matrix.values.astype(np.float64)
    stretched = np.stack([np.interp(positions, source, values[:, b]) for b in range(N_BINS)], axis=1)
    return PcpMatrix(stretched, matrix.frame_rate_hz)


def write_feature_file(matrix: PcpMatrix, meta: FeatureMeta, beats: Optional[BeatGrid], path: PathLike) -> None:
    """
    Writes a validated matrix (and optional beat grid) in the ``SLPC`` layout.

    ``meta`` is not serialized beyond what the matrix carries: the track id is the file
    stem and the duration follows from the matrix.

    Raises:
        NonFiniteValue: If the matrix contains non-finite values.
        IoFailure: If the file cannot be written.
    """
    values = np.ascontiguousarray(matrix.values, dtype="<f4")
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"Refusing to write non-finite values for {meta.track_id}")

    chunks = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.n_frames, matrix.n_bins, matrix.frame_rate_hz, beats is not None),
        values.tobytes(),
    ]
    if beats is not None:
        chunks.append(_BEAT_COUNT.pack(len(beats.beat_times_s)))
        chunks.append(np.asarray(beats.beat_times_s, dtype="<f8").tobytes())

    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as e:
        raise IoFailure(f"Could not write feature file {path}: {e}") from e


def parse_feature_file(
        path: PathLike,
        frame_rate_hz: Optional[float] = None,
        source_kind: SourceKind = SourceKind.REFERENCE,
) -> Tuple[PcpMatrix, FeatureMeta, Optional[BeatGrid]]:
    """
    Reads an ``SLPC`` binary feature file, or a ``.csv`` feature file when the suffix says so.

    Args:
        path: The feature file.
        frame_rate_hz: Frame rate of CSV files (binary files declare their own).
        source_kind: Recorded in the returned metadata.

    Returns:
        The validated matrix, its metadata, and the beat grid when the file has one.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        matrix = read_feature_csv(path, frame_rate_hz or DEFAULT_FRAME_RATE_HZ)
        return matrix, FeatureMeta(path.stem, matrix.duration_s, source_kind), None

    try:
        data = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"Could not read feature file {path}: {e}") from e

    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{path} is not a feature file")
    if len(data) < _HEADER.size:
        raise ShapeMismatch(f"{path} is truncated inside the header")
    _, version, n_frames, n_bins, rate, has_beats = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    if n_frames == 0:
        raise EmptyFeature(f"{path} declares zero frames")
    if n_bins != N_BINS:
        raise ShapeMismatch(f"{path} declares {n_bins} bins, expected {N_BINS}")

    offset = _HEADER.size
    payload_size = n_frames * n_bins * 4
    beats = None
    if has_beats:
        if len(data) < offset + payload_size + _BEAT_COUNT.size:
            raise ShapeMismatch(f"{path} declares {n_frames} frames but the payload is shorter")
        (n_beats,) = _BEAT_COUNT.unpack_from(data, offset + payload_size)
        expected = offset + payload_size + _BEAT_COUNT.size + 8 * n_beats
    else:
        expected = offset + payload_size
    if len(data) != expected:
        raise ShapeMismatch(
            f"{path} declares {n_frames} frames x {n_bins} bins but holds {len(data) - offset} payload bytes"
        )

    values = np.frombuffer(data, dtype="<f4", count=n_frames * n_bins, offset=offset).reshape(n_frames, n_bins)
    matrix = PcpMatrix(values, rate)
    if has_beats:
        beat_times = np.frombuffer(data, dtype="<f8", count=n_beats, offset=offset + payload_size + _BEAT_COUNT.size)
        beats = BeatGrid(tuple(beat_times.tolist()))
        if beats.beat_times_s and beats.beat_times_s[-1] > matrix.duration_s + 1e-9:
            raise ValueOutOfRange(f"{path} has beats beyond the track duration {matrix.duration_s:.3f} s")
    return matrix, FeatureMeta(path.stem, matrix.duration_s, source_kind), beats


def read_feature_csv(path: PathLike, frame_rate_hz: float) -> PcpMatrix:
    """Reads a CSV with header ``frame,b0..b11``."""
    columns = ["frame"] + [f"b{i}" for i in range(N_BINS)]
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Could not read feature CSV {path}: {e}") from e
    if list(frame.columns) != columns:
        raise ParseError(f"{path} must have header {','.join(columns)}")
    if frame.empty:
        raise EmptyFeature(f"{path} has no frames")

    frame = frame.sort_values("frame", kind="stable")
    if not np.array_equal(frame["frame"].to_numpy(), np.arange(len(frame))):
        raise ShapeMismatch(f"{path} frame indices must be 0..{len(frame) - 1}")
    return PcpMatrix(frame[columns[1:]].to_numpy(dtype=np.float64), frame_rate_hz)


def write_feature_csv(matrix: PcpMatrix, path: PathLike) -> None:
    frame = pd.DataFrame(matrix.values.astype(np.float64), columns=[f"b{i}" for i in range(N_BINS)])
    frame.insert(0, "frame", np.arange(matrix.n_frames))
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise IoFailure(f"Could not write feature CSV {path}: {e}") from e
