"""
Fixed-size track embeddings compared by cosine distance.

Embeddings normally come precomputed from a trained model (``SLEM`` files, or CSV rows
``id,v0,...``). ``fallback_embed`` is a deterministic hand-crafted embedder that keeps the
pipeline runnable without a model.

``SLEM`` layout (little-endian)::

    magic 'SLEM' | u32 version=1 | u32 count | u32 dim | count x (u16 id_length | id utf-8 | dim f32)
"""
import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from setlist.errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateId,
    EmptyIndex,
    IoFailure,
    NonFiniteValue,
    ParseError,
    UsageError,
    VersionUnsupported,
    ZeroNorm,
)
from setlist.features import N_BINS, PathLike, PcpMatrix
from setlist.logging_utils import get_setlist_logger

logger = get_setlist_logger()

DEFAULT_DIMENSION = 256
FALLBACK_DIMENSION = 240

MAGIC = b"SLEM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_ID_LENGTH = struct.Struct("<H")


@dataclass(frozen=True, eq=False)
class TrackEmbedding:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        vector = np.array(self.vector, dtype=np.float32, copy=True).reshape(-1)
        if not np.all(np.isfinite(vector)):
            raise NonFiniteValue(f"Embedding {self.id} has non-finite values")
        norm = float(np.linalg.norm(vector.astype(np.float64)))
        if not norm > 0:
            raise ZeroNorm(f"Embedding {self.id} has zero norm")
        vector.flags.writeable = False
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "_norm", norm)

    @property
    def norm(self) -> float:
        return self._norm

    @property
    def dimension(self) -> int:
        return self.vector.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TrackEmbedding):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.vector, other.vector)

    def __hash__(self):
        return hash((self.id, self.vector.tobytes()))


def window_embedding_id(concert_id: str, window_index: int) -> str:
    return f"{concert_id}/w{window_index:04d}"


def _check_uniform(embeddings: Sequence[TrackEmbedding], source) -> None:
    dimensions = {e.dimension for e in embeddings}
    if len(dimensions) > 1:
        raise DimensionMismatch(f"{source} mixes embedding dimensions {sorted(dimensions)}")


def load_embeddings(path: PathLike) -> List[TrackEmbedding]:
    """
    Reads an ``SLEM`` file, or CSV rows ``id,v0,...`` when the suffix is ``.csv``.

    Raises:
        DimensionMismatch: Rows of different dimension.
        ZeroNorm: An all-zeros row.
        ParseError: Malformed content.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_embeddings_csv(path)

    try:
        data = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"Could not read embeddings {path}: {e}") from e
    if data[:4] != MAGIC:
        raise BadMagic(f"{path} is not an embedding file")
    if len(data) < _HEADER.size:
        raise ParseError(f"{path} is truncated inside the header")
    _, version, count, dim = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path} has format version {version}, expected {FORMAT_VERSION}")

    embeddings = []
    offset = _HEADER.size
    try:
        for _ in range(count):
            (id_length,) = _ID_LENGTH.unpack_from(data, offset)
            offset += _ID_LENGTH.size
            track_id = data[offset:offset + id_length].decode("utf-8")
            offset += id_length
            if offset + 4 * dim > len(data):
                raise ParseError(f"{path}: row '{track_id}' is truncated")
            vector = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            embeddings.append(TrackEmbedding(track_id, vector))
    except (struct.error, UnicodeDecodeError) as e:
        raise ParseError(f"{path} is malformed: {e}") from e
    if offset != len(data):
        raise DimensionMismatch(f"{path} holds {len(data) - offset} bytes beyond {count} rows of dimension {dim}")
    return embeddings


def _load_embeddings_csv(path: Path) -> List[TrackEmbedding]:
    embeddings = []
    try:
        with path.open(newline="") as handle:
            for line_no, row in enumerate(csv.reader(handle), start=1):
                if not row:
                    continue
                try:
                    values = [float(v) for v in row[1:]]
                except ValueError as e:
                    raise ParseError(f"{path}:{line_no}: {e}") from e
                embeddings.append(TrackEmbedding(row[0], np.asarray(values)))
    except OSError as e:
        raise IoFailure(f"Could not read embeddings {path}: {e}") from e
    _check_uniform(embeddings, path)
    return embeddings


def write_embeddings(embeddings: Sequence[TrackEmbedding], path: PathLike) -> None:
    _check_uniform(embeddings, "write_embeddings")
    dim = embeddings[0].dimension if embeddings else 0
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(embeddings), dim)]
    for embedding in embeddings:
        encoded = embedding.id.encode("utf-8")
        chunks.append(_ID_LENGTH.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(np.asarray(embedding.vector, dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as e:
        raise IoFailure(f"Could not write embeddings {path}: {e}") from e


def fallback_embed(matrix: PcpMatrix, d: int = FALLBACK_DIMENSION, embedding_id: str = "") -> TrackEmbedding:
    """
    Deterministic embedding built from ``d / 24`` blocks of (weighted mean, weighted std) per pitch class.

    Block ``r`` weights frame ``t`` with the cosine ``cos(pi * r * (t + 0.5) / n_frames)`` and is
    damped by ``1 / (r + 1)``; block 0 is the plain global mean and standard deviation. All
    operations are per pitch class, so rotating the input permutes coordinates inside each block.
    """
    if d <= 0 or d % (2 * N_BINS):
        raise UsageError(f"Fallback embedding dimension must be a positive multiple of 24, got {d}")
    values = matrix.values.astype(np.float64)
    n_frames = values.shape[0]
    mean = values.mean(axis=0)
    squared_deviation = (values - mean) ** 2
    t = np.arange(n_frames) + 0.5

    blocks = []
    for r in range(d // (2 * N_BINS)):
        weights = np.cos(np.pi * r * t / n_frames)
        damping = 1.0 / (r + 1)
        blocks.append(damping * (weights @ values) / n_frames)
        blocks.append(damping * np.sqrt((weights ** 2) @ squared_deviation / n_frames))
    return TrackEmbedding(embedding_id, np.concatenate(blocks))


def cosine_distance(a: TrackEmbedding, b: TrackEmbedding) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"Embedding dimensions differ: {a.dimension} vs {b.dimension}")
    similarity = float(np.dot(a.vector.astype(np.float64), b.vector.astype(np.float64))) / (a.norm * b.norm)
    return float(np.clip(1.0 - similarity, 0.0, 2.0))


class EmbeddingIndex:
    """
    Brute-force cosine index over unit-normalized reference embeddings.

    Rows are kept in lexicographic id order so the first minimum is also the
    lexicographically smallest id among ties.
    """

    def __init__(self, ids: Tuple[str, ...], matrix: np.ndarray):
        self.ids = ids
        self.matrix = matrix

    @classmethod
    def build(cls, embeddings: Sequence[TrackEmbedding]) -> "EmbeddingIndex":
        _check_uniform(embeddings, "index")
        ordered = sorted(embeddings, key=lambda e: e.id)
        for previous, current in zip(ordered, ordered[1:]):
            if previous.id == current.id:
                raise DuplicateId(f"Embedding id '{current.id}' appears twice")
        if not ordered:
            return cls((), np.zeros((0, 0)))
        matrix = np.stack([e.vector.astype(np.float64) / e.norm for e in ordered])
        matrix.flags.writeable = False
        return cls(tuple(e.id for e in ordered), matrix)

    def __len__(self):
        return len(self.ids)

    def distances(self, query: TrackEmbedding) -> np.ndarray:
        if not self.ids:
            raise EmptyIndex("Embedding index is empty")
        if query.dimension != self.matrix.shape[1]:
            raise DimensionMismatch(f"Query dimension {query.dimension} != index dimension {self.matrix.shape[1]}")
        unit = query.vector.astype(np.float64) / query.norm
        return np.clip(1.0 - self.matrix @ unit, 0.0, 2.0)


def top1(index: EmbeddingIndex, query: TrackEmbedding) -> Tuple[str, float]:
    distances = index.distances(query)
    best = int(np.argmin(distances))
    return index.ids[best], float(distances[best])


class EmbeddingBackend:
    """File-fed backend: reference and window embeddings come precomputed."""
    name = "embed"
    pairwise = False

    def __init__(self, reference_embeddings: Sequence[TrackEmbedding], query_embeddings: Sequence[TrackEmbedding]):
        self._reference_embeddings = {e.id: e for e in reference_embeddings}
        self._query_embeddings: Mapping[str, TrackEmbedding] = {e.id: e for e in query_embeddings}
        self.index: Optional[EmbeddingIndex] = None

    def prepare_references(self, references) -> None:
        missing = [ref.track_id for ref in references if ref.track_id not in self._reference_embeddings]
        if missing:
            raise ParseError(f"No embedding for references: {', '.join(missing[:5])}")
        self.index = EmbeddingIndex.build([self._reference_embeddings[ref.track_id] for ref in references])

    def prepare_query(self, window, concert_id: str = "") -> TrackEmbedding:
        embedding_id = window_embedding_id(concert_id, window.index)
        if embedding_id not in self._query_embeddings:
            raise ParseError(f"No embedding for query window '{embedding_id}'")
        return self._query_embeddings[embedding_id]

    def search(self, query: TrackEmbedding) -> Tuple[str, float]:
        return top1(self.index, query)


class FallbackEmbeddingBackend(EmbeddingBackend):
    name = "embed-fallback"

    def __init__(self, dimension: int = FALLBACK_DIMENSION):
        super().__init__((), ())
        self.dimension = dimension

    def prepare_references(self, references) -> None:
        embeddings = []
        for ref in references:
            if ref.features.is_silent:
                logger.debug(f"Reference {ref.track_id} is silent and is left out of the index")
                continue
            embeddings.append(fallback_embed(ref.features, self.dimension, ref.track_id))
        self.index = EmbeddingIndex.build(embeddings)

    def prepare_query(self, window, concert_id: str = "") -> TrackEmbedding:
        return fallback_embed(window.frames, self.dimension, window_embedding_id(concert_id, window.index))
