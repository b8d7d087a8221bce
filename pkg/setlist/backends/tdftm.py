"""
2D Fourier transform magnitude embeddings over beat-synchronous pitch-class patches.
"""
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from setlist.errors import LengthMismatch, TooShort, UsageError
from setlist.features import N_BINS, BeatGrid, PcpMatrix


@dataclass(frozen=True)
class TdftmParams:
    patch_beats: int = 75
    patch_hop: int = 1
    pseudo_beat_period_s: float = 0.5
    aggregate: str = "median"

    def __post_init__(self):
        if self.patch_beats < 2:
            raise UsageError("patch_beats must be >= 2")
        if self.patch_hop < 1:
            raise UsageError("patch_hop must be >= 1")
        if not self.pseudo_beat_period_s > 0:
            raise UsageError("pseudo_beat_period_s must be positive")
        if self.aggregate != "median":
            raise UsageError("only median aggregation is supported")


@dataclass(frozen=True, eq=False)
class TdftmEmbedding:
    vector: np.ndarray
    source_id: str = ""


def pseudo_beat_grid(duration_s: float, period_s: float) -> np.ndarray:
    n_points = math.ceil(duration_s / period_s - 1e-9)
    return np.arange(n_points, dtype=np.float64) * period_s


def beat_synchronize(matrix: PcpMatrix, beats: Optional[BeatGrid] = None, params: TdftmParams = TdftmParams()) -> np.ndarray:
    """
    Averages the frames falling in each inter-beat interval ``[beat_k, beat_k+1)``.

    Without a beat grid a uniform pseudo-beat grid of ``pseudo_beat_period_s`` is used.
    An interval holding no frame takes the frame at its start.

    Returns:
        A (n_beats - 1, 12) array.
    """
    if beats is not None:
        grid = beats.as_array()
    else:
        grid = pseudo_beat_grid(matrix.duration_s, params.pseudo_beat_period_s)
    if grid.size < 2:
        raise TooShort(f"{matrix.duration_s:.2f} s holds fewer than 2 beats")

    n_rows = grid.size - 1
    values = matrix.values.astype(np.float64)
    times = np.arange(matrix.n_frames) / matrix.frame_rate_hz
    interval = np.searchsorted(grid, times, side="right") - 1
    inside = (interval >= 0) & (interval < n_rows)

    sums = np.zeros((n_rows, N_BINS))
    np.add.at(sums, interval[inside], values[inside])
    counts = np.bincount(interval[inside], minlength=n_rows).astype(np.float64)

    synced = np.empty_like(sums)
    filled = counts > 0
    synced[filled] = sums[filled] / counts[filled, None]
    empty_frames = np.clip(np.floor(grid[:-1][~filled] * matrix.frame_rate_hz).astype(int), 0, matrix.n_frames - 1)
    synced[~filled] = values[empty_frames]
    return synced


def tdftm_embed(beat_pcp: np.ndarray, params: TdftmParams = TdftmParams(), source_id: str = "") -> TdftmEmbedding:
    """
    Median over patches of the flattened 2D DFT magnitude of each ``12 x B`` patch.

    Inputs shorter than ``B`` beats are tiled cyclically up to ``B``.
    """
    beat_pcp = np.asarray(beat_pcp, dtype=np.float64)
    n_beats = beat_pcp.shape[0]
    if n_beats < 1:
        raise TooShort("No beats to embed")
    size = params.patch_beats
    if n_beats < size:
        beat_pcp = beat_pcp[np.arange(size) % n_beats]

    # (n_patches, 12, B)
    patches = sliding_window_view(beat_pcp, size, axis=0)[::params.patch_hop]
    magnitudes = np.abs(np.fft.fft2(patches, axes=(1, 2))).reshape(patches.shape[0], -1)
    return TdftmEmbedding(np.median(magnitudes, axis=0), source_id)


def tdftm_distance(a: TdftmEmbedding, b: TdftmEmbedding) -> float:
    if a.vector.shape != b.vector.shape:
        raise LengthMismatch(f"Embedding lengths differ: {a.vector.shape} vs {b.vector.shape}")
    return float(np.linalg.norm(a.vector - b.vector))


class TdftmBackend:
    name = "2dftm"
    pairwise = True

    def __init__(self, params: TdftmParams = TdftmParams()):
        self.params = params
        self._embeddings: Dict[str, TdftmEmbedding] = {}

    def _embed(self, matrix: PcpMatrix, beats: Optional[BeatGrid], source_id: str) -> TdftmEmbedding:
        return tdftm_embed(beat_synchronize(matrix, beats, self.params), self.params, source_id)

    def prepare_references(self, references) -> None:
        self._embeddings = {ref.track_id: self._embed(ref.features, ref.beats, ref.track_id) for ref in references}

    def prepare_query(self, window, concert_id: str = "") -> TdftmEmbedding:
        beats = window.beats if window.beats is not None and len(window.beats.beat_times_s) >= 2 else None
        return self._embed(window.frames, beats, str(window.index))

    def distance(self, query: TdftmEmbedding, ref_id: str) -> float:
        return tdftm_distance(query, self._embeddings[ref_id])
