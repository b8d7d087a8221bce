"""
Alignment-based version identification: frame stacking, optimal transposition index,
binary cross-recurrence matrix and the Qmax local alignment score.
"""
import math
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np
from scipy.spatial.distance import cdist

from setlist.errors import DegenerateProfile, TooShort, UsageError
from setlist.features import N_BINS, PcpMatrix, rotate_pitch
from setlist.logging_utils import get_setlist_logger

logger = get_setlist_logger()

MAX_DISTANCE = 1.0e9
NORMALIZATIONS = ("sqrt", "linear")


@dataclass(frozen=True)
class QmaxParams:
    stack_size: int = 9
    stack_stride: int = 1
    kappa: float = 0.095
    gap_onset: float = 0.5
    gap_extend: float = 0.7
    oti_enabled: bool = True
    normalization: str = "sqrt"
    downsample: int = 1

    def __post_init__(self):
        if self.stack_size < 1 or self.stack_stride < 1:
            raise UsageError("stack_size and stack_stride must be >= 1")
        if not 0 < self.kappa < 1:
            raise UsageError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.gap_onset < 0 or self.gap_extend < 0:
            raise UsageError("gap penalties must be >= 0")
        if self.normalization not in NORMALIZATIONS:
            raise UsageError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization}")
        if self.downsample < 1:
            raise UsageError("downsample must be >= 1")


@dataclass(frozen=True)
class CrossRecurrenceMatrix:
    bits: np.ndarray

    @property
    def shape(self):
        return self.bits.shape


def _as_array(matrix: Union[PcpMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(matrix, PcpMatrix):
        return matrix.values.astype(np.float64)
    return np.asarray(matrix, dtype=np.float64)


def stack_frames(matrix: Union[PcpMatrix, np.ndarray], m: int, tau: int) -> np.ndarray:
    """Row ``i`` of the result is the concatenation of frames ``i, i+tau, ..., i+(m-1)*tau``."""
    values = _as_array(matrix)
    n_out = values.shape[0] - (m - 1) * tau
    if n_out < 1:
        raise TooShort(f"{values.shape[0]} frames cannot hold one stack of m={m}, tau={tau}")
    return np.concatenate([values[j * tau: j * tau + n_out] for j in range(m)], axis=1)


def downsample_frames(values: np.ndarray, factor: int) -> np.ndarray:
    """Median of each run of ``factor`` consecutive frames (the last run may be shorter)."""
    if factor == 1:
        return values
    n_blocks = math.ceil(values.shape[0] / factor)
    return np.stack([np.median(values[b * factor:(b + 1) * factor], axis=0) for b in range(n_blocks)])


def _profile(matrix: Union[PcpMatrix, np.ndarray]) -> np.ndarray:
    profile = _as_array(matrix).mean(axis=0)
    if not np.linalg.norm(profile) > 0:
        raise DegenerateProfile("Global pitch profile is all zeros")
    return profile


def compute_oti(query: Union[PcpMatrix, np.ndarray], ref: Union[PcpMatrix, np.ndarray]) -> int:
    """
    Optimal transposition index: the shift ``k`` for which ``rotate_pitch(query, k)`` agrees
    best with ``ref`` (dot product of global profiles). Ties go to the smallest ``k``.
    """
    query_profile = _profile(query)
    ref_profile = _profile(ref)
    scores = [float(np.dot(np.roll(query_profile, k), ref_profile)) for k in range(N_BINS)]
    return int(np.argmax(scores))


def _kappa_count(kappa: float, n: int) -> int:
    return min(n, max(1, math.ceil(kappa * n - 1e-9)))


def binarize_distance_matrix(distances: np.ndarray, kappa: float) -> CrossRecurrenceMatrix:
    """
    Sets a cell iff its distance is within the kappa-quantile of both its row and its column.
    The quantile of ``n`` values is the smallest value with at least ``ceil(kappa * n)`` values below or equal.
    """
    n_rows, n_cols = distances.shape
    row_k = _kappa_count(kappa, n_cols)
    col_k = _kappa_count(kappa, n_rows)
    row_threshold = np.partition(distances, row_k - 1, axis=1)[:, row_k - 1]
    col_threshold = np.partition(distances, col_k - 1, axis=0)[col_k - 1, :]
    bits = (distances <= row_threshold[:, None]) & (distances <= col_threshold[None, :])
    return CrossRecurrenceMatrix(bits)


def binarize_cross_similarity(query_stacked: np.ndarray, ref_stacked: np.ndarray, kappa: float) -> CrossRecurrenceMatrix:
    distances = cdist(np.atleast_2d(query_stacked), np.atleast_2d(ref_stacked), metric="euclidean")
    return binarize_distance_matrix(distances, kappa)


def qmax_score(crp: CrossRecurrenceMatrix, gap_onset: float = 0.5, gap_extend: float = 0.7) -> float:
    """
    Length of the best local alignment path through the cross-recurrence matrix.

    Paths step by (1,1), (2,1) or (1,2). A set cell extends the best predecessor by one; an
    unset cell takes the best predecessor minus its gap penalty (``gap_onset`` after a set
    cell, ``gap_extend`` after an unset one), floored at 0. Cells outside the matrix are 0.
    Rows depend only on the two previous rows, so each row is computed as one vector step.
    """
    bits = np.asarray(crp.bits, dtype=bool)
    n_rows, n_cols = bits.shape
    score = np.zeros((n_rows + 2, n_cols + 2))
    padded = np.zeros((n_rows + 2, n_cols + 2), dtype=bool)
    padded[2:, 2:] = bits
    penalty = np.where(padded, gap_onset, gap_extend)

    for i in range(2, n_rows + 2):
        diag = score[i - 1, 1:-1]
        skip_row = score[i - 2, 1:-1]
        skip_col = score[i - 1, :-2]
        hit = np.maximum(np.maximum(diag, skip_row), skip_col) + 1.0
        miss = np.maximum.reduce([
            np.zeros(n_cols),
            diag - penalty[i - 1, 1:-1],
            skip_row - penalty[i - 2, 1:-1],
            skip_col - penalty[i - 1, :-2],
        ])
        score[i, 2:] = np.where(padded[i, 2:], hit, miss)
    return float(score.max())


def normalize_score(score: float, n_ref_stacked: int, normalization: str = "sqrt") -> float:
    if score <= 0:
        return MAX_DISTANCE
    if normalization == "linear":
        return n_ref_stacked / score
    return math.sqrt(n_ref_stacked) / score


def qmax_distance(query_window: PcpMatrix, ref: PcpMatrix, params: QmaxParams = QmaxParams()) -> float:
    """
    Distance between a query window and a reference, normalized by the reference length.

    With OTI enabled the reference is rotated onto the query, so a pitch-rotated reference
    is compared exactly as the unrotated one.
    """
    if params.oti_enabled:
        shift = compute_oti(query_window, ref)
        if shift:
            ref = rotate_pitch(ref, N_BINS - shift)
    query_values = downsample_frames(_as_array(query_window), params.downsample)
    ref_values = downsample_frames(_as_array(ref), params.downsample)
    query_stacked = stack_frames(query_values, params.stack_size, params.stack_stride)
    ref_stacked = stack_frames(ref_values, params.stack_size, params.stack_stride)
    crp = binarize_cross_similarity(query_stacked, ref_stacked, params.kappa)
    score = qmax_score(crp, params.gap_onset, params.gap_extend)
    return normalize_score(score, ref_stacked.shape[0], params.normalization)


class QmaxBackend:
    """Pairwise backend: every (window, reference) pair runs the full alignment."""
    name = "qmax"
    pairwise = True

    def __init__(self, params: QmaxParams = QmaxParams()):
        self.params = params
        self._references: Dict[str, PcpMatrix] = {}

    def prepare_references(self, references) -> None:
        self._references = {ref.track_id: ref.features for ref in references}

    def prepare_query(self, window, concert_id: str = "") -> PcpMatrix:
        return window.frames

    def distance(self, query: PcpMatrix, ref_id: str) -> float:
        ref = self._references[ref_id]
        if query.is_silent or ref.is_silent:
            logger.debug(f"Silent input against {ref_id}, scoring it as MAX_DISTANCE")
            return MAX_DISTANCE
        return qmax_distance(query, ref, self.params)
