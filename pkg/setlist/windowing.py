from dataclasses import dataclass
from typing import List, Optional, Sequence

from setlist.errors import UsageError
from setlist.features import BeatGrid, PcpMatrix, seconds_to_frames


@dataclass(frozen=True)
class WindowingConfig:
    window_s: float = 120.0
    hop_s: float = 30.0
    min_tail_s: float = 30.0

    def __post_init__(self):
        if not self.window_s > self.hop_s > 0:
            raise UsageError(f"Window size must exceed hop size > 0, got W={self.window_s} H={self.hop_s}")
        if not 0 <= self.min_tail_s <= self.window_s:
            raise UsageError(f"min_tail_s must lie in [0, W], got {self.min_tail_s}")


@dataclass(frozen=True)
class QueryWindow:
    index: int
    start_frame: int
    end_frame: int
    frames: PcpMatrix
    beats: Optional[BeatGrid] = None

    @property
    def start_s(self) -> float:
        return self.start_frame / self.frames.frame_rate_hz

    @property
    def end_s(self) -> float:
        return self.end_frame / self.frames.frame_rate_hz


def _window_beats(beats: Optional[BeatGrid], start_s: float, end_s: float) -> Optional[BeatGrid]:
    if beats is None:
        return None
    return BeatGrid(tuple(t - start_s for t in beats.beat_times_s if start_s <= t <= end_s))


def make_windows(concert: PcpMatrix, cfg: WindowingConfig, beats: Optional[BeatGrid] = None) -> List[QueryWindow]:
    """
    Slices a concert into windows ``[k*H, min(k*H + W, duration))``.

    Sizes are converted to frames by rounding down. A concert no longer than W gives the
    single window ``[0, duration)``. Otherwise, windows shorter than ``min_tail_s`` are dropped.
    A concert beat grid is cut per window and shifted to the window start.
    """
    rate = concert.frame_rate_hz
    n_frames = concert.n_frames
    window = max(1, seconds_to_frames(cfg.window_s, rate))
    hop = max(1, seconds_to_frames(cfg.hop_s, rate))
    min_tail = seconds_to_frames(cfg.min_tail_s, rate)

    if n_frames <= window:
        return [QueryWindow(0, 0, n_frames, concert, _window_beats(beats, 0.0, concert.duration_s))]

    windows = []
    for index, start in enumerate(range(0, n_frames, hop)):
        end = min(start + window, n_frames)
        if end - start < min_tail:
            continue
        windows.append(QueryWindow(
            index, start, end, concert.slice(start, end), _window_beats(beats, start / rate, end / rate),
        ))
    return windows


def audible_windows(windows: Sequence[QueryWindow]) -> List[QueryWindow]:
    """Drops windows whose frames are all zero; they are left unmatched."""
    return [w for w in windows if not w.frames.is_silent]


def decimate_windows(windows: Sequence[QueryWindow], keep_every: int) -> List[QueryWindow]:
    """Keeps windows whose index is a multiple of ``keep_every``; the effective hop becomes ``H * keep_every``."""
    if keep_every < 1:
        raise UsageError(f"keep_every must be >= 1, got {keep_every}")
    return [w for w in windows if w.index % keep_every == 0]
