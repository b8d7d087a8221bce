"""
Deterministic synthetic catalogs and concerts with exact ground truth.

References are chord progressions rendered as pitch-class profiles: a per-song key, a cycle
of 4 to 8 diatonic triads with random durations, a lead line of scale tones, a per-song
pitch-class emphasis and a low noise floor. Concerts concatenate drawn references, each
optionally transposed, time-stretched or truncated, separated by uniform-noise gaps.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from setlist.catalog import (
    Annotation,
    AudioQuality,
    CatalogManifest,
    ConcertEntry,
    Genre,
    ReferenceEntry,
    write_annotations,
    write_manifest,
)
from setlist.errors import CatalogTooSmall, DurationTooShort, UsageError
from setlist.features import (
    DEFAULT_FRAME_RATE_HZ,
    N_BINS,
    FeatureMeta,
    PathLike,
    PcpMatrix,
    SourceKind,
    rotate_pitch,
    seconds_to_frames,
    time_stretch,
    write_feature_file,
)
from setlist.logging_utils import get_setlist_logger
from setlist.os_utils import ensure_dir

logger = get_setlist_logger()

MIN_REFERENCE_DURATION_S = 30.0
MIN_PROFILE_DISTANCE = 0.05
MAX_ATTEMPTS = 500
MIN_KEPT_FRACTION = 0.6

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
MINOR_SCALE = (0, 2, 3, 5, 7, 8, 10)
TRIAD_WEIGHTS = (1.0, 0.7, 0.85)
CHORD_DURATION_RANGE_S = (1.5, 4.0)
LEAD_NOTE_RANGE_S = (0.4, 1.0)
CROSSFADE_S = 0.25
REFERENCE_NOISE = 0.05


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_references: int = 50
    ref_duration_range_s: Tuple[float, float] = (120.0, 300.0)
    songs_per_concert_range: Tuple[int, int] = (8, 12)
    gap_range_s: Tuple[float, float] = (5.0, 20.0)
    transpose_prob: float = 0.0
    stretch_prob: float = 0.0
    truncate_prob: float = 0.0
    stretch_range: Tuple[float, float] = (0.8, 1.25)
    noise_level: float = 0.0
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ
    n_distractors: int = 0

    def __post_init__(self):
        for name in ("ref_duration_range_s", "songs_per_concert_range", "gap_range_s", "stretch_range"):
            low, high = getattr(self, name)
            if low > high:
                raise UsageError(f"{name} must be ordered, got ({low}, {high})")
        for name in ("transpose_prob", "stretch_prob", "truncate_prob", "noise_level"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise UsageError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.ref_duration_range_s[0] < MIN_REFERENCE_DURATION_S:
            raise UsageError(f"References must last at least {MIN_REFERENCE_DURATION_S} s")
        if self.songs_per_concert_range[0] < 1:
            raise UsageError("Concerts need at least one song")
        if self.gap_range_s[0] < 0:
            raise UsageError("Gaps must be >= 0 s")
        if not 0.5 <= self.stretch_range[0] <= self.stretch_range[1] <= 2.0:
            raise UsageError(f"stretch_range must lie within [0.5, 2.0], got {self.stretch_range}")
        if self.n_references < 1 or self.n_distractors < 0:
            raise UsageError("n_references must be >= 1 and n_distractors >= 0")
        if not self.frame_rate_hz > 0:
            raise UsageError("frame_rate_hz must be positive")


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _triad(key: int, scale: Tuple[int, ...], degree: int) -> np.ndarray:
    template = np.zeros(N_BINS)
    for step, weight in zip((0, 2, 4), TRIAD_WEIGHTS):
        template[(key + scale[(degree + step) % 7]) % N_BINS] = weight
    return template


def _timeline(rng: np.random.Generator, n_frames: int, rate: float, duration_range: Tuple[float, float], n_events: int) -> np.ndarray:
    """Event index per frame for events of random durations, repeating cyclically."""
    durations = rng.uniform(*duration_range, size=n_events)
    boundaries = np.cumsum(durations)
    positions = np.mod(np.arange(n_frames) / rate, boundaries[-1])
    return np.minimum(np.searchsorted(boundaries, positions, side="right"), n_events - 1)


def synth_reference(seed: int, duration_s: float, frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ, track_id: str = "") -> Tuple[PcpMatrix, FeatureMeta]:
    """
    Renders one synthetic song. The same seed always gives the same matrix.

    Raises:
        DurationTooShort: If duration_s < 30.
    """
    if duration_s < MIN_REFERENCE_DURATION_S:
        raise DurationTooShort(f"Synthetic references need >= {MIN_REFERENCE_DURATION_S} s, got {duration_s}")
    rng = np.random.default_rng(seed)
    n_frames = seconds_to_frames(duration_s, frame_rate_hz)

    key = int(rng.integers(N_BINS))
    scale = MAJOR_SCALE if rng.random() < 0.5 else MINOR_SCALE
    n_chords = int(rng.integers(4, 9))
    degrees = rng.integers(0, 7, size=n_chords)
    templates = np.stack([_triad(key, scale, int(d)) for d in degrees])
    chords = templates[_timeline(rng, n_frames, frame_rate_hz, CHORD_DURATION_RANGE_S, n_chords)]
    fade = max(1, int(round(CROSSFADE_S * frame_rate_hz)))
    chords = uniform_filter1d(chords, size=fade, axis=0, mode="nearest")

    n_notes = int(np.ceil(duration_s / LEAD_NOTE_RANGE_S[0])) + 1
    notes = (key + np.asarray(scale)[rng.integers(0, 7, size=n_notes)]) % N_BINS
    lead = np.zeros((n_frames, N_BINS))
    lead[np.arange(n_frames), notes[_timeline(rng, n_frames, frame_rate_hz, LEAD_NOTE_RANGE_S, n_notes)]] = 1.0

    emphasis = rng.uniform(0.2, 1.0, size=N_BINS) ** 2
    values = 0.75 * chords * emphasis + 0.25 * lead + REFERENCE_NOISE * rng.uniform(size=(n_frames, N_BINS))
    matrix = PcpMatrix(np.clip(values, 0.0, 1.0), frame_rate_hz)
    return matrix, FeatureMeta(track_id or f"synth-{seed}", matrix.duration_s, SourceKind.REFERENCE)


def _profile_distances(profile: np.ndarray, accepted: List[np.ndarray]) -> np.ndarray:
    if not accepted:
        return np.array([np.inf])
    stacked = np.stack(accepted)
    similarity = stacked @ profile / (np.linalg.norm(stacked, axis=1) * np.linalg.norm(profile))
    return 1.0 - similarity


def played_track_id(index: int) -> str:
    return f"song-{index:04d}"


def distractor_track_id(index: int) -> str:
    return f"distractor-{index:04d}"


def synth_catalog(cfg: SynthConfig) -> List[Tuple[str, PcpMatrix]]:
    """
    Generates ``n_references`` playable songs followed by ``n_distractors`` never-played ones.

    Every pair of tracks has a global-profile cosine distance of at least 0.05; a track that
    comes too close to an earlier one is regenerated with the next derived seed.
    """
    ids = [played_track_id(i) for i in range(cfg.n_references)]
    ids += [distractor_track_id(i) for i in range(cfg.n_distractors)]
    tracks: List[Tuple[str, PcpMatrix]] = []
    profiles: List[np.ndarray] = []
    for position, track_id in enumerate(ids):
        for attempt in range(MAX_ATTEMPTS):
            seed = derive_seed(cfg.seed, position, attempt)
            duration = np.random.default_rng(seed).uniform(*cfg.ref_duration_range_s)
            matrix, _ = synth_reference(seed, duration, cfg.frame_rate_hz, track_id)
            profile = matrix.global_profile()
            if _profile_distances(profile, profiles).min() >= MIN_PROFILE_DISTANCE:
                break
        else:
            raise UsageError(
                f"Could not generate {len(ids)} references {MIN_PROFILE_DISTANCE} apart; "
                f"stopped at {track_id}"
            )
        tracks.append((track_id, matrix))
        profiles.append(profile)
    logger.info(f"Generated {cfg.n_references} references and {cfg.n_distractors} distractors (seed {cfg.seed})")
    return tracks


def _degrade(rng: np.random.Generator, values: PcpMatrix, cfg: SynthConfig) -> PcpMatrix:
    if rng.random() < cfg.transpose_prob:
        values = rotate_pitch(values, int(rng.integers(1, N_BINS)))
    if rng.random() < cfg.stretch_prob:
        values = time_stretch(values, float(rng.uniform(*cfg.stretch_range)))
    if rng.random() < cfg.truncate_prob:
        kept = max(1, int(np.ceil(values.n_frames * rng.uniform(MIN_KEPT_FRACTION, 1.0))))
        offset = int(rng.integers(0, values.n_frames - kept + 1))
        values = values.slice(offset, offset + kept)
    if cfg.noise_level > 0:
        noise = rng.uniform(size=values.values.shape)
        values = PcpMatrix((1.0 - cfg.noise_level) * values.values + cfg.noise_level * noise, values.frame_rate_hz)
    return values


def synth_concert(refs: Sequence[Tuple[str, PcpMatrix]], cfg: SynthConfig, seed: int) -> Tuple[PcpMatrix, List[Annotation]]:
    """
    Builds a concert from ``k`` songs drawn without replacement, with a noise gap between
    consecutive songs. Annotations carry the exact post-transform timestamps.

    Raises:
        CatalogTooSmall: Fewer references than the minimum songs per concert.
    """
    low, high = cfg.songs_per_concert_range
    if not refs or len(refs) < low:
        raise CatalogTooSmall(f"Concerts need at least {low} songs, catalog holds {len(refs)}")
    rng = np.random.default_rng(seed)
    rate = refs[0][1].frame_rate_hz
    k = min(int(rng.integers(low, high + 1)), len(refs))
    order = rng.choice(len(refs), size=k, replace=False)

    blocks = []
    annotations = []
    position = 0
    for n, ref_index in enumerate(order):
        if n > 0:
            gap = seconds_to_frames(float(rng.uniform(*cfg.gap_range_s)), rate)
            if gap:
                blocks.append(rng.uniform(size=(gap, N_BINS)))
                position += gap
        track_id, matrix = refs[int(ref_index)]
        song = _degrade(rng, matrix, cfg)
        blocks.append(song.values)
        annotations.append(Annotation(track_id, position / rate, (position + song.n_frames) / rate))
        position += song.n_frames
    return PcpMatrix(np.concatenate(blocks), rate), annotations


def write_synthetic_dataset(cfg: SynthConfig, n_concerts: int, out_dir: PathLike) -> Path:
    """
    Writes reference and concert feature files, annotation CSVs and ``manifest.txt``.
    Concerts cycle through the audio-quality and genre categories.

    Returns:
        The manifest path.
    """
    out_dir = ensure_dir(out_dir)
    refs_dir = ensure_dir(out_dir / "refs")
    concerts_dir = ensure_dir(out_dir / "concerts")
    annotations_dir = ensure_dir(out_dir / "annotations")

    catalog = synth_catalog(cfg)
    references = []
    for index, (track_id, matrix) in enumerate(catalog):
        path = refs_dir / f"{track_id}.slpc"
        write_feature_file(matrix, FeatureMeta(track_id, matrix.duration_s), None, path)
        references.append(ReferenceEntry(track_id, path, artist=f"Synth Artist {index % 7}", title=f"Track {track_id}"))

    played = catalog[:cfg.n_references]
    qualities = list(AudioQuality)
    genres = list(Genre)
    concerts = []
    for c in range(n_concerts):
        concert_id = f"concert-{c:02d}"
        concert, annotations = synth_concert(played, cfg, derive_seed(cfg.seed, 1_000_000 + c))
        feature_path = concerts_dir / f"{concert_id}.slpc"
        annotation_path = annotations_dir / f"{concert_id}.csv"
        write_feature_file(concert, FeatureMeta(concert_id, concert.duration_s, SourceKind.CONCERT), None, feature_path)
        write_annotations(annotations, annotation_path)
        concerts.append(ConcertEntry(
            concert_id, feature_path, annotation_path, qualities[c % len(qualities)], genres[c % len(genres)],
        ))

    manifest_path = out_dir / "manifest.txt"
    write_manifest(CatalogManifest(tuple(references), tuple(concerts)), manifest_path)
    logger.info(f"Wrote synthetic dataset with {n_concerts} concerts to {out_dir}")
    return manifest_path
