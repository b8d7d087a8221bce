"""
Runtime benchmark of the backends: reference preprocessing time and the time of all
window-vs-reference comparisons, each the median over repeated runs.
"""
import statistics
import time
from dataclasses import replace
from typing import List, Sequence

import pandas as pd
from opentelemetry import trace

from setlist.catalog import ReferenceTrack
from setlist.errors import EmptyCatalog, IoFailure, UsageError
from setlist.features import PathLike, PcpMatrix
from setlist.logging_utils import get_setlist_logger
from setlist.pipeline import RunConfig, audible_references, build_backend
from setlist.windowing import QueryWindow, audible_windows, decimate_windows, make_windows

logger = get_setlist_logger()
tracer = trace.get_tracer(__name__)

BENCH_COLUMNS = [
    "backend", "n_references", "n_windows", "n_pairs", "preprocess_s", "distance_s", "per_pair_ms", "repeats",
]
MIN_REPEATS = 3


def _compare_all(backend, windows: Sequence[QueryWindow], reference_ids: Sequence[str], concert_id: str) -> None:
    for window in windows:
        query = backend.prepare_query(window, concert_id)
        if backend.pairwise:
            for ref_id in reference_ids:
                backend.distance(query, ref_id)
        else:
            backend.search(query)


def time_backend(
        backend,
        references: Sequence[ReferenceTrack],
        windows: Sequence[QueryWindow],
        repeats: int,
        concert_id: str = "",
) -> dict:
    reference_ids = [ref.track_id for ref in references]
    preprocess, distance = [], []
    for _ in range(repeats):
        started = time.perf_counter()
        backend.prepare_references(references)
        prepared = time.perf_counter()
        _compare_all(backend, windows, reference_ids, concert_id)
        finished = time.perf_counter()
        preprocess.append(prepared - started)
        distance.append(finished - prepared)

    n_pairs = len(windows) * len(references)
    distance_s = statistics.median(distance)
    return {
        "backend": backend.name,
        "n_references": len(references),
        "n_windows": len(windows),
        "n_pairs": n_pairs,
        "preprocess_s": statistics.median(preprocess),
        "distance_s": distance_s,
        "per_pair_ms": 1000.0 * distance_s / n_pairs if n_pairs else 0.0,
        "repeats": repeats,
    }


def bench(
        references: Sequence[ReferenceTrack],
        concert: PcpMatrix,
        backends: Sequence[str],
        cfg: RunConfig,
        repeats: int = MIN_REPEATS,
        concert_id: str = "",
) -> pd.DataFrame:
    """
    Times each backend on the same windows and references.

    Windows are compared serially so the timings measure the backend alone. ``cfg.keep_every``
    thins the windows as in ``identify``; silent windows and references are left out.
    ``concert_id`` names the window embeddings the ``embed`` backend looks up.

    Returns:
        One row per backend with the columns of ``BENCH_COLUMNS``.
    """
    if repeats < MIN_REPEATS:
        raise UsageError(f"bench needs at least {MIN_REPEATS} repeats, got {repeats}")
    if not references:
        raise EmptyCatalog("The reference catalog is empty")
    references = audible_references(references)
    windows: List[QueryWindow] = audible_windows(
        decimate_windows(make_windows(concert, cfg.windowing), cfg.keep_every)
    )

    rows = []
    for name in backends:
        backend = build_backend(replace(cfg, backend=name))
        with tracer.start_as_current_span("bench") as span:
            span.set_attribute("setlist.backend", name)
            row = time_backend(backend, references, windows, repeats, concert_id)
        logger.info(
            f"{name}: preprocess {row['preprocess_s']:.3f} s, distances {row['distance_s']:.3f} s "
            f"({row['per_pair_ms']:.3f} ms per pair over {row['n_pairs']} pairs)"
        )
        rows.append(row)
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def write_bench_csv(table: pd.DataFrame, path: PathLike) -> None:
    try:
        table.to_csv(path, index=False)
    except OSError as e:
        raise IoFailure(f"Could not write benchmark {path}: {e}") from e
