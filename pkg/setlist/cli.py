"""
Command-line interface: ``ingest``, ``synth``, ``identify``, ``train-classifier``,
``evaluate`` and ``bench``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
import argparse
import configparser
import contextlib
import sys
import time
from pathlib import Path
from typing import List, Optional

from otel import otel_utils
from setlist.backends import BACKEND_NAMES
from setlist.backends.embed import fallback_embed, window_embedding_id, write_embeddings
from setlist.backends.qmax import NORMALIZATIONS, QmaxParams
from setlist.backends.tdftm import TdftmParams
from setlist.bench import bench, write_bench_csv
from setlist.catalog import load_manifest, load_references
from setlist.errors import DataError, MissingFile, SetlistError, UsageError
from setlist.evaluation import evaluate_results
from setlist.features import FeatureMeta, SourceKind, parse_feature_file, write_feature_csv, write_feature_file
from setlist.logging_utils import get_runs_logger, get_setlist_logger, setup_logging
from setlist.os_utils import ensure_dir
from setlist.pipeline import RunConfig, identify_manifest, labeled_features_from_results
from setlist.postprocess import save_classifier, train_classifier
from setlist.synthkit import SynthConfig, write_synthetic_dataset
from setlist.windowing import WindowingConfig, audible_windows, make_windows

logger = get_setlist_logger()
runs_logger = get_runs_logger()

CONFIG_SECTION = "setlist"
INGEST_FORMATS = ("slpc", "csv")


class SetlistArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_windowing_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window-s", type=float, default=120.0, help="Window size W in seconds")
    parser.add_argument("--hop-s", type=float, default=30.0, help="Hop size H in seconds")
    parser.add_argument("--min-tail-s", type=float, default=30.0, help="Shortest kept tail window in seconds")


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--patch-beats", type=int, default=75, help="2dftm patch length in beats")
    parser.add_argument("--qmax-downsample", type=int, default=1, help="Median-aggregate this many frames before Qmax")
    parser.add_argument("--qmax-stack-size", type=int, default=9)
    parser.add_argument("--qmax-stack-stride", type=int, default=1)
    parser.add_argument("--qmax-kappa", type=float, default=0.095)
    parser.add_argument("--qmax-gap-onset", type=float, default=0.5)
    parser.add_argument("--qmax-gap-extend", type=float, default=0.7)
    parser.add_argument("--qmax-normalization", choices=NORMALIZATIONS, default="sqrt")
    parser.add_argument("--no-oti", action="store_true", help="Disable the optimal transposition index")
    parser.add_argument("--ref-embeddings", type=Path, help="Reference embeddings for the embed backend")
    parser.add_argument("--query-embeddings", type=Path, help="Window embeddings for the embed backend")


def build_parser() -> argparse.ArgumentParser:
    parser = SetlistArgumentParser(prog="setlist", description="Setlist identification for live concerts")
    parser.add_argument("--parallelism", type=int, default=1, help="Worker threads for distance computations")
    parser.add_argument("--frame-rate", type=float, default=None, help="Frame rate of CSV feature files (Hz)")
    parser.add_argument("--config", type=Path, help=f"ini file whose [{CONFIG_SECTION}] section overrides flags")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="Validate feature files and convert them to SLPC")
    ingest.add_argument("inputs", nargs="+", type=Path)
    ingest.add_argument("--out-dir", type=Path, required=True)
    ingest.add_argument("--kind", choices=[kind.value for kind in SourceKind], default=SourceKind.REFERENCE.value)
    ingest.add_argument("--embed-out", type=Path, help="Also write fallback embeddings (SLEM) of the inputs")
    ingest.add_argument("--format", choices=INGEST_FORMATS, default="slpc", help="Output feature format")
    _add_windowing_args(ingest)

    synth = commands.add_parser("synth", help="Generate a synthetic dataset")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--n-refs", type=int, default=50)
    synth.add_argument("--n-concerts", type=int, default=5)
    synth.add_argument("--n-distractors", type=int, default=0)
    synth.add_argument("--out-dir", type=Path, required=True)
    synth.add_argument("--ref-duration", type=float, nargs=2, default=(120.0, 300.0), metavar=("MIN", "MAX"))
    synth.add_argument("--songs-per-concert", type=int, nargs=2, default=(8, 12), metavar=("MIN", "MAX"))
    synth.add_argument("--gap", type=float, nargs=2, default=(5.0, 20.0), metavar=("MIN", "MAX"))
    synth.add_argument("--transpose-prob", type=float, default=0.0)
    synth.add_argument("--stretch-prob", type=float, default=0.0)
    synth.add_argument("--truncate-prob", type=float, default=0.0)
    synth.add_argument("--noise-level", type=float, default=0.0)

    identify = commands.add_parser("identify", help="Identify the setlists of a manifest's concerts")
    identify.add_argument("--manifest", type=Path, required=True)
    identify.add_argument("--concert", action="append", help="Only this concert id (repeatable)")
    identify.add_argument("--out-dir", type=Path, default=Path("results"))
    identify.add_argument("--backend", choices=BACKEND_NAMES, default="qmax")
    identify.add_argument("--keep-every", type=int, default=1, help="Keep every n-th window")
    identify.add_argument("--classifier", type=Path, help="Classifier file from train-classifier")
    identify.add_argument("--dump-raw", action="store_true", help="Also write <concert_id>.raw.csv")
    identify.add_argument("--from-raw", type=Path, help="Finalize <concert_id>.raw.csv dumps from this directory")
    _add_windowing_args(identify)
    _add_backend_args(identify)

    train = commands.add_parser("train-classifier", help="Train the false-positive filter on labeled results")
    train.add_argument("--results-dir", type=Path, required=True)
    train.add_argument("--manifest", type=Path, required=True)
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--id", default="linear-svm", help="Classifier id recorded in result documents")

    evaluate = commands.add_parser("evaluate", help="Score result documents against the annotations")
    evaluate.add_argument("--results-dir", type=Path, required=True)
    evaluate.add_argument("--manifest", type=Path, required=True)
    evaluate.add_argument("--out", type=Path, help="Report CSV (default: <results-dir>/report.csv)")
    evaluate.add_argument("--before-classifier", action="store_true", help="Also count rejected entries")

    bench_parser = commands.add_parser("bench", help="Time the backends on one concert")
    bench_parser.add_argument("--manifest", type=Path, required=True)
    bench_parser.add_argument("--concert", help="Concert id (default: the first one)")
    bench_parser.add_argument("--backends", default="qmax,2dftm,embed-fallback")
    bench_parser.add_argument("--repeats", type=int, default=3)
    bench_parser.add_argument("--keep-every", type=int, default=1, help="Keep every n-th window")
    bench_parser.add_argument("--out", type=Path, default=Path("bench.csv"))
    bench_parser.add_argument("--profile", action="store_true", help="Profile with pyroscope when enabled")
    _add_windowing_args(bench_parser)
    _add_backend_args(bench_parser)
    return parser


def _find_action(parser: argparse.ArgumentParser, command: str, dest: str) -> Optional[argparse.Action]:
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for candidate in (parser, subparsers.choices[command]):
        for action in candidate._actions:
            if action.dest == dest:
                return action
    return None


def apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    """Values of the ``[setlist]`` section override the command-line flags of the same name."""
    if args.config is None:
        return args
    config = configparser.ConfigParser()
    if not config.read(args.config):
        raise MissingFile(f"Config file {args.config} does not exist")
    if not config.has_section(CONFIG_SECTION):
        raise UsageError(f"{args.config} has no [{CONFIG_SECTION}] section")

    section = config[CONFIG_SECTION]
    for key in section:
        action = _find_action(parser, args.command, key)
        if action is None or key in ("command", "config", "help"):
            raise UsageError(f"{args.config}: '{key}' is not an option of '{args.command}'")
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = section.getboolean(key)
            elif isinstance(action, argparse._AppendAction):
                value = section[key].split()
            elif action.nargs not in (None, "?"):
                value = [action.type(v) if action.type else v for v in section[key].split()]
            else:
                value = action.type(section[key]) if action.type else section[key]
        except ValueError as e:
            raise UsageError(f"{args.config}: bad value for '{key}': {e}") from e
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{args.config}: '{key}' must be one of {list(action.choices)}")
        setattr(args, key, value)
    return args


def _windowing(args) -> WindowingConfig:
    return WindowingConfig(window_s=args.window_s, hop_s=args.hop_s, min_tail_s=args.min_tail_s)


def _run_config(args, backend: str) -> RunConfig:
    return RunConfig(
        backend=backend,
        windowing=_windowing(args),
        classifier_path=getattr(args, "classifier", None),
        parallelism=args.parallelism,
        keep_every=getattr(args, "keep_every", 1),
        out_dir=getattr(args, "out_dir", Path("results")),
        dump_raw=getattr(args, "dump_raw", False),
        qmax=QmaxParams(
            stack_size=args.qmax_stack_size,
            stack_stride=args.qmax_stack_stride,
            kappa=args.qmax_kappa,
            gap_onset=args.qmax_gap_onset,
            gap_extend=args.qmax_gap_extend,
            oti_enabled=not args.no_oti,
            normalization=args.qmax_normalization,
            downsample=args.qmax_downsample,
        ),
        tdftm=TdftmParams(patch_beats=args.patch_beats),
        reference_embeddings_path=args.ref_embeddings,
        query_embeddings_path=args.query_embeddings,
    )


def cmd_ingest(args) -> None:
    out_dir = ensure_dir(args.out_dir)
    kind = SourceKind(args.kind)
    embeddings = []
    for path in args.inputs:
        matrix, meta, beats = parse_feature_file(path, args.frame_rate, kind)
        if args.format == "csv":
            write_feature_csv(matrix, out_dir / f"{meta.track_id}.csv")
        else:
            write_feature_file(matrix, FeatureMeta(meta.track_id, matrix.duration_s, kind), beats, out_dir / f"{meta.track_id}.slpc")
        if args.embed_out is None:
            continue
        if matrix.is_silent:
            logger.warning(f"{meta.track_id} is silent, no embedding written")
        elif kind is SourceKind.REFERENCE:
            embeddings.append(fallback_embed(matrix, embedding_id=meta.track_id))
        else:
            for window in audible_windows(make_windows(matrix, _windowing(args), beats)):
                embeddings.append(fallback_embed(window.frames, embedding_id=window_embedding_id(meta.track_id, window.index)))
    if args.embed_out is not None:
        write_embeddings(embeddings, args.embed_out)
    logger.info(f"Ingested {len(args.inputs)} {kind.value} files into {out_dir}")


def cmd_synth(args) -> None:
    cfg = SynthConfig(
        seed=args.seed,
        n_references=args.n_refs,
        ref_duration_range_s=tuple(args.ref_duration),
        songs_per_concert_range=tuple(args.songs_per_concert),
        gap_range_s=tuple(args.gap),
        transpose_prob=args.transpose_prob,
        stretch_prob=args.stretch_prob,
        truncate_prob=args.truncate_prob,
        noise_level=args.noise_level,
        n_distractors=args.n_distractors,
        **({"frame_rate_hz": args.frame_rate} if args.frame_rate else {}),
    )
    manifest_path = write_synthetic_dataset(cfg, args.n_concerts, args.out_dir)
    print(manifest_path)


def cmd_identify(args) -> None:
    manifest = load_manifest(args.manifest)
    written = identify_manifest(
        manifest, _run_config(args, args.backend), args.concert, args.frame_rate, raw_dir=args.from_raw,
    )
    for path in written:
        print(path)


def cmd_train_classifier(args) -> None:
    manifest = load_manifest(args.manifest)
    samples = labeled_features_from_results(args.results_dir, manifest)
    classifier = train_classifier(samples, seed=args.seed, classifier_id=args.id)
    save_classifier(classifier, args.out)
    print(args.out)


def cmd_evaluate(args) -> None:
    manifest = load_manifest(args.manifest)
    out = args.out or Path(args.results_dir) / "report.csv"
    _, pooled = evaluate_results(args.results_dir, manifest, out, accepted_only=not args.before_classifier)
    print(f"TP={pooled.tp} FP={pooled.fp} DAP={pooled.dap:.4f} DLP={pooled.dlp:.4f} TA={pooled.ta} TL={pooled.tl:.1f}")


def cmd_bench(args) -> None:
    manifest = load_manifest(args.manifest)
    if not manifest.concerts:
        raise UsageError(f"{args.manifest} lists no concerts")
    try:
        entry = manifest.concert(args.concert) if args.concert else manifest.concerts[0]
    except KeyError:
        raise UsageError(f"Concert '{args.concert}' is not in {args.manifest}") from None
    backends = [name.strip() for name in args.backends.split(",") if name.strip()]
    unknown = [name for name in backends if name not in BACKEND_NAMES]
    if unknown:
        raise UsageError(f"Unknown backends: {', '.join(unknown)}")

    if args.profile:
        otel_utils.start_profiling(otel_utils.get_service_name(), logger, tags={"backends": ",".join(backends)})
    references = load_references(manifest, args.frame_rate)
    concert, _, _ = parse_feature_file(entry.feature_path, args.frame_rate, SourceKind.CONCERT)
    table = bench(
        references, concert, backends, _run_config(args, backends[0]), repeats=args.repeats, concert_id=entry.concert_id,
    )
    write_bench_csv(table, args.out)
    print(table.to_string(index=False))


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "identify": cmd_identify,
    "train-classifier": cmd_train_classifier,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def load_configs() -> None:
    setup_logging()
    if otel_utils.is_app_tracing_enabled():
        logger.info("APP Tracing is enabled so setting up OTEL configurations")
        otel_utils.setup_otel(otel_utils.get_service_name(), logger)
    else:
        logger.info("APP Tracing is disabled, skipping OTEL configurations")


def run(argv: Optional[List[str]] = None) -> int:
    """Parses and runs one command; returns the exit code."""
    parser = build_parser()
    command = "unknown"
    started = time.perf_counter()
    command_metrics = otel_utils.get_command_metrics_manager()
    try:
        args = parser.parse_args(argv)
        command = args.command
        args = apply_config_file(parser, args)
        if args.parallelism < 1:
            raise UsageError(f"--parallelism must be >= 1, got {args.parallelism}")
        tracker = command_metrics.track(command) if command_metrics is not None else contextlib.nullcontext()
        with tracker:
            COMMANDS[command](args)
        exit_code = 0
    except UsageError as e:
        logger.error(f"Usage error in {command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        exit_code = e.exit_code
    except DataError as e:
        logger.error(f"{type(e).__name__} in {command}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        exit_code = e.exit_code
    except SetlistError as e:
        logger.error(f"{type(e).__name__} in {command}: {e}")
        exit_code = e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        exit_code = 2

    elapsed_time_ms = (time.perf_counter() - started) * 1000
    runs_logger.info(f"{command} exit={exit_code} {elapsed_time_ms:.3f} ms")
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    load_configs()
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
