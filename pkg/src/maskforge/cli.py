"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 strategy
validation error.
"""
from __future__ import annotations

import argparse
import csv
import importlib
import io
import logging
import multiprocessing
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .metrics import METRICS, EdgeCasePolicy, LesionMatchConfig, MetricRecord, evaluate_case
from .ranking import IncompleteGridError, RankingGrid, global_rank
from .strategy import (
    StrategyError,
    StrategySpec,
    apply_strategy,
    load_strategy,
    preset_names,
    serialize_strategy,
)
from .synth import SCENARIOS, write_cases
from .transforms import REGISTRY
from .volume import DEFAULT_SCHEME, VolumeError, case_id_from_path, load_volume, save_volume

log = logging.getLogger("maskforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVALID = 0, 1, 2, 3
METRICS_HEADER = ["patient_id", "strategy", "class", "metric", "value"]
VOLUME_SUFFIXES = (".nii.gz", ".nii")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _default_jobs() -> int:
    raw = os.environ.get("MASKFORGE_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def discover_volumes(directory: Path) -> dict[str, Path]:
    """Map case id (filename stem) -> path for every NIfTI file in ``directory``."""
    if not directory.is_dir():
        raise OSError(f"not a directory: {directory}")
    found: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.is_file() and path.name.endswith(VOLUME_SUFFIXES):
            stem = case_id_from_path(path)
            if stem in found:
                raise VolumeError(f"duplicate case id {stem!r}: {found[stem].name} and {path.name}")
            found[stem] = path
    return found


def _run_ordered(fn: Callable[..., Any], tasks: Sequence[tuple], jobs: int) -> list[tuple[bool, Any]]:
    """Run ``fn(*task)`` for every task; results in task order as ``(ok, value_or_error)``."""
    if jobs <= 1 or len(tasks) <= 1:
        results = []
        for task in tasks:
            try:
                results.append((True, fn(*task)))
            except Exception as exc:  # reported per case
                results.append((False, exc))
        return results

    methods = multiprocessing.get_all_start_methods()
    ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks)), mp_context=ctx) as pool:
        futures = [pool.submit(fn, *task) for task in tasks]
        results = []
        for fut in futures:
            try:
                results.append((True, fut.result()))
            except Exception as exc:
                results.append((False, exc))
        return results


# --------------------------------------------------------------------------
# postprocess


def _postprocess_one(src: Path, dst: Path, spec: StrategySpec) -> bool:
    vol = load_volume(src)
    out = apply_strategy(vol, spec)
    if out is vol or (out.labels == vol.labels).all():
        shutil.copyfile(src, dst)
        return False
    save_volume(out, dst)
    return True


def cmd_postprocess(args: argparse.Namespace) -> int:
    try:
        spec = load_strategy(args.strategy)
    except StrategyError as exc:
        log.error("invalid strategy: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("cannot read strategy: %s", exc)
        return EXIT_DATA

    inputs = discover_volumes(Path(args.input_dir))
    if not inputs:
        log.error("no NIfTI volumes in %s", args.input_dir)
        return EXIT_DATA
    out_dir = Path(args.output_dir)
    if out_dir.resolve() == Path(args.input_dir).resolve():
        log.error("output directory must differ from input directory")
        return EXIT_USAGE
    out_dir.mkdir(parents=True, exist_ok=True)

    REGISTRY.freeze()
    tasks = [(path, out_dir / path.name, spec) for path in inputs.values()]
    status = EXIT_OK
    changed = 0
    for (src, _, _), (ok, value) in zip(tasks, _run_ordered(_postprocess_one, tasks, args.jobs)):
        if not ok:
            log.error("%s: %s", src.name, value)
            status = EXIT_DATA
        else:
            changed += bool(value)
    log.info("%s: %d volumes, %d changed", spec.name, len(tasks), changed)
    return status


# --------------------------------------------------------------------------
# evaluate


def _evaluate_one(
    gt_path: Path,
    pred_path: Path,
    metrics: tuple[str, ...],
    strategy_id: str,
    policy: EdgeCasePolicy,
    lesion_config: LesionMatchConfig,
) -> list[MetricRecord]:
    gt = load_volume(gt_path)
    pred = load_volume(pred_path)
    return evaluate_case(gt, pred, DEFAULT_SCHEME, metrics, policy, lesion_config, strategy_id)


def write_metrics_csv(records: Iterable[MetricRecord], stream: io.TextIOBase) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in records:
        writer.writerow([r.patient_id, r.strategy_id, r.class_name, r.metric, _fmt(r.value)])


def read_metrics_csv(path: Path, strategy_id: str | None = None) -> list[MetricRecord]:
    """Parse a metrics table; ``strategy_id`` overrides the file's strategy column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise VolumeError(f"{path}: header must be {','.join(METRICS_HEADER)}")
        records = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise VolumeError(f"{path}:{lineno}: expected 5 fields")
            patient, strategy, class_name, metric, value = row
            key = (patient, class_name, metric)
            if key in seen:
                raise VolumeError(f"{path}:{lineno}: duplicate row for {key}")
            seen.add(key)
            try:
                number = float(value)
            except ValueError:
                raise VolumeError(f"{path}:{lineno}: bad value {value!r}") from None
            records.append(MetricRecord(patient, strategy_id or strategy, class_name, metric, number))
    return records


def _open_output(target: str):
    if target == "-":
        return sys.stdout
    return open(target, "w", newline="", encoding="utf-8")


def cmd_evaluate(args: argparse.Namespace) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    unknown = set(metrics) - set(METRICS)
    if not metrics or unknown:
        log.error("unknown metric(s) %s; choose from %s", ",".join(sorted(unknown)), ",".join(METRICS))
        return EXIT_USAGE
    policy = EdgeCasePolicy(one_empty_hd=args.hd_penalty)
    lesion_config = LesionMatchConfig(
        dilation_iterations=args.lw_dilation, min_lesion_size=args.lw_min_size, unmatched_hd=args.hd_penalty
    )

    gt = discover_volumes(Path(args.gt_dir))
    pred = discover_volumes(Path(args.pred_dir))
    if not pred:
        log.error("no NIfTI volumes in %s", args.pred_dir)
        return EXIT_DATA
    unmatched = sorted(set(pred) - set(gt))
    if unmatched:
        log.error("predictions without ground truth: %s", ", ".join(unmatched))
        return EXIT_DATA
    missing = sorted(set(gt) - set(pred))
    if missing:
        log.warning("ground-truth cases without prediction (not evaluated): %s", ", ".join(missing))

    tasks = [(gt[c], pred[c], metrics, args.strategy_id, policy, lesion_config) for c in sorted(pred)]
    records: list[MetricRecord] = []
    status = EXIT_OK
    for task, (ok, value) in zip(tasks, _run_ordered(_evaluate_one, tasks, args.jobs)):
        if ok:
            records.extend(value)
        else:
            log.error("%s: %s", task[1].name, value)
            status = EXIT_DATA
    if status != EXIT_OK:
        return status

    out = _open_output(args.output)
    try:
        write_metrics_csv(records, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# rank


def _parse_inputs(items: Sequence[str]) -> list[tuple[str, Path]]:
    pairs = []
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--inputs entries must look like name=path.csv, got {item!r}")
        pairs.append((name, Path(path)))
    names = [n for n, _ in pairs]
    if len(set(names)) != len(names):
        raise UsageError("strategy names given to --inputs must be unique")
    if len(pairs) < 2:
        raise UsageError("ranking needs at least two --inputs")
    return pairs


def write_rank_csv(report, stream: io.TextIOBase) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["strategy", "global_avg_rank"])
    for s in report.ordering:
        writer.writerow([s, _fmt(report.global_ranks[s])])
    stream.write("\n")
    writer.writerow(["patient_id", "strategy", "avg_rank"])
    for patient, ranks in report.per_patient.items():
        for s in report.ordering:
            writer.writerow([patient, s, _fmt(ranks[s])])


def cmd_rank(args: argparse.Namespace) -> int:
    try:
        pairs = _parse_inputs(args.inputs)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE

    records: list[MetricRecord] = []
    key_sets = {}
    for name, path in pairs:
        rows = read_metrics_csv(path, strategy_id=name)
        key_sets[name] = {(r.patient_id, r.class_name, r.metric) for r in rows}
        records.extend(rows)
    reference_name, reference = pairs[0][0], key_sets[pairs[0][0]]
    for name, keys in key_sets.items():
        if keys != reference:
            diff = sorted(keys ^ reference)[:5]
            log.error("%s and %s cover different (patient, class, metric) cells, e.g. %s", reference_name, name, diff)
            return EXIT_DATA

    try:
        grid = RankingGrid.from_records(records, [n for n, _ in pairs])
        report = global_rank(grid)
    except (IncompleteGridError, ValueError) as exc:
        log.error("cannot rank: %s", exc)
        return EXIT_DATA

    out = _open_output(args.output)
    try:
        write_rank_csv(report, out)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"winner: {report.winner} (global average rank {_fmt(report.global_ranks[report.winner])})")
    return EXIT_OK


# --------------------------------------------------------------------------
# strategies / synth


def cmd_strategies(args: argparse.Namespace) -> int:
    if args.action == "list":
        for name in preset_names():
            print(name)
        return EXIT_OK
    if args.action == "transforms":
        for name in REGISTRY.names():
            print(name)
        return EXIT_OK
    if args.target is None:
        log.error("%s needs a strategy name or file", args.action)
        return EXIT_USAGE
    try:
        spec = load_strategy(args.target)
    except StrategyError as exc:
        log.error("invalid strategy: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("cannot read strategy: %s", exc)
        return EXIT_DATA if args.action == "show" else EXIT_INVALID
    if args.action == "show":
        print(serialize_strategy(spec))
    else:
        print(f"ok: {spec.name} ({len(spec.steps)} steps)")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.cases < 1:
        log.error("--cases must be at least 1")
        return EXIT_USAGE
    ids = write_cases(args.scenario, args.cases, args.seed, args.output_dir)
    log.info("wrote %d %s cases to %s", len(ids), args.scenario, args.output_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskforge", description="Postprocess, evaluate and rank 3D segmentation label volumes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument(
        "--plugin",
        action="append",
        default=[],
        metavar="MODULE",
        help="import MODULE before running (it may register transforms); repeatable",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    jobs_help = "parallel worker processes (default: $MASKFORGE_JOBS or 1)"

    p = sub.add_parser("postprocess", help="apply a strategy to every volume in a directory")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--strategy", required=True, help="preset name or path to a strategy JSON file")
    p.add_argument("--jobs", type=int, default=None, help=jobs_help)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="compute per-class metrics for prediction/ground-truth pairs")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--strategy-id", required=True, help="label written to the strategy column")
    p.add_argument("--metrics", default="dice,hd95", help=f"comma-separated subset of {','.join(METRICS)}")
    p.add_argument("--output", default="-", help="CSV path, '-' for stdout")
    p.add_argument("--hd-penalty", type=float, default=374.0, help="HD95 (mm) when exactly one mask is empty")
    p.add_argument("--lw-dilation", type=int, default=3, help="lesion-matching dilation iterations")
    p.add_argument("--lw-min-size", type=int, default=0, help="ignore GT lesions smaller than this (voxels)")
    p.add_argument("--jobs", type=int, default=None, help=jobs_help)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="rank strategies from their metrics CSVs")
    p.add_argument("--inputs", nargs="+", required=True, metavar="NAME=CSV")
    p.add_argument("--output", default="-", help="CSV path, '-' for stdout")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("strategies", help="list, show or validate strategies")
    p.add_argument("action", choices=["list", "show", "validate", "transforms"])
    p.add_argument("target", nargs="?", help="preset name or strategy file")
    p.set_defaults(func=cmd_strategies)

    p = sub.add_parser("synth", help="write synthetic gt/ and pred/ volumes")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--cases", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "jobs", 1) is None:
        args.jobs = _default_jobs()
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    for module in args.plugin:
        try:
            importlib.import_module(module)
        except ImportError as exc:
            log.error("cannot import plugin %s: %s", module, exc)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (OSError, VolumeError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
