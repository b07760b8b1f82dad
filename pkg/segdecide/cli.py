"""Command-line front-end.

Subcommands: ``priors``, ``decide``, ``eval``, ``analyze``, ``synth`` and
``experiment``. Machine outputs go to files only; diagnostics go to stderr.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 failed
verdict or a report differing from the golden report under
``experiment --check``.
"""

from __future__ import annotations

import argparse
from collections.abc import Callable, Sequence
import logging
from pathlib import Path
import sys
from typing import Any

from joblib import Parallel, delayed

from .analysis import (
    detection_histograms,
    dominates_first_order,
    empirical_cdf,
    mean_cdf_gap,
    miou_histogram,
    nesting_fraction,
    nondetection_heatmaps,
    rule_disagreement,
    write_cdf_csv,
    write_heatmap,
    write_histogram_csv,
)
from .components import ComponentSet, PostprocessConfig, postprocess
from .config import (
    load_experiment_config,
    load_json,
    load_prior_config,
    load_synth_config,
    postprocess_config_from_dict,
    prior_config_from_dict,
)
from .const import (
    DEFAULT_BIN_EDGES,
    DEFAULT_CONNECTIVITY,
    DEFAULT_CUTOFF,
    DEFAULT_KERNEL_RADIUS_SIGMAS,
    DEFAULT_MAX_GAP,
    DEFAULT_MIN_SIZE,
    DEFAULT_SIGMA,
    DOMAIN,
    EXIT_CHECK_FAILED,
    EXIT_DATA_ERROR,
    EXIT_OK,
    EXIT_USAGE,
    GOLDEN_SUFFIX,
    KIND_LABELS,
    KIND_PRIORS,
    KIND_PROBS,
    PACKAGE_VERSION,
    PGM_MAX_16BIT,
    PRIOR_MODE_GLOBAL,
    PRIOR_MODE_LOCAL,
    RULE_BAYES,
    RULE_ML,
    RULES,
)
from .decision import DecisionRule, average_probability_maps, decide
from .exceptions import ConfigError, SegDecideError, ShapeMismatchError
from .metrics import MetricsAccumulator, MiouPolicy
from .priors import (
    class_statistics,
    compute_global_priors,
    compute_pixel_priors,
    prior_heatmap,
    smooth_priors,
)
from .reporting import write_json, write_run_metadata
from .synth import generate_scene, oracle_posteriors, run_experiment, write_scene
from .synth.rng import derive_seed
from .tensor_io import GlobalPriors, LabelMap, PriorStack, read_tensor, write_pgm, write_tensor

_LOGGER = logging.getLogger(__name__)


class UsageError(Exception):
    """Raised instead of exiting when the command line is invalid."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sgt_files(paths: Sequence[str]) -> list[Path]:
    """Expand directories to their ``*.sgt`` files, sorted by name."""
    files: list[Path] = []
    for item in paths:
        path = Path(item)
        files.extend(sorted(path.glob("*.sgt")) if path.is_dir() else [path])
    if not files:
        raise ConfigError(f"No .sgt files found in {list(paths)}")
    return files


def _read_labels(paths: Sequence[str], num_classes: int) -> list[LabelMap]:
    return [read_tensor(p, kind=KIND_LABELS, num_classes=num_classes) for p in _sgt_files(paths)]


def _add_postprocess_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--connectivity", type=int, choices=(4, 8), default=DEFAULT_CONNECTIVITY)
    parser.add_argument("--min-size", type=int, default=DEFAULT_MIN_SIZE)
    parser.add_argument("--max-gap", type=int, default=DEFAULT_MAX_GAP)


def _postprocess_config(args: argparse.Namespace) -> PostprocessConfig:
    return postprocess_config_from_dict(
        {"connectivity": args.connectivity, "min_size": args.min_size, "max_gap": args.max_gap}
    )


def _postprocess_all(
    labels: Sequence[LabelMap], args: argparse.Namespace, prefix: str
) -> list[ComponentSet]:
    config = _postprocess_config(args)
    return Parallel(n_jobs=args.threads, prefer="threads")(
        delayed(postprocess)(
            label_map,
            config.connectivity,
            config.min_size,
            config.max_gap,
            f"{prefix}_{index:04d}",
        )
        for index, label_map in enumerate(labels)
    )


def _check_pairs(first: Sequence[Any], second: Sequence[Any], what: str) -> None:
    if len(first) != len(second):
        raise ShapeMismatchError(f"{len(first)} {what} files vs {len(second)} ground-truth files")


def _cmd_priors(args: argparse.Namespace) -> int:
    values: dict[str, Any] = {}
    if args.config:
        values = load_prior_config(args.config).to_json()
    for key in ("sigma", "cutoff", "kernel_radius_sigmas"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    config = prior_config_from_dict(values)
    labels = _read_labels(args.labels, args.num_classes)
    raw = compute_pixel_priors(labels, args.num_classes)
    stack = raw if args.raw else smooth_priors(raw, config)
    write_tensor(args.out, stack)
    if args.global_out:
        write_json(
            args.global_out,
            compute_global_priors(labels, args.num_classes, floor=config.cutoff).to_json(),
        )
    if args.stats_out:
        write_json(args.stats_out, class_statistics(labels, args.num_classes).to_json())
    if args.heatmap_dir:
        directory = Path(args.heatmap_dir)
        directory.mkdir(parents=True, exist_ok=True)
        for class_id in range(args.num_classes):
            write_pgm(
                directory / f"prior_{class_id}.pgm",
                prior_heatmap(stack, class_id),
                PGM_MAX_16BIT,
            )
    write_run_metadata(args.out, "priors", args.argv)
    return EXIT_OK


def _load_ml_priors(args: argparse.Namespace) -> PriorStack | GlobalPriors:
    if args.global_priors:
        return GlobalPriors(load_json(args.global_priors))
    if not args.priors:
        raise UsageError("--rule ml needs --priors or --global-priors")
    stack = read_tensor(args.priors, kind=KIND_PRIORS)
    if args.prior_mode == PRIOR_MODE_GLOBAL:
        return GlobalPriors.from_stack(stack)
    return stack


def _cmd_decide(args: argparse.Namespace) -> int:
    maps = [read_tensor(p, kind=KIND_PROBS) for p in args.probs]
    probs = average_probability_maps(maps)
    if args.rule == RULE_ML:
        rule = DecisionRule.maximum_likelihood(_load_ml_priors(args))
    else:
        rule = DecisionRule.bayes()
    labels = decide(probs, rule)
    write_tensor(args.out, labels)
    if args.disagreement_out:
        if args.rule != RULE_ML:
            raise UsageError("--disagreement-out needs --rule ml")
        mask = decide(probs, DecisionRule.bayes()).data != labels.data
        write_pgm(args.disagreement_out, mask.astype("uint8") * 255, 255)
    write_run_metadata(args.out, "decide", args.argv)
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    preds = _read_labels(args.pred, args.num_classes)
    gts = _read_labels(args.gt, args.num_classes)
    _check_pairs(preds, gts, "prediction")
    pred_sets = _postprocess_all(preds, args, "image")
    gt_sets = _postprocess_all(gts, args, "image")
    accumulator = MetricsAccumulator(args.num_classes)
    for index, (pred, gt) in enumerate(zip(preds, gts)):
        accumulator.add(f"image_{index:04d}", pred, gt, pred_sets[index], gt_sets[index])
    report = accumulator.report_dict()
    report["postprocess"] = _postprocess_config(args).to_json()
    write_json(args.out, report)
    write_run_metadata(args.out, "eval", args.argv)
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    gts = _read_labels(args.gt, args.num_classes)
    labels = {
        RULE_BAYES: _read_labels(args.bayes, args.num_classes),
        RULE_ML: _read_labels(args.ml, args.num_classes),
    }
    for rule in RULES:
        _check_pairs(labels[rule], gts, rule)
    gt_sets = _postprocess_all(gts, args, "image")
    accumulators = {rule: MetricsAccumulator(args.num_classes) for rule in RULES}
    pred_sets = {}
    for rule in RULES:
        pred_sets[rule] = _postprocess_all(labels[rule], args, "image")
        for index, gt in enumerate(gts):
            accumulators[rule].add(
                f"image_{index:04d}", labels[rule][index], gt, pred_sets[rule][index], gt_sets[index]
            )
    focus = args.class_id
    matches = {rule: accumulators[rule].matches for rule in RULES}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {"class_id": focus}

    recall = {
        rule: [s.recall for m in matches[rule] for s in m.gt_scores if s.segment.class_id == focus]
        for rule in RULES
    }
    precision = {
        rule: [
            s.precision for m in matches[rule] for s in m.pred_scores if s.segment.class_id == focus
        ]
        for rule in RULES
    }
    for name, samples, first, second in (
        ("recall", recall, RULE_BAYES, RULE_ML),
        ("precision", precision, RULE_ML, RULE_BAYES),
    ):
        if all(samples.values()):
            cdfs = {rule: empirical_cdf(values) for rule, values in samples.items()}
            write_cdf_csv(out_dir / f"{name}_cdf.csv", cdfs)
            summary[f"{name}_dominance"] = {
                **dominates_first_order(cdfs[first], cdfs[second]).to_json(),
                "mean_gap": mean_cdf_gap(cdfs[first], cdfs[second]),
            }
        else:
            _LOGGER.warning("SegDecide CLI: No %s samples of class %d, skipping CDF", name, focus)

    false_hist, missed_hist = detection_histograms(matches, focus, args.bin_edges)
    write_histogram_csv(out_dir / "false_detection_hist.csv", false_hist)
    write_histogram_csv(out_dir / "non_detection_hist.csv", missed_hist)
    summary["false_detection_histogram"] = false_hist.to_json()
    summary["non_detection_histogram"] = missed_hist.to_json()
    for rule, pair in nondetection_heatmaps(gt_sets, labels, focus).items():
        for heatmap in pair:
            write_heatmap(out_dir / f"heatmap_{rule}_{heatmap.kind}.pgm", heatmap)
    summary["miou_histogram"] = miou_histogram(
        {rule: accumulators[rule].per_image_miou(MiouPolicy.SKIP_UNDEFINED) for rule in RULES}
    ).to_json()
    disagreeing = [
        rule_disagreement(b, m, g) for b, m, g in zip(labels[RULE_BAYES], labels[RULE_ML], gts)
    ]
    summary["disagreement_rate"] = sum(d.rate for d in disagreeing) / len(disagreeing)
    fractions = [
        nesting_fraction(s, m, focus) for s, m in zip(pred_sets[RULE_BAYES], labels[RULE_ML])
    ]
    defined = [f for f in fractions if f is not None]
    summary["mean_nesting_fraction"] = sum(defined) / len(defined) if defined else None
    report_path = out_dir / "analysis.json"
    write_json(report_path, summary)
    write_run_metadata(report_path, "analyze", args.argv)
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    config = load_synth_config(args.config)
    master = config.seed if args.seed is None else args.seed
    priors = read_tensor(args.priors, kind=KIND_PRIORS) if args.priors else None
    out_dir = Path(args.out_dir)
    for index in range(args.count):
        scene = generate_scene(config, derive_seed(master, index))
        stem = f"scene_{index:04d}"
        write_scene(scene, out_dir, stem)
        if priors is not None:
            write_tensor(
                out_dir / f"{stem}_probs.sgt", oracle_posteriors(scene.features, config, priors)
            )
    _LOGGER.info("SegDecide CLI: Wrote %d scenes to %s", args.count, out_dir)
    return EXIT_OK


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config)
    result = run_experiment(
        config, seed=args.seed, threads=args.threads, artifact_dir=args.artifact_dir
    )
    write_json(args.out, result.report)
    write_run_metadata(args.out, "experiment", args.argv)
    if not args.check:
        return EXIT_OK
    failed = sorted(name for name, v in result.verdicts.items() if not v["passed"])
    if failed:
        _LOGGER.error("SegDecide CLI: Failed verdicts: %s", ", ".join(failed))
        return EXIT_CHECK_FAILED
    golden = _golden_path(args)
    if golden is None:
        _LOGGER.warning(
            "SegDecide CLI: No golden report next to %s, only verdicts were checked",
            args.config,
        )
        return EXIT_OK
    if Path(args.out).read_bytes() != golden.read_bytes():
        _LOGGER.error("SegDecide CLI: Report %s differs from golden report %s", args.out, golden)
        return EXIT_CHECK_FAILED
    _LOGGER.info("SegDecide CLI: Report matches golden report %s", golden)
    return EXIT_OK


def _golden_path(args: argparse.Namespace) -> Path | None:
    """Return the explicit golden report, or ``<config stem>.report.json`` if present."""
    if args.golden:
        return Path(args.golden)
    config = Path(args.config)
    candidate = config.with_name(config.stem + GOLDEN_SUFFIX)
    return candidate if candidate.is_file() else None


def _bin_edges(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"invalid bin edges {text!r}") from err


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with every subcommand."""
    parser = _Parser(prog=DOMAIN, description="Compare Bayes and ML decision rules.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {PACKAGE_VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    parser.add_argument(
        "--threads", type=int, default=-1, help="worker threads (default: all cores)"
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    priors = sub.add_parser("priors", help="estimate pixel-wise priors from label maps")
    priors.add_argument("--labels", nargs="+", required=True)
    priors.add_argument("--num-classes", type=int, required=True)
    priors.add_argument("--config")
    priors.add_argument("--sigma", type=float, help=f"default {DEFAULT_SIGMA}")
    priors.add_argument("--cutoff", type=float, help=f"default {DEFAULT_CUTOFF}")
    priors.add_argument(
        "--kernel-radius",
        dest="kernel_radius_sigmas",
        type=float,
        help=f"kernel radius in sigmas, default {DEFAULT_KERNEL_RADIUS_SIGMAS}",
    )
    priors.add_argument("--raw", action="store_true", help="skip smoothing")
    priors.add_argument("--out", required=True)
    priors.add_argument("--global-out")
    priors.add_argument("--stats-out")
    priors.add_argument("--heatmap-dir")
    priors.set_defaults(func=_cmd_priors)

    decide_p = sub.add_parser("decide", help="apply a decision rule")
    decide_p.add_argument("--probs", nargs="+", required=True, help="averaged when several")
    decide_p.add_argument("--rule", choices=RULES, default=RULE_BAYES)
    decide_p.add_argument("--priors")
    decide_p.add_argument("--global-priors")
    decide_p.add_argument(
        "--prior-mode", choices=(PRIOR_MODE_LOCAL, PRIOR_MODE_GLOBAL), default=PRIOR_MODE_LOCAL
    )
    decide_p.add_argument("--out", required=True)
    decide_p.add_argument("--disagreement-out")
    decide_p.set_defaults(func=_cmd_decide)

    eval_p = sub.add_parser("eval", help="score predictions against ground truth")
    eval_p.add_argument("--pred", nargs="+", required=True)
    eval_p.add_argument("--gt", nargs="+", required=True)
    eval_p.add_argument("--num-classes", type=int, required=True)
    _add_postprocess_flags(eval_p)
    eval_p.add_argument("--out", required=True)
    eval_p.set_defaults(func=_cmd_eval)

    analyze = sub.add_parser("analyze", help="compare Bayes and ML predictions")
    analyze.add_argument("--bayes", nargs="+", required=True)
    analyze.add_argument("--ml", nargs="+", required=True)
    analyze.add_argument("--gt", nargs="+", required=True)
    analyze.add_argument("--num-classes", type=int, required=True)
    analyze.add_argument("--class-id", type=int, required=True)
    analyze.add_argument("--bin-edges", type=_bin_edges, default=DEFAULT_BIN_EDGES)
    _add_postprocess_flags(analyze)
    analyze.add_argument("--out-dir", required=True)
    analyze.set_defaults(func=_cmd_analyze)

    synth = sub.add_parser("synth", help="generate synthetic scenes")
    synth.add_argument("--config", required=True)
    synth.add_argument("--count", type=int, default=1)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--priors", help="also write oracle posteriors under these priors")
    synth.add_argument("--out-dir", required=True)
    synth.set_defaults(func=_cmd_synth)

    experiment = sub.add_parser("experiment", help="run the synthetic experiment")
    experiment.add_argument("--config", required=True)
    experiment.add_argument("--seed", type=int)
    experiment.add_argument("--out", default="report.json")
    experiment.add_argument("--artifact-dir")
    experiment.add_argument(
        "--check",
        action="store_true",
        help="exit 3 on a failed verdict or a report differing from the golden report",
    )
    experiment.add_argument(
        "--golden", help=f"golden report (default: <config stem>{GOLDEN_SUFFIX} if present)"
    )
    experiment.set_defaults(func=_cmd_experiment)
    return parser


def _configure_logging(verbose: bool) -> None:
    logger = logging.getLogger(DOMAIN)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:  # --help and --version
        return int(err.code or 0)
    args.argv = argv
    if args.threads == 0 or args.threads < -1:
        print(f"{DOMAIN}: error: --threads must be positive or -1", file=sys.stderr)
        return EXIT_USAGE
    _configure_logging(args.verbose)
    command: Callable[[argparse.Namespace], int] = args.func
    try:
        return command(args)
    except UsageError as err:
        print(f"{DOMAIN} {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (SegDecideError, OSError) as err:
        _LOGGER.error("SegDecide CLI: %s failed: %s", args.command, err)
        return EXIT_DATA_ERROR
    except Exception:  # pylint: disable=broad-except
        _LOGGER.exception("SegDecide CLI: Unexpected error in %s", args.command)
        return EXIT_DATA_ERROR


def main() -> None:
    sys.exit(dispatch())
