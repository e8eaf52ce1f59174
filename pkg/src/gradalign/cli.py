"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .ablations import ablate_metric, ablate_sample_size
from .baselines import SelectorKind
from .config import apply_overrides, dump_config, load_config
from .exceptions import ConfigError, InputError, NumericError
from .harness import ExperimentConfig, load_checkpoint, run_experiment
from .metrics import export_metrics, read_metrics
from .policy import write_ground_truth, write_pool
from .presets import PRESETS
from .rng import stream
from .scenarios import generate_pool, generate_splits

logger = logging.getLogger("gradalign")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_DELIM = {"csv": ",", "tsv": "\t"}


def _base_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        return load_config(args.config)
    if args.preset:
        return PRESETS[args.preset]()
    return ExperimentConfig()


def _resolve(args, seed=None, selector=None) -> ExperimentConfig:
    cfg = _base_config(args)
    cfg = apply_overrides(cfg, args.set)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if selector is not None:
        cfg = dataclasses.replace(cfg, selector=SelectorKind.parse(selector))
    cfg.validate()
    return cfg


def _write_table(rows, header, fmt, fh=None):
    fh = fh or sys.stdout
    w = csv.writer(fh, delimiter=_DELIM[fmt], lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])


def _num(v, digits=4):
    return None if v is None else round(float(v), digits)


def _summary_row(path, m):
    final = m.final_eval()
    return [
        str(path),
        m.selector,
        m.metric,
        m.seed,
        None if final is None else final.step,
        None if final is None else _num(final.val_acc),
        None if final is None else _num(final.test_acc),
        _num(m.mean_corrupted_ratio()),
        _num(m.mean_target_ratio()),
        sum(1 for r in m.rounds if r.degenerate),
    ]


SUMMARY_HEADER = (
    "file",
    "selector",
    "metric",
    "seed",
    "final_step",
    "val_acc",
    "test_acc",
    "mean_corrupted_ratio",
    "mean_target_ratio",
    "degenerate_rounds",
)


def _dump_pools(cfg: ExperimentConfig, out_dir: Path):
    """Write every candidate pool (public view) with its ground-truth sidecar, plus the splits."""
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.resolved_scenario()
    u = cfg.selection.selection_interval
    n_rounds = -(-cfg.total_steps // u)
    rounds = [0] if cfg.fixed_pool else range(n_rounds)
    for r in rounds:
        pool, oracle = generate_pool(spec, stream(cfg.seed, "pool", r), id_start=r * cfg.selection.pool_size)
        write_pool(out_dir / f"pool_round{r}.tsv", [p.public() for p in pool])
        write_ground_truth(out_dir / f"pool_round{r}.truth.tsv", oracle.corruption_map)
    val, test = generate_splits(spec, cfg.validation_size, cfg.test_size, cfg.seed)
    write_pool(out_dir / "validation.tsv", val, include_corruption=True)
    write_pool(out_dir / "test.tsv", test, include_corruption=True)


# -- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    resume_state = None
    if args.resume:
        cfg, resume_state = load_checkpoint(args.resume)
        if args.seed != cfg.seed:
            raise ConfigError(f"--seed {args.seed} differs from the checkpoint seed {cfg.seed}")
    else:
        cfg = _resolve(args, seed=args.seed, selector=args.selector)
    if args.dump_config:
        Path(args.dump_config).write_text(dump_config(cfg))
    if args.dump_pools:
        _dump_pools(cfg, Path(args.dump_pools))
    try:
        metrics = run_experiment(
            cfg,
            checkpoint_path=args.checkpoint,
            checkpoint_at=args.checkpoint_at,
            stop_at=args.stop_at,
            resume_state=resume_state,
        )
    except NumericError as exc:
        partial = exc.diagnostic.get("metrics")
        if partial is not None:
            export_metrics(partial, args.out, args.format)
        logger.error("numeric abort: %s (%s)", exc, {k: v for k, v in exc.diagnostic.items() if k != "metrics"})
        return EXIT_NUMERIC
    export_metrics(metrics, args.out, args.format)
    if args.figures:
        _figures([metrics], Path(args.figures))
    _write_table([_summary_row(args.out, metrics)], SUMMARY_HEADER, args.format)
    return EXIT_OK


def cmd_compare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs = [], []
    for seed in args.seeds:
        for sel in args.selectors:
            cfg = _resolve(args, seed=seed, selector=sel)
            path = out / f"{cfg.selector.value}_seed{seed}.{args.format}"
            try:
                m = run_experiment(cfg)
            except NumericError as exc:
                partial = exc.diagnostic.get("metrics")
                if partial is not None:
                    export_metrics(partial, path, args.format)
                logger.error("numeric abort in %s seed %d: %s", sel, seed, exc)
                return EXIT_NUMERIC
            export_metrics(m, path, args.format)
            runs.append(m)
            rows.append(_summary_row(path, m))
    if args.figures:
        _figures(runs, Path(args.figures))
    _write_table(rows, SUMMARY_HEADER, args.format)
    return EXIT_OK


def cmd_ablate_kv(args) -> int:
    cfg = _resolve(args, seed=args.seed)
    results = []
    rows = []
    for rep in range(args.repeats):
        seeds = (args.seed * 1000 + 2 * rep + 1, args.seed * 1000 + 2 * rep + 2)
        res = ablate_sample_size(cfg, args.kv, seeds)
        results.append(res)
        for r in res:
            rows.append([rep, r.k_v, _num(r.correlation), int(r.undefined)])
    if args.figures:
        from .plotting import plot_kv_correlation

        plot_kv_correlation(results, Path(args.figures) / "kv_correlation.png")
    _write_table(rows, ("repeat", "k_v", "correlation", "undefined_flag"), args.format)
    return EXIT_OK


def cmd_ablate_metric(args) -> int:
    cfg = _resolve(args, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = ablate_metric(cfg)
    rows = []
    with (out / "score_histogram.tsv").open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("metric", "group", "score"))
        for metric in res.runs:
            for group, scores in (("clean", res.clean_scores[metric]), ("corrupted", res.corrupted_scores[metric])):
                for s in scores:
                    w.writerow((metric.value, group, repr(float(s))))
    for metric, m in res.runs.items():
        export_metrics(m, out / f"{metric.value.lower()}.{args.format}", args.format)
        clean, bad = res.clean_scores[metric], res.corrupted_scores[metric]
        rows.append(
            [
                metric.value,
                _num(res.corrupted_ratio(metric)),
                _num(np.median(clean)) if clean.size else None,
                _num(np.median(bad)) if bad.size else None,
                _num(res.separation[metric]),
            ]
        )
    if args.figures:
        from .plotting import plot_score_histograms

        plot_score_histograms(res.clean_scores, res.corrupted_scores, Path(args.figures) / "score_histograms.png")
    _write_table(
        rows, ("metric", "mean_corrupted_ratio", "clean_median", "corrupted_median", "separation"), args.format
    )
    return EXIT_OK


def _figures(runs, out_dir: Path):
    from .plotting import plot_accuracy, plot_round_ratio

    plot_accuracy(runs, out_dir / "test_accuracy.png", "test_acc")
    plot_accuracy(runs, out_dir / "val_accuracy.png", "val_acc")
    plot_round_ratio(runs, out_dir / "corrupted_ratio.png", "corrupted_ratio")
    plot_round_ratio(runs, out_dir / "target_ratio.png", "target_ratio")


def cmd_report(args) -> int:
    runs, rows = [], []
    for path in args.files:
        try:
            m = read_metrics(path)
        except OSError as exc:
            raise InputError(f"cannot read metrics file {path}: {exc}") from exc
        runs.append(m)
        rows.append(_summary_row(path, m))
    if args.figures:
        _figures(runs, Path(args.figures))
    _write_table(rows, SUMMARY_HEADER, args.format)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_config_args(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario configuration")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config key (repeatable); bare KEY=VALUE targets [experiment]",
    )
    p.add_argument("--format", choices=sorted(_DELIM), default="csv", help="delimiter for tables and metrics")
    p.add_argument("--figures", metavar="DIR", help="also render figures into DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradalign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its metrics file")
    _add_config_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--selector", choices=[k.value for k in SelectorKind])
    p.add_argument("--out", default="metrics.csv", help="metrics file path")
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint file to write")
    p.add_argument("--checkpoint-at", type=int, metavar="STEP")
    p.add_argument("--stop-at", type=int, metavar="STEP", help="stop early at STEP")
    p.add_argument("--resume", metavar="PATH", help="resume from a checkpoint file")
    p.add_argument("--dump-pools", metavar="DIR", help="write candidate pools and ground-truth sidecars")
    p.add_argument("--dump-config", metavar="PATH", help="write the resolved config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several selectors over shared seeds")
    _add_config_args(p)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument(
        "--selectors", nargs="+", default=[k.value for k in SelectorKind], choices=[k.value for k in SelectorKind]
    )
    p.add_argument("--out", default="runs", help="directory for metrics files")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate-kv", help="score stability versus rollouts per problem")
    _add_config_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kv", type=int, nargs="+", default=[8, 32, 128])
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_ablate_kv)

    p = sub.add_parser("ablate-metric", help="cosine versus inner-product selection")
    _add_config_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ablate_metric", help="directory for metrics and histogram data")
    p.set_defaults(func=cmd_ablate_metric)

    p = sub.add_parser("report", help="summarize metrics files into a table")
    p.add_argument("files", nargs="+")
    p.add_argument("--format", choices=sorted(_DELIM), default="csv")
    p.add_argument("--figures", metavar="DIR", help="also render figures into DIR")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
