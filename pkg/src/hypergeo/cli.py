"""Command-line interface.

Every command that writes a file also writes ``<file>.manifest.json`` next
to it with the resolved configuration, seed, version and phase timings.
Metrics files never contain timings, so reruns with the same seed on one
thread produce identical metrics.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__, data, formats, ghdm, hyperbolicity, trainer
from .errors import FormatError, HypergeoError, InvalidInputError, NumericalFaultError

log = logging.getLogger("hypergeo")

SEED_ENV = "HYPERGEO_SEED"

EVAL_FIELDS = ("accuracy", "ci95", "fixed_accuracy", "fixed_ci95", "hard_fraction",
               "hard_accuracy", "hard_fixed_accuracy", "easy_accuracy", "episodes",
               "threshold", "seed")
MINE_FIELDS = ("threshold", "episodes", "queries", "hard_queries", "hard_fraction",
               "hard_accuracy", "hard_fixed_accuracy", "easy_accuracy", "accuracy",
               "fixed_accuracy")
MINE_QUERY_FIELDS = ("episode", "query_index", "label", "d1", "d2", "ratio", "selected")
LOWRANK_FIELDS = ("n", "k", "trials", "median", "q25", "q75", "q90", "max")
TIMING_FIELDS = ("n", "k", "hidden", "seconds_per_pair")
SLOPE_FIELDS = ("k_over_n", "points", "slope", "beta", "intercept")


class Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0


def resolve_seed(seed: int | None, default: int = 0) -> int:
    """``HYPERGEO_SEED`` wins over the flag, the flag over ``default``."""
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip() != "":
        try:
            return int(env)
        except ValueError as exc:
            raise InvalidInputError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return default if seed is None else seed


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _manifest(command: str, config: dict, seed, timer: Timer, output, extra_outputs=()) -> None:
    m = formats.RunManifest(command, config, seed, dict(timer.phases),
                            outputs=[os.fspath(p) for p in extra_outputs if p])
    formats.write_manifest(m, output)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    seed = resolve_seed(args.seed)
    base = data.benchmark_config(seed) if args.benchmark else data.DatasetConfig(seed=seed)
    overrides = {
        "depth": args.depth, "branching": args.branching, "classes": args.classes,
        "dim": args.dim, "noise_scale": args.noise, "per_class": args.per_class,
        "kappa": args.kappa,
    }
    cfg = base.to_dict()
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.classes is None:
        cfg["classes"] = None  # every leaf of the (possibly resized) tree
    timer = Timer()
    with timer.phase("generate"):
        ds = data.generate_tree_dataset(data.DatasetConfig(**cfg))
    with timer.phase("write"):
        formats.write_dataset(ds, args.out)
    with timer.phase("quick_delta"):
        size = min(100, len(ds.points))
        quick = hyperbolicity.delta_rel_sampled(ds.points, "poincare", ds.kappa, size, 5, seed)
    _manifest("gen-data", ds.config.to_dict(), seed, timer, args.out)
    print(f"points={len(ds.points)} classes={len(ds.class_ids)} dim={ds.dim} "
          f"kappa={ds.kappa} delta_rel~{quick.delta_rel:.4f}")
    return 0


def cmd_delta(args) -> int:
    seed = resolve_seed(args.seed)
    ds = formats.read_dataset(args.input)
    kappa = ds.kappa if args.kappa is None else args.kappa
    timer = Timer()
    with timer.phase("delta"):
        report = hyperbolicity.delta_rel_sampled(ds.points, args.metric, kappa, args.samples,
                                                 args.trials, seed, threads=args.threads)
    row = report.csv_row()
    print(",".join(str(v) for v in row))
    if args.out:
        formats.write_csv(args.out, hyperbolicity.CSV_FIELDS, [row])
        _manifest("delta", {"input": os.fspath(args.input), "metric": args.metric, "kappa": kappa,
                            "samples": args.samples, "trials": args.trials}, seed, timer, args.out)
    return 0


def _train_config(args, seed: int) -> trainer.TrainConfig:
    base = trainer.benchmark_config(seed) if args.benchmark else trainer.TrainConfig(seed=seed)
    cfg = base.to_dict()
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot load config {args.config}: {exc}") from exc
    if args.steps is not None:
        cfg["steps"] = args.steps
    if args.seed is not None or os.environ.get(SEED_ENV):
        cfg["seed"] = seed
    return trainer.TrainConfig.from_dict(cfg)


def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    ds = formats.read_dataset(args.data)
    config = _train_config(args, seed)
    timer = Timer()
    with timer.phase("train"):
        result = trainer.train(ds, config)
    formats.write_checkpoint(result.params, args.out_checkpoint, config.to_dict())
    rows = [(i, "" if np.isnan(v) else float(v), int(h))
            for i, (v, h) in enumerate(zip(result.losses, result.num_hard))]
    formats.write_csv(args.out_metrics, ("step", "loss", "hard_queries"), rows)
    _manifest("train", config.to_dict(), config.seed, timer, args.out_metrics, [args.out_checkpoint])
    _manifest("train", config.to_dict(), config.seed, timer, args.out_checkpoint)
    print(f"steps={config.steps} smoothed_final_loss={result.smoothed_final_loss():.6f} "
          f"mean_hard={result.num_hard.mean():.2f} seconds={timer.phases['train']:.1f}")
    return 0


def _load_model(args):
    ds = formats.read_dataset(args.data)
    params, train_cfg = formats.read_checkpoint(args.checkpoint)
    formats.check_compatible(params, ds)
    config = trainer.TrainConfig.from_dict(train_cfg) if train_cfg else trainer.TrainConfig()
    overrides = {}
    if args.seed is not None or os.environ.get(SEED_ENV):
        overrides["seed"] = resolve_seed(args.seed)
    if getattr(args, "threshold", None) is not None:
        overrides["threshold"] = args.threshold
    if overrides:
        config = trainer.TrainConfig.from_dict({**config.to_dict(), **overrides})
    return ds, params, config


def cmd_eval(args) -> int:
    ds, params, config = _load_model(args)
    timer = Timer()
    with timer.phase("eval"):
        report = trainer.evaluate(params, ds, config, args.episodes, threads=args.threads)
    s = report.summary()
    row = [s[f] for f in EVAL_FIELDS[:-3]] + [s["num_episodes"], config.threshold, config.seed]
    if args.out_metrics:
        formats.write_csv(args.out_metrics, EVAL_FIELDS, [row])
        _manifest("eval", {**config.to_dict(), "episodes": args.episodes}, config.seed, timer,
                  args.out_metrics)
    print(f"accuracy={report.accuracy:.4f}+-{report.ci95:.4f} "
          f"fixed={report.fixed_accuracy:.4f}+-{report.fixed_ci95:.4f} "
          f"hard_fraction={report.hard_fraction:.3f}")
    return 0


def cmd_mine(args) -> int:
    ds, params, config = _load_model(args)
    timer = Timer()
    rows = []
    with timer.phase("mine"):
        episodes = trainer.eval_episodes(ds, config, args.episodes)
        for ep in episodes:
            hard = trainer.episode_logits(params, ep, config.threshold).hard
            selected = hard.mask
            for q in range(len(ep.query)):
                rows.append((ep.seed, q, int(ep.query_labels[q]), float(hard.d1[q]),
                             float(hard.d2[q]), float(hard.all_ratios[q]), int(selected[q])))
    with timer.phase("eval"):
        report = trainer.evaluate(params, ds, config, args.episodes, threads=args.threads)
    hard_total = sum(r.hard_total for r in report.episodes)
    summary = [config.threshold, args.episodes, len(rows), hard_total, hard_total / len(rows),
               report.hard_accuracy, report.hard_fixed_accuracy, report.easy_accuracy,
               report.accuracy, report.fixed_accuracy]
    run_config = {**config.to_dict(), "episodes": args.episodes}
    if args.out_metrics:
        formats.write_csv(args.out_metrics, MINE_QUERY_FIELDS, rows)
        _manifest("mine", run_config, config.seed, timer, args.out_metrics, [args.out_summary])
    if args.out_summary:
        formats.write_csv(args.out_summary, MINE_FIELDS, [summary])
        _manifest("mine", run_config, config.seed, timer, args.out_summary, [args.out_metrics])
    print(",".join(MINE_FIELDS))
    print(",".join(str(formats.cell(v)) for v in summary))
    return 0


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    timer = Timer()
    with timer.phase("gradcheck"):
        report = ghdm.check_gradients(args.dim, args.rank, seed, pairs=args.pairs,
                                      hidden=args.hidden)
    rows = [(name, err) for name, err in report.per_param.items()]
    if args.out_metrics:
        formats.write_csv(args.out_metrics, ("param", "max_rel_error"), rows)
        _manifest("gradcheck", {"dim": args.dim, "rank": args.rank, "pairs": args.pairs,
                                "hidden": args.hidden, "tol": args.tol}, seed, timer,
                  args.out_metrics)
    print(f"max_rel_error={report.max_rel_error:.3e} coordinates={report.checked} tol={args.tol:g}")
    if not report.passed(args.tol):
        worst = max(report.per_param, key=report.per_param.get)
        raise NumericalFaultError("gradcheck", f"gradient mismatch {report.max_rel_error:.3e} "
                                               f"in {worst} exceeds {args.tol:g}")
    return 0


def cmd_bench_lowrank(args) -> int:
    seed = resolve_seed(args.seed)
    timer = Timer()
    with timer.phase("errors"):
        rows = ghdm.lowrank_error_experiment(args.dims, args.ranks, args.trials, seed)
    slopes = ghdm.fit_loglog_slopes(rows)
    timings = []
    if not args.no_timing:
        with timer.phase("timing"):
            for k in args.timing_ranks:
                sec = ghdm.time_pair_distance(args.timing_dim, k, hidden=args.timing_hidden,
                                              seed=seed)
                timings.append((args.timing_dim, k, args.timing_hidden or 4 * args.timing_dim, sec))
    config = {"dims": args.dims, "ranks": args.ranks, "trials": args.trials,
              "timing_dim": args.timing_dim, "timing_ranks": args.timing_ranks,
              "timing_hidden": args.timing_hidden}
    if args.out_metrics:
        formats.write_csv(args.out_metrics, LOWRANK_FIELDS,
                          [[r[f] for f in LOWRANK_FIELDS] for r in rows])
        extra = []
        if args.out_slopes:
            formats.write_csv(args.out_slopes, SLOPE_FIELDS,
                              [[s[f] for f in SLOPE_FIELDS] for s in slopes])
            extra.append(args.out_slopes)
        if args.out_timing and timings:
            formats.write_csv(args.out_timing, TIMING_FIELDS, timings)
            extra.append(args.out_timing)
        _manifest("bench-lowrank", config, seed, timer, args.out_metrics, extra)
    for r in rows:
        print(f"n={r['n']:4d} k={r['k']:3d} median={r['median']:.3e} q90={r['q90']:.3e}")
    for s in slopes:
        print(f"k/n={s['k_over_n']:.4f} slope={s['slope']:.3f} over {s['points']} dims")
    for n, k, h, sec in timings:
        print(f"timing n={n} k={k} hidden={h} ms_per_pair={1e3 * sec:.3f}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypergeo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (overridden by ${SEED_ENV})")
    threaded = argparse.ArgumentParser(add_help=False)
    threaded.add_argument("--threads", type=int, default=1,
                          help="worker threads for independent trials/episodes")

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic tree dataset")
    p.add_argument("--depth", type=int)
    p.add_argument("--branching", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--noise", type=float, help="per-coordinate tangent noise std")
    p.add_argument("--per-class", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--benchmark", action="store_true",
                   help="start from the few-shot training benchmark settings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("delta", parents=[common, threaded], help="relative delta-hyperbolicity")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--metric", choices=("euclidean", "poincare"), default="poincare")
    p.add_argument("--kappa", type=float, help="curvature for the poincare metric "
                                               "(default: the dataset's)")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", help="also write the record as CSV")
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("train", parents=[common], help="train the distance generators")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--benchmark", action="store_true",
                   help="start from the benchmark training settings")
    p.add_argument("--steps", type=int)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-metrics", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, threaded], help="held-out episode accuracy")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out-metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mine", parents=[common, threaded], help="hard-pair mining statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--out-metrics", help="per-query CSV")
    p.add_argument("--out-summary", help="one-row summary CSV")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--hidden", type=int)
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out-metrics")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench-lowrank", parents=[common],
                       help="low-rank truncation error and per-pair cost")
    p.add_argument("--dims", type=_int_list, default=[32, 64, 128, 256])
    p.add_argument("--ranks", type=_int_list, default=[2, 4, 8, 16, 32])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--timing-dim", type=int, default=512)
    p.add_argument("--timing-ranks", type=_int_list, default=[4, 8, 16, 32, 64])
    p.add_argument("--timing-hidden", type=int)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--out-metrics")
    p.add_argument("--out-slopes")
    p.add_argument("--out-timing")
    p.set_defaults(func=cmd_bench_lowrank)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HypergeoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
