"""
Command-line interface for recording teacher trajectories and building OLSS schedulers.
Subcommands: record, train, sample, compare, viz.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from src.config import RunConfig, build_predictor, load_config
from src.diffusion import (MANIFEST_NAME, TrajectorySet, draw_initial_noise, load_trajectory_set,
                           record_trajectory_set, save_trajectory_set)
from src.errors import ConfigError, OlssError
from src.evaluation import (compare_schedulers, correlation_heatmap_csv, efficiency_sweep,
                            pca_paths_csv, teacher_runs, write_report_csv)
from src.olss import (OlssSampler, load_scheduler, residual_fn, sample, save_scheduler, train)
from src.predictors import predictor_from_descriptor
from src.samplers import run_sampler, uniform_path
from src.schedule import schedule_from_descriptor

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CONFIG_ECHO = "config.json"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", help="output path")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    parser.add_argument("--seed", type=int, help="seed (base seed for record, x_T seed for sample)")
    parser.add_argument("--threads", type=int, help="worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every subcommand."""
    parser = _Parser(prog="olss", description="Few-step diffusion schedulers fitted by least squares")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    record = commands.add_parser("record", help="record complete teacher trajectories")
    _shared(record)

    train_cmd = commands.add_parser("train", help="fit an OLSS scheduler on a container")
    train_cmd.add_argument("container")
    train_cmd.add_argument("--steps", type=int, help="number of model calls n")
    train_cmd.add_argument("--mode", choices=("uniform", "optimized"))
    train_cmd.add_argument("--epsilon", type=float, help="search resolution relative to D_hi")
    train_cmd.add_argument("--audit", action="store_true",
                           help="cross-check every step search with an exhaustive scan")
    _shared(train_cmd)

    sample_cmd = commands.add_parser("sample", help="generate with a trained scheduler")
    sample_cmd.add_argument("scheduler")
    _shared(sample_cmd)

    compare = commands.add_parser("compare", help="score DDIM, PNDM, OLSS-P and OLSS")
    compare.add_argument("container")
    compare.add_argument("--sweep", action="store_true", help="also write the steps sweep")
    compare.add_argument("--epsilon", type=float, help="search resolution relative to D_hi")
    _shared(compare)

    viz = commands.add_parser("viz", help="export heat-map and PCA path data")
    viz.add_argument("container")
    viz.add_argument("--steps", type=int, help="number of model calls of the plotted runs")
    viz.add_argument("--trajectory", type=int, default=0, help="index of the plotted trajectory")
    _shared(viz)
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    """Route log records to stderr so printed results stay clean."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(levelname)s %(name)s: %(message)s")


def write_config(config: RunConfig, directory: Path) -> Path:
    """Echo the effective config next to the outputs."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / CONFIG_ECHO
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _clear_container(directory: Path) -> None:
    """Remove the manifest and blobs of a previous recording, nothing else."""
    for stale in [directory / MANIFEST_NAME] + sorted(directory.glob("traj_*_*.f64")):
        stale.unlink(missing_ok=True)


def _model(trajectories: TrajectorySet, config: Optional[RunConfig] = None):
    schedule = schedule_from_descriptor(trajectories.schedule)
    if config is not None and config.schedule().descriptor() != trajectories.schedule:
        raise ConfigError(f"container schedule {trajectories.schedule} does not match the "
                          f"config schedule {config.schedule().descriptor()}")
    return schedule, predictor_from_descriptor(trajectories.predictor, schedule)


def cmd_record(config: RunConfig, out: Path, force: bool) -> TrajectorySet:
    """Record config.K complete trajectories into a container directory."""
    if out.exists() and any(out.iterdir()):
        _guard(out, force)
        _clear_container(out)
    schedule = config.schedule()
    predictor = build_predictor(config, schedule)
    started = time.perf_counter()
    trajectories = record_trajectory_set(schedule, predictor, config.K, config.base_seed,
                                         threads=config.threads)
    save_trajectory_set(trajectories, out)
    write_config(config, out)
    elapsed = time.perf_counter() - started
    print(f"Recorded K={trajectories.K} trajectories, d={trajectories.d}, T={trajectories.T} "
          f"in {elapsed:.2f}s")
    print(f"Container written to {out}")
    return trajectories


def cmd_train(config: RunConfig, container: Path, out: Path, force: bool, audit: bool = False):
    """
    Train one scheduler on a container and write its JSON file.
    The container schedule must match the effective config, defaults included.
    """
    _guard(out, force)
    trajectories = load_trajectory_set(container)
    _, predictor = _model(trajectories, config)
    scheduler = train(trajectories, config.n, mode=config.mode, relative_epsilon=config.epsilon,
                      audit=audit, predictor=predictor)
    save_scheduler(scheduler, out)
    write_config(config, out.parent)

    print(f"Trained {scheduler.kind} scheduler with n={scheduler.n}")
    print(f"Path: {list(scheduler.path.steps)}")
    if scheduler.d_star is not None:
        print(f"D*: {scheduler.d_star:.6g} (uniform path max {scheduler.extra['D_hi']:.6g})")
    for i, (step, residual) in enumerate(zip(scheduler.path.steps, scheduler.residuals), start=1):
        print(f"  step {i}: t={step} residual={residual:.6g}")
    print(f"Ridge: {scheduler.ridge:.1e}, training rmse: {scheduler.extra['training_rmse']:.6g}")
    if audit:
        print(f"Monotonicity violations: {scheduler.audit_violations}")
    print(f"Scheduler written to {out}")
    return scheduler


def cmd_sample(scheduler_path: Path, seed: int, out: Path, force: bool):
    """Sample from x_T drawn with seed and write the visited states as CSV."""
    _guard(out, force)
    scheduler = load_scheduler(scheduler_path)
    schedule = schedule_from_descriptor(scheduler.schedule)
    predictor = predictor_from_descriptor(scheduler.predictor, schedule)
    run = sample(scheduler, schedule, predictor, draw_initial_noise(seed, scheduler.d), seed=seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step"] + [f"x{j}" for j in range(scheduler.d)])
        for state in run.latent_states():
            writer.writerow([state.t] + [repr(float(v)) for v in state.x])
    print(f"Sampled seed {seed} with {run.model_calls} model calls; states written to {out}")
    return run


def cmd_compare(config: RunConfig, container: Path, out: Path, force: bool, sweep: bool = False):
    """Write the comparison report (and optionally the steps sweep) for a container."""
    report_path = out / "report.csv"
    _guard(report_path, force)
    trajectories = load_trajectory_set(container)
    schedule, predictor = _model(trajectories)
    report = compare_schedulers(schedule, predictor, trajectories, config.eval_seeds,
                                config.compare_steps, threads=config.threads,
                                relative_epsilon=config.epsilon)
    write_report_csv(report, report_path)
    write_config(config, out)

    print(f"{'kind':<8}{'n':>4}{'rmse':>14}{'seconds':>12}{'calls':>7}")
    for row in report.rows:
        print(f"{row.kind:<8}{row.n:>4}{row.rmse:>14.6g}{row.seconds:>12.3g}{row.model_calls:>7}")
    for n in config.compare_steps:
        olss, ddim = report.row("olss", n), report.row("ddim", n)
        if olss.rmse >= ddim.rmse:
            print(f"Note: OLSS does not beat DDIM at n={n}")
    print(f"Report written to {report_path}")

    if sweep:
        rfn = residual_fn(trajectories)
        teachers = teacher_runs(schedule, predictor, config.eval_seeds, config.threads)

        def factory(n):
            scheduler = train(trajectories, n, relative_epsilon=config.epsilon, rfn=rfn,
                              predictor=predictor)
            return OlssSampler(scheduler, schedule)

        result = efficiency_sweep(predictor, factory, config.sweep_steps, teachers,
                                  config.sweep_repeats, out / "sweep.csv")
        for n, rmse, seconds in result.rows:
            print(f"  n={n:<4} rmse={rmse:.6g} seconds={seconds:.3g}")
        if result.r_squared is not None:
            print(f"Sampling time linear fit R^2: {result.r_squared:.4f}")
        print(f"Sweep written to {out / 'sweep.csv'}")
    return report


def cmd_viz(config: RunConfig, container: Path, out: Path, force: bool, index: int = 0):
    """Export the correlation heat map and PCA paths for one recorded trajectory."""
    heatmap_path, pca_path = out / "heatmap.csv", out / "pca_paths.csv"
    _guard(heatmap_path, force)
    _guard(pca_path, force)
    trajectories = load_trajectory_set(container)
    if not 0 <= index < trajectories.K:
        raise ConfigError(f"trajectory index {index} outside 0..{trajectories.K - 1}")
    schedule, predictor = _model(trajectories)
    teacher = trajectories[index]

    names, _ = correlation_heatmap_csv(teacher, config.heatmap_stride, heatmap_path)
    path = uniform_path(schedule.T, config.n)
    x_T = teacher.states[0]  # pylint: disable=invalid-name
    runs = [run_sampler(kind, schedule, predictor, path, x_T, seed=teacher.seed)
            for kind in ("ddim", "pndm")]
    runs.append(sample(train(trajectories, config.n, relative_epsilon=config.epsilon,
                             predictor=predictor),
                       schedule, predictor, x_T, seed=teacher.seed))
    pca_paths_csv(teacher, runs, pca_path)
    write_config(config, out)
    print(f"Heat map over {len(names)} variables written to {heatmap_path}")
    print(f"PCA paths of teacher and {len(runs)} runs written to {pca_path}")


def dispatch(args: argparse.Namespace) -> None:
    """Build the effective config and run one subcommand."""
    config = load_config(args.config).with_overrides(
        threads=args.threads, n=getattr(args, "steps", None), mode=getattr(args, "mode", None),
        epsilon=getattr(args, "epsilon", None),
        base_seed=args.seed if args.command == "record" else None)
    root = Path(config.out)
    if args.command == "record":
        cmd_record(config, Path(args.out) if args.out else root / "teacher", args.force)
    elif args.command == "train":
        out = Path(args.out) if args.out else root / f"scheduler-{config.mode}-n{config.n}.json"
        cmd_train(config, Path(args.container), out, args.force, audit=args.audit)
    elif args.command == "sample":
        seed = args.seed if args.seed is not None else config.eval_seeds[0]
        out = Path(args.out) if args.out else root / f"sample-{seed}.csv"
        cmd_sample(Path(args.scheduler), seed, out, args.force)
    elif args.command == "compare":
        cmd_compare(config, Path(args.container), Path(args.out) if args.out else root / "compare",
                    args.force, sweep=args.sweep)
    elif args.command == "viz":
        cmd_viz(config, Path(args.container), Path(args.out) if args.out else root / "viz",
                args.force, index=args.trajectory)


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)
    configure_logging(args.verbose, args.quiet)
    try:
        dispatch(args)
    except ConfigError as error:
        print(f"Configuration error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except (OlssError, OSError) as error:
        print(f"Error: {error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
