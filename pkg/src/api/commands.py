"""
Command-line front end
Subcommands simulate, estimate, bootstrap, study, fpt and segment, with exit
codes 0 (success), 2 (configuration or input), 3 (numerical or domain
failure) and 4 (non-convergence)
"""

import argparse
import logging
import os
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..core.crossing import discretized_mean_N
from ..core.estimate import FitResult, fit, fit_many
from ..core.exceptions import (
    ConfigError,
    ModelDomainError,
    NonConvergenceError,
    NumericalFailure,
    TrajectoryParseError,
)
from ..core.likelihood import KilledTrajectory, Objective
from ..core.models import ModelKind, param_names
from ..evaluation.bootstrap import BootstrapSettings, bias_correct, run_bootstrap_study
from ..evaluation.study import FigureKind, export_figure_data, run_study, summaries_frame
from ..simulation.simulate import simulate_killed
from ..utils.logging_setup import setup_logging
from .recording import ThresholdMode, ThresholdRule, segment_recording
from .run_config import RunConfig, SegmentSection, load_run_config
from .trajectory_io import emit_trajectories, ingest_trajectories, write_csv_atomic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def build_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied."""
    config = load_run_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.case:
        updates["case"] = args.case
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["n_workers"] = args.workers
    if args.output:
        updates["output"] = config.output.model_copy(update={"dir": args.output})
    return config.model_copy(update=updates)


def output_path(config: RunConfig, name: str) -> str:
    return os.path.join(config.output.dir, f"{config.output.prefix}_{name}.csv")


def report(frame: pd.DataFrame, config: RunConfig, name: str) -> str:
    """Print an aligned table and write it as CSV."""
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    path = write_csv_atomic(frame, output_path(config, name))
    print(f"\n💾 {path}")
    return path


def _fit_row(label: str, n_traj: int, fits: Dict[Objective, FitResult], names: Sequence[str]) -> dict:
    row = {"group": label, "n_traj": n_traj}
    for objective, result in fits.items():
        tag = "mle" if objective == Objective.KILLED else "naive"
        for name in names:
            row[f"{name}_{tag}"] = result.theta_hat[name]
        row[f"loglik_{tag}"] = result.loglik
        row[f"converged_{tag}"] = result.converged
    return row


def _groups(trajs: List[KilledTrajectory], group_size: int) -> List[List[KilledTrajectory]]:
    if group_size < 1:
        raise ConfigError(f"group size must be positive, got {group_size}")
    k = len(trajs) // group_size
    if k == 0:
        raise ConfigError(f"{len(trajs)} trajectories cannot fill a group of {group_size}")
    if k * group_size < len(trajs):
        logger.warning(f"⚠️ {len(trajs) - k * group_size} trailing trajectories do not fill a group and are ignored")
    return [trajs[i * group_size:(i + 1) * group_size] for i in range(k)]


def _group_label(group: Sequence[KilledTrajectory]) -> str:
    ids = [t.traj_id or "?" for t in group]
    return ids[0] if len(ids) == 1 else f"{ids[0]}..{ids[-1]}"


def _read_data(args: argparse.Namespace, config: RunConfig) -> List[KilledTrajectory]:
    trajs = ingest_trajectories(args.data, config.trajectory_schema())
    if not trajs:
        raise ConfigError(f"no trajectories in {args.data}")
    return trajs


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    plan = config.sim_plan(args.n)
    trajs = simulate_killed(plan, n_workers=config.n_workers)
    path = emit_trajectories(args.out or output_path(config, "trajectories"), trajs)
    avg_n = np.mean([t.n_steps for t in trajs]) if trajs else float("nan")
    print(f"🎲 {len(trajs)} trajectories of {plan.model.describe()}, avg(N) = {avg_n:.2f}")
    print(f"💾 {path}")
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace, config: RunConfig) -> int:
    """Killed and naive fits per group, plus the global fit over all trajectories."""
    kind = config.model_kind()
    names = param_names(kind)
    method, opts = config.crossing_method(), config.fit_options()
    trajs = _read_data(args, config)
    groups = _groups(trajs, args.group_size)

    fits = {
        objective: fit_many(kind, groups, objective, method, opts, n_workers=config.n_workers)
        for objective in (Objective.KILLED, Objective.NAIVE)
    }
    rows = [
        _fit_row(_group_label(g), len(g), {o: fits[o][i] for o in fits}, names)
        for i, g in enumerate(groups)
    ]
    if len(groups) > 1:
        pooled = {o: fit(kind, trajs[:len(groups) * args.group_size], o, method, opts) for o in fits}
        rows.append(_fit_row("global", len(groups) * args.group_size, pooled, names))
        fits = {o: fits[o] + [pooled[o]] for o in fits}

    report(pd.DataFrame(rows), config, "estimates")
    failed = sum(not f.converged for results in fits.values() for f in results)
    if failed:
        logger.error(f"❌ {failed} fits did not converge")
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_bootstrap(args: argparse.Namespace, config: RunConfig) -> int:
    """Bias-correct fits of a data file, or run a bootstrap study at the configured parameters."""
    kind = config.model_kind()
    names = param_names(kind)
    section = config.bootstrap
    n_boot = args.n_boot or section.n_boot
    group_size = args.group_size or section.group_size
    template = BootstrapSettings(
        substep_divisor=config.simulation.substep_divisor,
        stepper=config.simulation.stepper,
        objective=Objective.KILLED,
        method=config.crossing_method(),
        opts=config.fit_options(),
    )

    if args.data is None:
        study = run_bootstrap_study(
            config.sim_plan(), args.n_outer or section.n_outer, n_boot, group_size, template, config.n_workers
        )
        report(study.to_frame(), config, "bootstrap_study")
        if study.n_outer_failed:
            logger.warning(f"⚠️ {study.n_outer_failed} outer replicates were dropped")
        return EXIT_OK

    rows = []
    invalid = 0
    for i, group in enumerate(_groups(_read_data(args, config), group_size)):
        result = fit(kind, group, template.objective, template.method, template.opts)
        if not result.converged:
            raise NonConvergenceError(f"fit of group {_group_label(group)} did not converge")
        boot = bias_correct(kind, group, result, n_boot, template, config.seed, (1, i), config.n_workers)
        invalid += not boot.valid
        row = {"group": _group_label(group), "n_traj": len(group)}
        for name in names:
            row[f"{name}_mle"] = boot.theta_hat[name]
            row[f"{name}_bc"] = boot.theta_bc[name]
        row.update({"n_failed": boot.n_failed, "valid": boot.valid})
        rows.append(row)

    report(pd.DataFrame(rows), config, "bootstrap")
    if invalid:
        logger.error(f"❌ {invalid} bootstrap runs exceeded the failure ceiling")
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_study(args: argparse.Namespace, config: RunConfig) -> int:
    section = config.study
    group_sizes = [int(m) for m in args.group_sizes.split(",")] if args.group_sizes else section.group_sizes
    result = run_study(
        config.sim_plan(),
        objectives=section.objectives,
        group_sizes=group_sizes,
        n_total=args.n_total or section.n_total,
        method=config.crossing_method(),
        opts=config.fit_options(),
        n_workers=config.n_workers,
    )
    report(summaries_frame(result.summaries), config, "study")

    if args.figures:
        os.makedirs(args.figures, exist_ok=True)
        for objective in section.objectives:
            objective = Objective(objective)
            for figure in FigureKind:
                table = export_figure_data(result, figure, objective)
                path = os.path.join(args.figures, f"{config.output.prefix}_{figure.value}_{objective.value}.csv")
                write_csv_atomic(table, path)
                logger.info(f"📈 figure data written to {path}")
    return EXIT_OK


def cmd_fpt(args: argparse.Namespace, config: RunConfig) -> int:
    model = config.resolve_model()
    cfg = config.resolve_threshold()
    cfg.check_for(model)
    mean_t = model.mean_fpt(cfg)
    if model.kind == ModelKind.WD:
        mean_n = discretized_mean_N(model, cfg, max_steps=args.max_steps)
        label = "E(N)"
    else:
        mean_n = mean_t / cfg.delta + 0.5
        label = "E(N) approx"
    print(f"model      {model.describe()}")
    print(f"x0, b, dt  {cfg.x0}, {cfg.b}, {cfg.delta}")
    print(f"E(T_b)     {mean_t:.6f}")
    print(f"{label:<10} {mean_n:.2f}")
    return EXIT_OK


def cmd_segment(args: argparse.Namespace, config: RunConfig) -> int:
    section = config.segment
    overrides = {k: v for k, v in {
        "delta": args.delta,
        "offset": args.offset,
        "start_level": args.start_level,
        "spike_level": args.spike_level,
    }.items() if v is not None}
    if args.threshold is not None:
        overrides["threshold"] = ThresholdRule(mode=ThresholdMode.MANUAL, value=args.threshold)
    elif args.max_plus_eps is not None:
        overrides["threshold"] = ThresholdRule(mode=ThresholdMode.MAX_PLUS_EPS, epsilon=args.max_plus_eps)
    if section is None:
        section = SegmentSection(**overrides)
    else:
        section = SegmentSection(**{**section.model_dump(), **overrides})

    frame = pd.read_csv(args.input)
    column = "value" if "value" in frame.columns else frame.columns[-1]
    segments = segment_recording(
        frame[column].to_numpy(dtype=float),
        section.delta,
        section.offset,
        section.start_level,
        section.spike_level,
        section.threshold,
    )
    trajs = [s.to_trajectory(f"seg{i}") for i, s in enumerate(segments)]
    emit_trajectories(args.out or output_path(config, "segments"), trajs)
    report(pd.DataFrame([
        {"traj_id": t.traj_id, "start_index": s.start_index, "n_samples": len(s.samples), "b": s.b, "crossed": s.crossed}
        for t, s in zip(trajs, segments)
    ], columns=["traj_id", "start_index", "n_samples", "b", "crossed"]), config, "segment_summary")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "bootstrap": cmd_bootstrap,
    "study": cmd_study,
    "fpt": cmd_fpt,
    "segment": cmd_segment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration (JSON)")
    common.add_argument("--case", help="Registered parameter case, e.g. OU1")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--workers", type=int, help="Worker processes")
    common.add_argument("--output", help="Output directory")
    common.add_argument("--log-level", default=None, help="Logging level (default from settings)")
    common.add_argument("--no-log-file", action="store_true", help="Log to the console only")

    parser = argparse.ArgumentParser(
        prog="killed-diffusion",
        description="Simulation and maximum-likelihood estimation for diffusions killed at a threshold",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simulate killed trajectories to CSV")
    p.add_argument("--n", type=int, help="Number of trajectories")
    p.add_argument("--out", help="Output CSV path")

    p = sub.add_parser("estimate", parents=[common], help="Killed and naive MLE per group and globally")
    p.add_argument("--data", required=True, help="Trajectory CSV")
    p.add_argument("--group-size", type=int, default=1, help="Trajectories pooled per fit")

    p = sub.add_parser("bootstrap", parents=[common], help="Parametric bootstrap bias correction")
    p.add_argument("--data", help="Trajectory CSV (omit to run a bootstrap study)")
    p.add_argument("--n-boot", type=int, help="Bootstrap replicates")
    p.add_argument("--n-outer", type=int, help="Outer replicates of a bootstrap study")
    p.add_argument("--group-size", type=int, help="Trajectories pooled per fit")

    p = sub.add_parser("study", parents=[common], help="Monte Carlo study over group sizes")
    p.add_argument("--n-total", type=int, help="Trajectories simulated")
    p.add_argument("--group-sizes", help="Comma-separated group sizes, e.g. 1,3,10,30,100")
    p.add_argument("--figures", help="Directory for density, Q-Q and CI-vs-m tables")

    p = sub.add_parser("fpt", parents=[common], help="Mean first-passage time and E(N)")
    p.add_argument("--max-steps", type=int, help="Truncate the E(N) series after this many terms")

    p = sub.add_parser("segment", parents=[common], help="Cut a recording into killed trajectories")
    p.add_argument("--input", required=True, help="CSV with a 'value' column (or values in the last column)")
    p.add_argument("--out", help="Output trajectory CSV")
    p.add_argument("--delta", type=float, help="Sampling step")
    p.add_argument("--offset", type=float, help="Translation added to every sample")
    p.add_argument("--start-level", type=float, help="Start level after translation")
    p.add_argument("--spike-level", type=float, help="Spike level after translation")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float, help="Manual threshold after translation")
    group.add_argument("--max-plus-eps", type=float, help="Threshold = highest sub-spike sample + this margin")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, log_to_file=not args.no_log_file)
    try:
        config = build_config(args)
        return COMMANDS[args.command](args, config)
    except (ConfigError, TrajectoryParseError, ValidationError, FileNotFoundError) as e:
        logger.error(f"❌ configuration or input error: {e}")
        return EXIT_CONFIG
    except NonConvergenceError as e:
        logger.error(f"❌ non-convergence: {e}")
        return EXIT_NONCONVERGENCE
    except (NumericalFailure, ModelDomainError) as e:
        logger.error(f"❌ numerical failure: {e}")
        return EXIT_NUMERICAL
