#!/usr/bin/env python3
"""
Launch script for the desk-scale acceptance runs
Monte Carlo reproductions of the reference tables, oracle checks and determinism checks.
Runtimes range from seconds (oracles) to tens of minutes (OU studies, bootstrap).
"""

import argparse
import math
import sys
import time

import numpy as np
import pandas as pd
from scipy import integrate

from config.cases import get_case
from config.settings import settings
from src.core.crossing import BridgeMethod, CrossingMethod, GMethod, crossing_probability, discretized_mean_N, g_prob
from src.core.likelihood import Objective, fb_density_vector, per_trajectory_scores
from src.core.models import SRModel, ThresholdConfig, from_theta
from src.evaluation.bootstrap import run_bootstrap_study
from src.evaluation.study import FigureKind, export_figure_data, mean_bias_ci, qq_correlation, run_study, summaries_frame
from src.simulation.simulate import SimPlan, simulate_killed
from src.utils.logging_setup import setup_logging


def _plan(name, n_traj, seed):
    case = get_case(name)
    return SimPlan(
        model=from_theta(case.kind, case.theta),
        cfg=ThresholdConfig(b=case.b, x0=case.x0, delta=case.delta),
        n_traj=n_traj,
        seed=seed,
    )


def _within(label, value, target, tol):
    ok = abs(value - target) <= tol
    print(f"  {'✅' if ok else '❌'} {label}: {value:.4f} (target {target} ± {tol})")
    return ok


def _check(label, ok, detail=""):
    print(f"  {'✅' if ok else '❌'} {label}{': ' + detail if detail else ''}")
    return ok


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def wd_table(args):
    """WD cases 1 and 4, per-trajectory killed MLE"""
    targets = {
        "WD1": {"mu": (0.326, 0.02), "sigma": (0.488, 0.01), "N": (33.83, 1.0)},
        "WD4": {"mu": (0.320, 0.05), "sigma": (1.467, 0.03), "N": (100.50, 3.0)},
    }
    ok = True
    for name, target in targets.items():
        result = run_study(_plan(name, args.replicates, args.seed), objectives=[Objective.KILLED],
                           group_sizes=[1], n_workers=args.workers)
        summary = result.summaries[0]
        ok &= _within(f"{name} avg(mu_hat)", summary.parameters["mu"].mean, *target["mu"])
        ok &= _within(f"{name} avg(sigma_hat)", summary.parameters["sigma"].mean, *target["sigma"])
        ok &= _within(f"{name} avg(N)", summary.avg_N, *target["N"])
    return ok


def wd_mean_index(args):
    """Discretized E(N) for the four WD cases"""
    ok = True
    for name, target in {"WD1": 33.83, "WD2": 33.83, "WD3": 100.50, "WD4": 100.50}.items():
        case = get_case(name)
        value = discretized_mean_N(from_theta(case.kind, case.theta), ThresholdConfig(b=case.b, x0=case.x0, delta=case.delta))
        ok &= _check(f"{name} E(N)", round(value, 2) == target, f"{value:.2f}")
    return ok


def ou_single(args):
    """OU case 1, m = 1: killed relative bias and its ordering against the naive fit"""
    result = run_study(_plan("OU1", args.replicates, args.seed), group_sizes=[1], n_workers=args.workers)
    killed, naive = result.summaries
    ok = _within("killed rel. bias mu", killed.parameters["mu"].rel_bias, 0.752, 0.08)
    ok &= _within("killed rel. bias beta", killed.parameters["beta"].rel_bias, 0.625, 0.12)
    for name in ("mu", "beta"):
        k, n = abs(killed.parameters[name].rel_bias), abs(naive.parameters[name].rel_bias)
        ok &= _check(f"naive worse on {name}", n > k, f"|killed| {k:.3f} < |naive| {n:.3f}")
    return ok


def ou_grouped(args):
    """OU case 1 pooled over m = 30 and m = 100"""
    n_total = max(args.replicates, 3000)
    result = run_study(_plan("OU1", n_total, args.seed), group_sizes=[30, 100], n_workers=args.workers)
    truth = result.theta_true
    ok = True
    killed = result.estimates_for(Objective.KILLED, 30)
    for j, name in enumerate(("mu", "beta")):
        low, high = mean_bias_ci(killed[:, j], truth[name])
        ok &= _check(f"killed m=30 CI of {name} contains 0", low <= 0.0 <= high, f"[{low:.3f}, {high:.3f}]")
        ok &= _check(f"Q-Q correlation of {name} (m=30)", qq_correlation(killed[:, j]) >= 0.99,
                     f"{qq_correlation(killed[:, j]):.4f}")
    naive = result.estimates_for(Objective.NAIVE, 100)
    low, high = mean_bias_ci(naive[:, 1], truth["beta"])
    centre = 0.5 * (low + high)
    ok &= _check("naive m=100 beta CI excludes 0", low > 0.0, f"[{low:.3f}, {high:.3f}]")
    ok &= _check("naive m=100 beta bias in (0.05, 0.20)", 0.05 < centre < 0.20, f"{centre:.3f}")
    if args.figures:
        for figure in FigureKind:
            export_figure_data(result, figure).to_csv(f"{args.figures}_ou1_{figure.value}.csv", index=False)
    return ok


def sr_single(args):
    """SR case 1, m = 1"""
    result = run_study(_plan("SR1", min(args.replicates, 1000), args.seed), objectives=[Objective.KILLED],
                       group_sizes=[1], n_workers=args.workers)
    summary = result.summaries[0]
    ok = _within("avg(sigma_hat)", summary.parameters["sigma"].mean, 0.686, 0.01)
    for name in ("mu", "beta"):
        ok &= _check(f"rel. bias of {name} positive", summary.parameters[name].rel_bias > 0,
                     f"{summary.parameters[name].rel_bias:.3f}")
    return ok


def ou_bootstrap(args):
    """OU case 1 bootstrap bias correction"""
    study = run_bootstrap_study(_plan("OU1", 1, args.seed), n_outer=args.n_outer, n_boot=args.n_boot,
                                n_workers=args.workers)
    frame = study.to_frame().set_index("parameter")
    ok = _within("avg(mu_bc)", frame.loc["mu", "avg_bc"], 0.431, 0.06)
    efficiency = study.rel_efficiency if study.rel_efficiency is not None else math.nan
    ok &= _within("relative efficiency", efficiency, 0.927, 0.15)
    return ok


def normalization(args):
    """Integral of the killed density plus G equals one"""
    ok = True
    # SR1 closer than one unit to b is held to the looser bound of the crossing expansion
    for name, tol, near_b in (("OU1", 1e-3, 1e-3), ("SR1", 1e-3, 2.5e-3), ("WD1", 1e-9, 1e-9)):
        case = get_case(name)
        model = from_theta(case.kind, case.theta)
        cfg = ThresholdConfig(b=case.b, x0=case.x0, delta=case.delta)
        method = CrossingMethod.default_for(model.kind)
        worst = 0.0
        for x in np.linspace(cfg.x0, cfg.b, 11)[:-1]:
            mean, var = model.conditional_moments(x, cfg.delta)
            lower = float(mean) - 14.0 * math.sqrt(float(var))
            if isinstance(model, SRModel):
                lower = max(lower, 1e-12)
            mass, _ = integrate.quad(
                lambda y: float(fb_density_vector(model, np.array([y]), np.array([x]), cfg.b, cfg.delta, method)[0]),
                lower, cfg.b, limit=500, epsabs=1e-13, epsrel=1e-12,
            )
            bound = tol if cfg.b - x >= 1.0 else near_b
            worst = max(worst, abs(mass + g_prob(model, x, cfg, method) - 1.0) / bound)
        ok &= _check(f"{name} max |mass - 1| within {tol:g} (near b {near_b:g})", worst <= 1.0, f"{worst:.2f} of bound")
    return ok


def score_mean(args):
    """Numerical score at the true parameters has mean zero"""
    ok = True
    for name, n in (("WD1", 10000), ("OU1", 2000)):
        plan = _plan(name, n, args.seed)
        scores = per_trajectory_scores(plan.model, simulate_killed(plan, n_workers=args.workers))
        mean = scores.mean(axis=0)
        se = scores.std(axis=0, ddof=1) / math.sqrt(n)
        ok &= _check(f"{name} |mean score| < 3 SE", bool(np.all(np.abs(mean) < 3.0 * se)),
                     ", ".join(f"{m:.3g}/{s:.3g}" for m, s in zip(mean, se)))
    return ok


def oracles(args):
    """WD bridge expansion and the Psi approximation against exact values"""
    case = get_case("WD1")
    model = from_theta(case.kind, case.theta)
    x, y = np.meshgrid(np.linspace(0.0, 9.9, 25), np.linspace(0.0, 9.9, 25))
    exact = crossing_probability(model, x.ravel(), y.ravel(), case.b, case.delta, BridgeMethod.EXACT_WD)
    expansion = crossing_probability(model, x.ravel(), y.ravel(), case.b, case.delta, BridgeMethod.EXPANSION)
    ok = _check("WD expansion equals exact bridge", bool(np.max(np.abs(exact - expansion)) <= 1e-15),
                f"{np.max(np.abs(exact - expansion)):.1e}")

    method = CrossingMethod(bridge=BridgeMethod.EXACT_WD, g_method=GMethod.PSI_APPROX)
    deltas = (0.1, 0.05, 0.025)
    errors = []
    for delta in deltas:
        cfg = ThresholdConfig(b=case.b, x0=case.x0, delta=delta)
        errors.append(abs(g_prob(model, 9.8, cfg, method) - g_prob(model, 9.8, cfg)))
    order = math.log(errors[0] / errors[-1]) / math.log(deltas[0] / deltas[-1])
    ok &= _check("Psi approximation order >= 1", order >= 1.0, f"{order:.2f}")
    return ok


def determinism(args):
    """Identical tables for repeated and parallel runs"""
    plan = _plan("OU3", 60, args.seed)
    first = summaries_frame(run_study(plan, group_sizes=[1, 3], n_workers=1).summaries)
    second = summaries_frame(run_study(plan, group_sizes=[1, 3], n_workers=1).summaries)
    parallel = summaries_frame(run_study(plan, group_sizes=[1, 3], n_workers=max(2, args.workers)).summaries)
    return _check("repeat and parallel runs bit-identical", first.equals(second) and first.equals(parallel))


CRITERIA = {
    "wd_table": wd_table,
    "wd_mean_index": wd_mean_index,
    "ou_single": ou_single,
    "ou_grouped": ou_grouped,
    "sr_single": sr_single,
    "ou_bootstrap": ou_bootstrap,
    "normalization": normalization,
    "score_mean": score_mean,
    "oracles": oracles,
    "determinism": determinism,
}


def main():
    """Run the selected acceptance criteria and print a summary table"""
    parser = argparse.ArgumentParser(description="Desk-scale acceptance runs")
    parser.add_argument("criteria", nargs="*", help=f"Criteria to run (default: all of {', '.join(CRITERIA)})")
    parser.add_argument("--replicates", type=int, default=settings.DESK_REPLICATES, help="Monte Carlo replicates")
    parser.add_argument("--n-outer", type=int, default=300, help="Outer replicates of the bootstrap run")
    parser.add_argument("--n-boot", type=int, default=300, help="Bootstrap replicates per outer replicate")
    parser.add_argument("--workers", type=int, default=settings.N_WORKERS, help="Worker processes")
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED, help="Master seed")
    parser.add_argument("--figures", help="Prefix for figure tables of the grouped OU run")
    args = parser.parse_args()
    setup_logging(log_to_file=False, level="WARNING")

    selected = args.criteria or list(CRITERIA)
    unknown = [c for c in selected if c not in CRITERIA]
    if unknown:
        parser.error(f"unknown criteria: {', '.join(unknown)}")
    print("🧪 Killed-diffusion acceptance runs")
    print("=" * 60)
    print(f"🎲 seed={args.seed}, replicates={args.replicates}, workers={args.workers}")

    rows = []
    for name in selected:
        criterion = CRITERIA[name]
        print(f"\n▶️  {name}: {criterion.__doc__}")
        started = time.time()
        try:
            ok = bool(criterion(args))
        except Exception as e:
            print(f"  ❌ {type(e).__name__}: {e}")
            ok = False
        rows.append({"criterion": name, "passed": ok, "seconds": round(time.time() - started, 1)})

    table = pd.DataFrame(rows)
    print("\n" + "=" * 60)
    print(table.to_string(index=False))
    print(f"📊 {int(table['passed'].sum())}/{len(table)} criteria passed")
    if not table["passed"].all():
        sys.exit(1)


if __name__ == "__main__":
    main()
