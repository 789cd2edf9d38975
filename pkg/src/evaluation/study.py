"""
Monte Carlo study harness
Simulate once, fit groups of m trajectories with the pooled likelihood,
summarize the estimates and export tables for density, Q-Q and
confidence-interval plots
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy import stats

from config.settings import settings
from ..core.crossing import CrossingMethod
from ..core.estimate import FitOptions, fit_many
from ..core.exceptions import ConfigError
from ..core.likelihood import Objective
from ..core.models import ModelKind, param_names
from ..simulation.simulate import SimPlan, simulate_killed

logger = logging.getLogger(__name__)


class ParameterSummary(BaseModel):
    """Monte Carlo aggregates of one parameter's estimates"""
    true: float
    mean: float
    rel_bias: float = Field(description="(avg(theta_hat) - theta) / theta")
    sd: float
    q025: float
    q975: float


class StudySummary(BaseModel):
    """Summary of one (objective, group size) cell of a study"""
    kind: ModelKind
    objective: Objective
    group_size: int = Field(description="Trajectories pooled per fit (m)")
    n_replicates: int = Field(description="Number of groups k = floor(n_total / m)")
    n_nonconverged: int = Field(default=0, description="Groups whose fit did not converge (incumbents included)")
    avg_N: float = Field(description="Mean number of steps N per trajectory")
    parameters: Dict[str, ParameterSummary]


class GroupEstimates(BaseModel):
    """Raw per-group estimates kept for figure data"""
    objective: Objective
    group_size: int
    theta: List[List[float]] = Field(description="One row per group, columns in parameter order")
    converged: List[bool]


class StudyResult(BaseModel):
    """Summaries and raw estimates of a study"""
    kind: ModelKind
    theta_true: Dict[str, float]
    n_total: int
    summaries: List[StudySummary]
    estimates: List[GroupEstimates]

    def estimates_for(self, objective: Objective, group_size: int) -> np.ndarray:
        for entry in self.estimates:
            if entry.objective == Objective(objective) and entry.group_size == group_size:
                return np.asarray(entry.theta, dtype=float)
        raise KeyError(f"no estimates for objective={objective}, m={group_size}")


class FigureKind(str, Enum):
    """Tables exported for plotting"""
    DENSITY = "density"
    QQ_NORMAL = "qq_normal"
    CI_VS_M = "ci_vs_m"


def summarize(
    kind: ModelKind,
    objective: Objective,
    group_size: int,
    theta: np.ndarray,
    theta_true: Dict[str, float],
    n_nonconverged: int,
    avg_n: float,
) -> StudySummary:
    """Mean, relative bias, sd and 2.5%/97.5% linear-interpolation quantiles per parameter."""
    names = param_names(kind)
    theta = np.atleast_2d(theta)
    parameters = {}
    for j, name in enumerate(names):
        values = theta[:, j]
        truth = theta_true[name]
        mean = float(values.mean())
        parameters[name] = ParameterSummary(
            true=truth,
            mean=mean,
            rel_bias=(mean - truth) / truth if truth != 0 else float("nan"),
            sd=float(values.std(ddof=1)) if values.size > 1 else 0.0,
            q025=float(np.quantile(values, 0.025)),
            q975=float(np.quantile(values, 0.975)),
        )
    return StudySummary(
        kind=kind,
        objective=objective,
        group_size=group_size,
        n_replicates=theta.shape[0],
        n_nonconverged=n_nonconverged,
        avg_N=avg_n,
        parameters=parameters,
    )


def run_study(
    plan: SimPlan,
    objectives: Sequence[Objective] = (Objective.KILLED, Objective.NAIVE),
    group_sizes: Sequence[int] = settings.DEFAULT_GROUP_SIZES,
    n_total: Optional[int] = None,
    method: Optional[CrossingMethod] = None,
    opts: Optional[FitOptions] = None,
    n_workers: Optional[int] = None,
) -> StudyResult:
    """
    Simulate n_total trajectories once and fit them in groups.

    For each group size m the first k = n_total // m * m trajectories are cut
    into k consecutive groups and each group is fitted with the pooled
    likelihood under every objective. Non-converged fits are counted and
    their incumbents kept in the summaries.

    Args:
        plan: Simulation plan (its n_traj is replaced by n_total)
        objectives: Killed and/or naive likelihood
        group_sizes: Values of m
        n_total: Trajectories to simulate (defaults to plan.n_traj)
        method: Crossing evaluation choices
        opts: Simplex options
        n_workers: Worker processes

    Returns:
        StudyResult with one StudySummary per (objective, m)
    """
    n_total = n_total or plan.n_traj
    group_sizes = sorted(set(int(m) for m in group_sizes))
    if not group_sizes or group_sizes[0] < 1 or n_total < group_sizes[-1]:
        raise ConfigError(f"n_total={n_total} must be at least the largest group size {group_sizes[-1:]}")

    kind = ModelKind(plan.model.kind)
    theta_true = plan.model.theta
    trajectories = simulate_killed(plan.model_copy(update={"n_traj": n_total}), n_workers=n_workers)

    summaries: List[StudySummary] = []
    estimates: List[GroupEstimates] = []
    for objective in objectives:
        objective = Objective(objective)
        for m in group_sizes:
            k = n_total // m
            groups = [trajectories[i * m:(i + 1) * m] for i in range(k)]
            logger.info(f"📊 fitting {k} groups of m={m} ({objective.value})")
            fits = fit_many(kind, groups, objective, method, opts, n_workers=n_workers)
            theta = np.array([f.theta_vector() for f in fits])
            converged = [f.converged for f in fits]
            avg_n = float(np.mean([t.n_steps for t in trajectories[:k * m]]))
            summaries.append(summarize(kind, objective, m, theta, theta_true, converged.count(False), avg_n))
            estimates.append(GroupEstimates(objective=objective, group_size=m, theta=theta.tolist(), converged=converged))
            if converged.count(False):
                logger.warning(f"⚠️ {converged.count(False)}/{k} fits did not converge (m={m}, {objective.value})")
    return StudyResult(kind=kind, theta_true=theta_true, n_total=n_total, summaries=summaries, estimates=estimates)


def mean_bias_ci(estimates: Sequence[float], theta_true: float, confidence: float = 0.95) -> Tuple[float, float]:
    """
    Confidence interval for the mean relative bias from k group estimates:
    (avg - theta)/theta +- t_{(1+confidence)/2, k-1} sd / (|theta| sqrt(k)).

    Raises:
        ValueError: If fewer than two estimates are given
    """
    values = np.asarray(estimates, dtype=float)
    k = values.size
    if k < 2:
        raise ValueError("mean_bias_ci needs at least two group estimates")
    centre = (values.mean() - theta_true) / theta_true
    half = stats.t.ppf(0.5 * (1.0 + confidence), k - 1) * values.std(ddof=1) / (abs(theta_true) * np.sqrt(k))
    return float(centre - half), float(centre + half)


def normal_qq(values: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Standard normal quantiles at (i - 0.5)/n against the standardized order statistics."""
    values = np.sort(np.asarray(values, dtype=float))
    n = values.size
    theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    sd = values.std(ddof=1) if n > 1 else 0.0
    sample = (values - values.mean()) / sd if sd > 0 else np.zeros(n)
    return theoretical, sample


def qq_correlation(values: Sequence[float]) -> float:
    """Correlation of the normal Q-Q points; close to 1 for normal samples."""
    theoretical, sample = normal_qq(values)
    if theoretical.size < 3 or not np.any(sample):
        return float("nan")
    return float(np.corrcoef(theoretical, sample)[0, 1])


def export_figure_data(
    result: StudyResult,
    figure: FigureKind,
    objective: Objective = Objective.KILLED,
    group_size: Optional[int] = None,
    confidence: float = 0.95,
    grid_points: int = 200,
) -> pd.DataFrame:
    """
    Plain numeric tables for plotting.

    DENSITY: Gaussian kernel density (Silverman bandwidth) of the relative
    estimates theta_hat/theta. QQ_NORMAL: normal Q-Q points. Both use the
    given group size (default: the smallest). CI_VS_M: mean relative bias
    and its confidence interval for every group size.
    """
    figure = FigureKind(figure)
    objective = Objective(objective)
    names = param_names(result.kind)
    rows = []

    if figure == FigureKind.CI_VS_M:
        for entry in result.estimates:
            if entry.objective != objective or len(entry.theta) < 2:
                continue
            theta = np.asarray(entry.theta)
            for j, name in enumerate(names):
                truth = result.theta_true[name]
                low, high = mean_bias_ci(theta[:, j], truth, confidence)
                rows.append({
                    "parameter": name,
                    "group_size": entry.group_size,
                    "rel_bias": (theta[:, j].mean() - truth) / truth,
                    "ci_low": low,
                    "ci_high": high,
                })
        return pd.DataFrame(rows, columns=["parameter", "group_size", "rel_bias", "ci_low", "ci_high"])

    if group_size is None:
        group_size = min(e.group_size for e in result.estimates if e.objective == objective)
    theta = result.estimates_for(objective, group_size)

    if figure == FigureKind.QQ_NORMAL:
        for j, name in enumerate(names):
            theoretical, sample = normal_qq(theta[:, j])
            rows.extend({"parameter": name, "theoretical": t, "sample": s} for t, s in zip(theoretical, sample))
        return pd.DataFrame(rows, columns=["parameter", "theoretical", "sample"])

    for j, name in enumerate(names):
        relative = theta[:, j] / result.theta_true[name]
        if relative.size < 2 or np.ptp(relative) == 0:
            logger.warning(f"⚠️ density of {name} skipped: fewer than two distinct estimates")
            continue
        kde = stats.gaussian_kde(relative, bw_method="silverman")
        spread = 3.0 * kde.factor * relative.std(ddof=1)
        grid = np.linspace(relative.min() - spread, relative.max() + spread, grid_points)
        rows.extend({"parameter": name, "x": x, "density": d} for x, d in zip(grid, kde(grid)))
    return pd.DataFrame(rows, columns=["parameter", "x", "density"])


def summaries_frame(summaries: Sequence[StudySummary]) -> pd.DataFrame:
    """Long-format table, one row per (objective, m, parameter)."""
    rows = []
    for summary in summaries:
        for name, p in summary.parameters.items():
            rows.append({
                "model": summary.kind.value,
                "objective": summary.objective.value,
                "group_size": summary.group_size,
                "parameter": name,
                "true": p.true,
                "mean": p.mean,
                "rel_bias": p.rel_bias,
                "sd": p.sd,
                "q025": p.q025,
                "q975": p.q975,
                "avg_N": summary.avg_N,
                "n_replicates": summary.n_replicates,
                "n_nonconverged": summary.n_nonconverged,
            })
    return pd.DataFrame(rows)
