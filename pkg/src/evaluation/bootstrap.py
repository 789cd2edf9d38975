"""
Parametric bootstrap
Bias correction of per-trajectory or per-group estimates by re-simulating at
the estimate, and relative efficiency of corrected versus raw estimators
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from config.settings import settings
from ..core.crossing import CrossingMethod
from ..core.estimate import FitOptions, FitResult, fit, fit_many
from ..core.exceptions import DivergenceError, NonConvergenceError, NumericalFailure
from ..core.likelihood import KilledTrajectory, Objective
from ..core.models import ModelKind, param_names
from ..simulation.simulate import SimPlan, Stepper, simulate_design, simulate_killed

logger = logging.getLogger(__name__)


class BootstrapReport(BaseModel):
    """Bootstrap bias estimate and corrected parameters for one fit"""
    kind: ModelKind = Field(description="Model family")
    theta_hat: Dict[str, float] = Field(description="Original estimate")
    boot_mean: Dict[str, float] = Field(description="Average of the bootstrap estimates")
    bias_hat: Dict[str, float] = Field(description="Estimated bias, boot_mean - theta_hat")
    theta_bc: Dict[str, float] = Field(description="Bias-corrected estimate 2 theta_hat - boot_mean")
    n_boot: int = Field(description="Bootstrap replicates requested")
    n_failed: int = Field(default=0, description="Bootstrap fits dropped for non-convergence")
    valid: bool = Field(default=True, description="False when too many bootstrap fits failed")
    rel_efficiency: Optional[float] = Field(default=None, description="Family-level relative efficiency")


class BootstrapSettings(BaseModel):
    """Simulation and fitting choices shared by the outer fit and its bootstrap"""
    substep_divisor: int = Field(default=settings.DEFAULT_SUBSTEP_DIVISOR, ge=1)
    stepper: Stepper = Field(default=Stepper.EXACT)
    objective: Objective = Field(default=Objective.KILLED)
    method: Optional[CrossingMethod] = Field(default=None)
    opts: FitOptions = Field(default_factory=FitOptions)


def _average(kind: ModelKind, fits: Sequence[FitResult]) -> np.ndarray:
    return np.mean([f.theta_vector() for f in fits], axis=0)


def bias_correct(
    kind: ModelKind,
    trajs: Sequence[KilledTrajectory],
    fit_result: FitResult,
    n_boot: int,
    template: Optional[BootstrapSettings] = None,
    seed: int = None,
    stream_key: Sequence[int] = (),
    n_workers: int = 1,
) -> BootstrapReport:
    """
    Parametric bootstrap bias correction.

    Simulates n_boot groups of len(trajs) trajectories at the estimate,
    trajectory j of each group with the x0, threshold and step of trajs[j],
    refits each group with the same objective, crossing method and
    simplex options, and returns theta_bc = 2 theta_hat - avg(theta_boot).
    Non-converged bootstrap fits are dropped; the report is marked invalid
    when more than settings.BOOTSTRAP_MAX_FAIL_FRACTION of them fail.

    Args:
        kind: Model family
        trajs: The data the estimate was fitted on
        fit_result: The original fit
        n_boot: Number of bootstrap replicates
        template: Simulation and fitting choices
        seed: Master seed (defaults to settings.DEFAULT_SEED)
        stream_key: Prefix for the bootstrap streams
        n_workers: Worker processes for the bootstrap fits

    Returns:
        BootstrapReport
    """
    kind = ModelKind(kind)
    template = template or BootstrapSettings()
    seed = settings.DEFAULT_SEED if seed is None else seed
    names = param_names(kind)
    model = fit_result.model()
    if kind == ModelKind.WD and model.mu <= 0:
        raise DivergenceError(f"cannot bootstrap a WD estimate with mu={model.mu}: paths need not reach b")

    # Bootstrap trajectory j of every group reuses data trajectory j's x0, b and delta
    cfgs = [traj.threshold for traj in trajs]
    m = len(trajs)
    plan = SimPlan(
        model=model,
        cfg=cfgs[0],
        substep_divisor=template.substep_divisor,
        n_traj=n_boot * m,
        seed=seed,
        stepper=template.stepper,
        stream_key=tuple(stream_key),
    )
    simulated = simulate_design(plan, cfgs, n_boot, n_workers=n_workers)
    groups = [simulated[i * m:(i + 1) * m] for i in range(n_boot)]
    fits = fit_many(kind, groups, template.objective, template.method, template.opts, n_workers=n_workers)

    kept = [f for f in fits if f.converged]
    n_failed = len(fits) - len(kept)
    valid = bool(kept) and n_failed <= settings.BOOTSTRAP_MAX_FAIL_FRACTION * n_boot
    if n_failed:
        logger.warning(f"⚠️ dropped {n_failed}/{n_boot} non-converged bootstrap fits")

    theta_hat = fit_result.theta_vector()
    boot_mean = _average(kind, kept) if kept else np.full(len(names), np.nan)
    theta_bc = 2.0 * theta_hat - boot_mean
    return BootstrapReport(
        kind=kind,
        theta_hat=fit_result.theta_hat,
        boot_mean=dict(zip(names, boot_mean.tolist())),
        bias_hat=dict(zip(names, (boot_mean - theta_hat).tolist())),
        theta_bc=dict(zip(names, theta_bc.tolist())),
        n_boot=n_boot,
        n_failed=n_failed,
        valid=valid,
    )


def relative_efficiency(errors_bc: np.ndarray, errors_raw: np.ndarray) -> float:
    """
    det(MSE_bc) / det(MSE_raw), with MSE = (1/K) sum e e^T about the true parameters.

    Raises:
        NumericalFailure: If either mean-square-error matrix is singular
    """
    errors_bc = np.atleast_2d(np.asarray(errors_bc, dtype=float))
    errors_raw = np.atleast_2d(np.asarray(errors_raw, dtype=float))
    if errors_bc.shape[1] != errors_raw.shape[1] or not errors_bc.size or not errors_raw.size:
        raise ValueError("error matrices must be nonempty with the same number of columns")
    det_bc = np.linalg.det(errors_bc.T @ errors_bc / errors_bc.shape[0])
    det_raw = np.linalg.det(errors_raw.T @ errors_raw / errors_raw.shape[0])
    if not (det_bc > 0 and det_raw > 0):
        raise NumericalFailure(f"singular mean-square-error matrix (det_bc={det_bc:.3e}, det_raw={det_raw:.3e})")
    return float(det_bc / det_raw)


# ---------------------------------------------------------------------------
# Bootstrap simulation study
# ---------------------------------------------------------------------------

class BootstrapStudy(BaseModel):
    """Raw and bias-corrected estimator families at known parameters"""
    kind: ModelKind
    theta_true: Dict[str, float]
    group_size: int
    reports: List[BootstrapReport]
    n_outer_failed: int = Field(default=0, description="Outer fits that did not converge")
    rel_efficiency: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        """avg and sd of raw and corrected estimates per parameter."""
        names = param_names(self.kind)
        usable = [r for r in self.reports if r.valid]
        raw = np.array([[r.theta_hat[n] for n in names] for r in usable])
        corrected = np.array([[r.theta_bc[n] for n in names] for r in usable])
        rows = []
        for j, name in enumerate(names):
            rows.append({
                "parameter": name,
                "true": self.theta_true[name],
                "avg_raw": raw[:, j].mean() if raw.size else np.nan,
                "sd_raw": raw[:, j].std(ddof=1) if len(raw) > 1 else np.nan,
                "avg_bc": corrected[:, j].mean() if corrected.size else np.nan,
                "sd_bc": corrected[:, j].std(ddof=1) if len(corrected) > 1 else np.nan,
                "rel_efficiency": self.rel_efficiency,
                "n_replicates": len(usable),
                "group_size": self.group_size,
            })
        return pd.DataFrame(rows)


def _outer_replicate(task) -> Optional[BootstrapReport]:
    kind, group, n_boot, template, seed, index = task
    outer = fit(kind, group, template.objective, template.method, template.opts)
    if not outer.converged:
        return None
    try:
        return bias_correct(kind, group, outer, n_boot, template, seed, stream_key=(1, index))
    except (DivergenceError, NonConvergenceError) as e:
        logger.warning(f"⚠️ bootstrap for outer replicate {index} failed: {e}")
        return None


def run_bootstrap_study(
    plan: SimPlan,
    n_outer: int,
    n_boot: int,
    group_size: int = 1,
    template: Optional[BootstrapSettings] = None,
    n_workers: Optional[int] = None,
) -> BootstrapStudy:
    """
    Simulate n_outer groups at the plan's parameters, fit and bias-correct
    each, and compare the raw and corrected families.

    Outer trajectories use stream key (0, i); the bootstrap of outer
    replicate i uses (1, i, j), so results do not depend on n_workers.
    """
    n_workers = n_workers or settings.N_WORKERS
    template = template or BootstrapSettings(substep_divisor=plan.substep_divisor, stepper=plan.stepper)
    kind = ModelKind(plan.model.kind)
    names = param_names(kind)

    outer_plan = plan.model_copy(update={"n_traj": n_outer * group_size, "stream_key": (0,)})
    outer = simulate_killed(outer_plan, n_workers=n_workers)
    groups = [outer[i * group_size:(i + 1) * group_size] for i in range(n_outer)]
    tasks = [(kind, g, n_boot, template, plan.seed, i) for i, g in enumerate(groups)]

    logger.info(f"🔄 bootstrap study: {n_outer} outer x {n_boot} bootstrap fits, m={group_size}")
    if n_workers <= 1:
        results = [_outer_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_outer_replicate, tasks))

    reports = [r for r in results if r is not None]
    study = BootstrapStudy(
        kind=kind,
        theta_true=plan.model.theta,
        group_size=group_size,
        reports=reports,
        n_outer_failed=len(results) - len(reports),
    )
    usable = [r for r in reports if r.valid]
    if len(usable) > len(names):
        truth = plan.model.theta_vector()
        errors_raw = np.array([[r.theta_hat[n] for n in names] for r in usable]) - truth
        errors_bc = np.array([[r.theta_bc[n] for n in names] for r in usable]) - truth
        try:
            study.rel_efficiency = relative_efficiency(errors_bc, errors_raw)
        except NumericalFailure as e:
            logger.warning(f"⚠️ relative efficiency unavailable: {e}")
    return study
