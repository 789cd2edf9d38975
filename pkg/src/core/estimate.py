"""
Maximum-likelihood estimation
Explicit initial estimators and derivative-free Nelder-Mead fitting of the
killed or naive likelihood, per trajectory or pooled over a group
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from config.settings import settings
from .crossing import CrossingDiagnostics, CrossingMethod
from .exceptions import ModelDomainError
from .likelihood import KilledTrajectory, Objective, loglik_pooled
from .models import DiffusionModel, ModelKind, from_theta, param_names
from ..utils.numerics import nelder_mead

logger = logging.getLogger(__name__)


class FitOptions(BaseModel):
    """Nelder-Mead hyper-parameters"""
    max_evals: int = Field(default=settings.FIT_MAX_EVALS, ge=10, description="Evaluation budget per run")
    f_rel_tol: float = Field(default=settings.FIT_F_REL_TOL, gt=0, description="Relative spread of simplex values")
    x_tol: float = Field(default=settings.FIT_X_TOL, gt=0, description="Spread of simplex vertices")
    max_restarts: int = Field(default=settings.FIT_MAX_RESTARTS, ge=0, description="Restarts from the incumbent")
    simplex_rel_step: float = Field(default=settings.SIMPLEX_REL_STEP, gt=0, description="Relative vertex displacement")
    simplex_zero_step: float = Field(default=settings.SIMPLEX_ZERO_STEP, gt=0, description="Displacement of zero coordinates")


class FitResult(BaseModel):
    """Estimated parameters and optimizer diagnostics"""
    kind: ModelKind = Field(description="Model family")
    theta_hat: Dict[str, float] = Field(description="Estimated parameters")
    loglik: float = Field(description="Log-likelihood at the estimate")
    method: Objective = Field(description="Killed MLE or naive MLE")
    converged: bool = Field(description="Whether the simplex met its tolerances")
    n_evals: int = Field(description="Objective evaluations over all runs")
    n_restarts: int = Field(default=0, description="Restarts performed")
    boundary_flag: bool = Field(default=False, description="Estimate on the feasibility boundary")
    n_trajectories: int = Field(default=1, description="Trajectories pooled in the fit")

    def model(self) -> DiffusionModel:
        return from_theta(self.kind, self.theta_hat)

    def theta_vector(self) -> np.ndarray:
        return np.array([self.theta_hat[name] for name in param_names(self.kind)])


# ---------------------------------------------------------------------------
# Initial estimators
# ---------------------------------------------------------------------------

def _fallback_estimate(kind: ModelKind, traj: KilledTrajectory) -> Dict[str, float]:
    path = traj.path()
    n_inc = path.size - 1
    mu = (traj.b - traj.x0) / (traj.n_steps * traj.delta)
    if n_inc >= 1:
        increments = np.diff(path)
        weights = 1.0 / path[:-1] if kind == ModelKind.SR else 1.0
        sigma2 = float(np.sum(weights * increments ** 2)) / (n_inc * traj.delta)
    else:
        scale = traj.x0 if kind == ModelKind.SR else 1.0
        sigma2 = (traj.b - traj.x0) ** 2 / (scale * traj.n_steps * traj.delta)
    sigma2 = max(sigma2, settings.MIN_SIGMA2)
    if kind == ModelKind.WD:
        return {"mu": mu, "sigma": math.sqrt(sigma2)}
    if kind == ModelKind.SR:
        mu = max(mu, 0.55 * sigma2)
    return {"mu": mu, "beta": settings.FALLBACK_BETA, "sigma": math.sqrt(sigma2)}


def _wd_estimate(path: np.ndarray, delta: float) -> Dict[str, float]:
    n = path.size - 1
    mu = (path[-1] - path[0]) / (n * delta)
    sigma2 = float(np.sum((np.diff(path) - mu * delta) ** 2)) / (n * delta)
    return {"mu": mu, "sigma": math.sqrt(max(sigma2, settings.MIN_SIGMA2))}


def _ou_estimate(path: np.ndarray, delta: float) -> Optional[Dict[str, float]]:
    n = path.size - 1
    centred = path - path.mean()
    denominator = float(np.sum(centred ** 2))
    if denominator <= 0:
        return None
    ratio = float(np.sum(centred[1:] * centred[:-1])) / denominator
    if not ratio > 0:
        return None
    beta = -math.log(ratio) / delta if ratio < 1 else settings.GUARD_BETA
    beta = max(beta, settings.GUARD_BETA)
    sigma2 = float(np.sum(np.diff(path) ** 2)) / (n * delta)
    return {"mu": beta * path.mean(), "beta": beta, "sigma": math.sqrt(max(sigma2, settings.MIN_SIGMA2))}


def _sr_estimate(path: np.ndarray, delta: float) -> Dict[str, float]:
    n = path.size - 1
    prev, curr = path[:-1], path[1:]
    inv_prev = 1.0 / prev
    numerator = n * np.sum(curr * inv_prev) - np.sum(curr) * np.sum(inv_prev)
    denominator = n ** 2 - np.sum(prev) * np.sum(inv_prev)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = numerator / denominator
    if np.isfinite(ratio) and 0 < ratio < 1:
        beta = max(-math.log(ratio) / delta, settings.GUARD_BETA)
    else:
        beta = settings.GUARD_BETA

    decay = math.exp(-beta * delta)
    one_minus = -math.expm1(-beta * delta)
    level = float(np.mean(curr)) + decay * (path[-1] - path[0]) / (n * one_minus)
    residual = curr - decay * prev - level * one_minus
    sigma2 = 2.0 * beta * float(np.sum(inv_prev * residual ** 2)) / (
        one_minus * float(np.sum(inv_prev * (level * one_minus + 2.0 * decay * prev)))
    )
    if not np.isfinite(sigma2):
        sigma2 = settings.MIN_SIGMA2
    sigma2 = max(sigma2, settings.MIN_SIGMA2)
    mu = max(beta * level, 0.55 * sigma2)
    return {"mu": mu, "beta": beta, "sigma": math.sqrt(sigma2)}


def initial_estimate(kind: Union[ModelKind, str], traj: KilledTrajectory) -> Dict[str, float]:
    """
    Explicit starting values for the simplex.

    Standard no-threshold estimators: sample drift and quadratic variation
    for WD, the lag-one autocovariance ratio for OU and the weighted
    regression estimators for SR. Short or degenerate trajectories fall
    back to heuristic values; never raises.

    Args:
        kind: Model family
        traj: Observed trajectory

    Returns:
        Parameter mapping in the family's parameter names
    """
    kind = ModelKind(kind)
    path = traj.path()
    if len(traj.obs) < 3:
        logger.warning(f"⚠️ trajectory {traj.traj_id} has {len(traj.obs)} observations, using fallback initial values")
        return _fallback_estimate(kind, traj)

    if kind == ModelKind.WD:
        return _wd_estimate(path, traj.delta)
    if kind == ModelKind.OU:
        estimate = _ou_estimate(path, traj.delta)
        if estimate is None:
            logger.warning(f"⚠️ degenerate autocovariance for trajectory {traj.traj_id}, using fallback initial values")
            return _fallback_estimate(kind, traj)
        return estimate
    return _sr_estimate(path, traj.delta)


def pooled_initial_estimate(kind: Union[ModelKind, str], trajs: Sequence[KilledTrajectory]) -> Dict[str, float]:
    """Component-wise median of the per-trajectory initial estimates."""
    kind = ModelKind(kind)
    names = param_names(kind)
    estimates = np.array([[initial_estimate(kind, t)[name] for name in names] for t in trajs])
    median = np.median(estimates, axis=0)
    theta = dict(zip(names, median.tolist()))
    if kind == ModelKind.SR:
        theta["mu"] = max(theta["mu"], 0.55 * theta["sigma"] ** 2)
    return theta


# ---------------------------------------------------------------------------
# Coordinates seen by the simplex
# ---------------------------------------------------------------------------

def to_internal(kind: ModelKind, theta: np.ndarray) -> np.ndarray:
    """Natural parameters to simplex coordinates (log sigma, log beta)."""
    u = np.asarray(theta, dtype=float).copy()
    u[-1] = math.log(u[-1])
    if kind != ModelKind.WD:
        u[1] = math.log(u[1]) if u[1] > 0 else settings.LOG_BETA_FLOOR
    return u


def to_natural(kind: ModelKind, u: np.ndarray) -> np.ndarray:
    """Simplex coordinates to natural parameters; log beta at or below the floor maps to beta = 0."""
    theta = np.asarray(u, dtype=float).copy()
    with np.errstate(over="ignore"):
        theta[-1] = np.exp(u[-1])
        if kind != ModelKind.WD:
            theta[1] = 0.0 if u[1] <= settings.LOG_BETA_FLOOR else np.exp(u[1])
    return theta


def initial_simplex(kind: ModelKind, theta0: np.ndarray, opts: FitOptions) -> np.ndarray:
    """Starting vertices: theta0 and one relative displacement per coordinate, in simplex coordinates."""
    theta0 = np.asarray(theta0, dtype=float)
    vertices = [to_internal(kind, theta0)]
    for i, value in enumerate(theta0):
        moved = theta0.copy()
        moved[i] = value * (1.0 + opts.simplex_rel_step) if value != 0 else opts.simplex_zero_step
        vertices.append(to_internal(kind, moved))
    return np.array(vertices)


def _on_boundary(kind: ModelKind, theta: Dict[str, float]) -> bool:
    if kind == ModelKind.WD:
        return False
    if theta["beta"] < settings.BOUNDARY_BETA:
        return True
    return kind == ModelKind.SR and 2.0 * theta["mu"] - theta["sigma"] ** 2 < 1e-6 * theta["sigma"] ** 2


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit(
    kind: Union[ModelKind, str],
    trajs: Sequence[KilledTrajectory],
    objective: Objective = Objective.KILLED,
    method: Optional[CrossingMethod] = None,
    opts: Optional[FitOptions] = None,
    theta0: Optional[Dict[str, float]] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> FitResult:
    """
    Maximize the killed or naive log-likelihood with Nelder-Mead.

    Infeasible or failed evaluations count as +inf, so the simplex retreats
    from them. When the first run exhausts its budget the simplex is rebuilt
    around the incumbent, at most opts.max_restarts times.

    Args:
        kind: Model family
        trajs: One trajectory (per-trajectory MLE) or a group (pooled MLE)
        objective: KILLED or NAIVE
        method: Crossing evaluation choices (killed objective only)
        opts: Simplex options
        theta0: Starting point; defaults to the (pooled) initial estimate
        diagnostics: Optional crossing counters

    Returns:
        FitResult; non-convergence is reported through `converged`
    """
    kind = ModelKind(kind)
    objective = Objective(objective)
    opts = opts or FitOptions()
    trajs = list(trajs)
    if not trajs:
        raise ModelDomainError("fit needs at least one trajectory")
    method = method or CrossingMethod.default_for(kind)
    names = param_names(kind)

    if theta0 is None:
        theta0 = initial_estimate(kind, trajs[0]) if len(trajs) == 1 else pooled_initial_estimate(kind, trajs)
    start = np.array([theta0[name] for name in names], dtype=float)

    def negative_loglik(u: np.ndarray) -> float:
        try:
            model = from_theta(kind, to_natural(kind, u))
        except ModelDomainError:
            return math.inf
        value = loglik_pooled(model, trajs, method, diagnostics, objective)
        return -value.value if value.eval_ok else math.inf

    total_evals = 0
    restarts = 0
    incumbent = start
    while True:
        result = nelder_mead(
            negative_loglik,
            to_internal(kind, incumbent),
            initial_simplex=initial_simplex(kind, incumbent, opts),
            max_evals=opts.max_evals,
            f_rel_tol=opts.f_rel_tol,
            x_tol=opts.x_tol,
        )
        total_evals += result.n_evals
        incumbent = to_natural(kind, result.x)
        if result.converged or restarts >= opts.max_restarts or not np.isfinite(result.fun):
            break
        restarts += 1
        logger.debug(f"🔁 restarting simplex from incumbent after {total_evals} evaluations")

    theta_hat = dict(zip(names, incumbent.tolist()))
    converged = bool(result.converged and np.isfinite(result.fun))
    if not converged:
        logger.debug(f"simplex did not converge for {kind.value} ({objective.value}): {result.message}")
    return FitResult(
        kind=kind,
        theta_hat=theta_hat,
        loglik=-result.fun,
        method=objective,
        converged=converged,
        n_evals=total_evals,
        n_restarts=restarts,
        boundary_flag=_on_boundary(kind, theta_hat),
        n_trajectories=len(trajs),
    )


def _fit_task(task) -> FitResult:
    kind, group, objective, method, opts = task
    return fit(kind, group, objective, method, opts)


def fit_many(
    kind: Union[ModelKind, str],
    groups: Sequence[Sequence[KilledTrajectory]],
    objective: Objective = Objective.KILLED,
    method: Optional[CrossingMethod] = None,
    opts: Optional[FitOptions] = None,
    n_workers: Optional[int] = None,
) -> List[FitResult]:
    """Fit each group independently, in worker processes when n_workers > 1; results keep group order."""
    n_workers = n_workers or settings.N_WORKERS
    tasks = [(ModelKind(kind), list(group), Objective(objective), method, opts) for group in groups]
    if n_workers <= 1 or len(tasks) < 2:
        return [_fit_task(task) for task in tasks]
    chunksize = max(1, len(tasks) // (4 * n_workers))
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_fit_task, tasks, chunksize=chunksize))
