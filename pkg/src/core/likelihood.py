"""
Killed-process likelihood
Killed transition density, per-trajectory killed and naive log-likelihoods,
the pooled likelihood over many trajectories, and numerical scores
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from config.settings import settings
from .crossing import CrossingDiagnostics, CrossingMethod, crossing_probability, g_prob
from .exceptions import ModelDomainError, NumericalFailure
from .models import DiffusionModel, ModelKind, ThresholdConfig, from_theta

logger = logging.getLogger(__name__)

LOG_PROB_FLOOR = math.log(settings.PROB_FLOOR)

# Absorbing state reached at the crossing
COFFIN = "coffin"


class Objective(str, Enum):
    """Likelihood maximized by a fit"""
    KILLED = "killed"
    NAIVE = "naive"


class KilledTrajectory(BaseModel):
    """One sequentially observed path, killed at its first threshold crossing"""
    x0: float = Field(description="Initial state")
    delta: float = Field(gt=0, description="Sampling step")
    b: float = Field(description="Threshold of this trajectory")
    obs: List[float] = Field(default_factory=list, description="Sub-threshold observations x_1 ... x_{N-1}")
    crossed: bool = Field(default=True, description="Whether the crossing was observed after the last observation")
    traj_id: Optional[str] = Field(default=None, description="Identifier carried through input/output")

    @model_validator(mode="after")
    def _check_below_threshold(self) -> "KilledTrajectory":
        if not self.x0 < self.b:
            raise ValueError(f"x0 ({self.x0}) must lie below b ({self.b})")
        above = [i for i, v in enumerate(self.obs, start=1) if not v < self.b]
        if above:
            raise ValueError(f"observation {above[0]} ({self.obs[above[0] - 1]}) is not below b ({self.b})")
        return self

    @property
    def n_steps(self) -> int:
        """N, the number of sampling steps up to and including the crossing."""
        return len(self.obs) + 1

    @property
    def threshold(self) -> ThresholdConfig:
        return ThresholdConfig(b=self.b, x0=self.x0, delta=self.delta)

    def path(self) -> np.ndarray:
        """States x_0, x_1, ..., x_{N-1} as an array."""
        return np.asarray([self.x0, *self.obs], dtype=float)


@dataclass(frozen=True)
class LogLik:
    """Log-likelihood value with an evaluation flag; -inf marks a failed or infeasible evaluation"""
    value: float
    eval_ok: bool

    @classmethod
    def failed(cls) -> "LogLik":
        return cls(-math.inf, False)


def _check_trajectory(model: DiffusionModel, traj: KilledTrajectory) -> None:
    if model.kind == ModelKind.SR:
        path = traj.path()
        if np.any(path <= 0):
            raise ModelDomainError(f"SR trajectory {traj.traj_id} has nonpositive states")
        if traj.b <= 0:
            raise ModelDomainError("SR threshold must be positive")


# ---------------------------------------------------------------------------
# Killed transition density
# ---------------------------------------------------------------------------

def log_fb_vector(
    model: DiffusionModel,
    y: np.ndarray,
    x: np.ndarray,
    b: float,
    delta: float,
    method: CrossingMethod,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> np.ndarray:
    """Elementwise log f^b(y, delta | x) = log f(y, delta | x) + log(1 - P(T_b < delta | x, y))."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.full(np.broadcast(x, y).shape, -np.inf)
    inside = (y < b) & (x < b)
    if np.any(inside):
        xi, yi = np.broadcast_arrays(x, y)
        xi, yi = xi[inside], yi[inside]
        log_free = model.free_logdensity(yi, delta, xi)
        p = crossing_probability(model, xi, yi, b, delta, method.bridge, diagnostics)
        with np.errstate(divide="ignore"):
            out[inside] = log_free + np.log1p(-p)
    return out


def fb_density_vector(model, y, x, b, delta, method: CrossingMethod, diagnostics=None) -> np.ndarray:
    """Elementwise killed sub-density f^b(y, delta | x); zero at or above b."""
    return np.exp(log_fb_vector(model, y, x, b, delta, method, diagnostics))


def fb_density(
    model: DiffusionModel,
    y: float,
    x: float,
    cfg: ThresholdConfig,
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> float:
    """
    Killed transition sub-density f^b(y, delta | x).

    Returns NaN when the free density could not be evaluated.
    """
    method = method or CrossingMethod.default_for(model.kind)
    method.check_for(model)
    return float(fb_density_vector(model, np.array([y]), np.array([x]), cfg.b, cfg.delta, method, diagnostics)[0])


def killed_transition_logdensity(
    model: DiffusionModel,
    y: Union[float, str],
    x: Union[float, str],
    cfg: ThresholdConfig,
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> float:
    """
    Log transition density of the killed chain on the sub-threshold states plus COFFIN.

    Moves between sub-threshold states have density f^b, a move into COFFIN
    has mass G(delta | x), and COFFIN is absorbing.
    """
    method = method or CrossingMethod.default_for(model.kind)
    if x == COFFIN:
        return 0.0 if y == COFFIN else -math.inf
    if y == COFFIN:
        g = g_prob(model, float(x), cfg, method, diagnostics)
        return math.log(g) if np.isfinite(g) and g > 0 else -math.inf
    return float(log_fb_vector(model, np.array([float(y)]), np.array([float(x)]), cfg.b, cfg.delta, method, diagnostics)[0])


# ---------------------------------------------------------------------------
# Log-likelihoods
# ---------------------------------------------------------------------------

def loglik_killed(
    model: DiffusionModel,
    traj: KilledTrajectory,
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> LogLik:
    """
    Sequential log-likelihood of one killed trajectory.

    Sum of log f^b over consecutive observations starting from x0, plus
    log G at the last sub-threshold state when the crossing was observed.
    Any factor below settings.PROB_FLOOR, or any failed evaluation, gives
    LogLik(-inf, eval_ok=False).
    """
    if not model.is_feasible():
        return LogLik.failed()
    method = method or CrossingMethod.default_for(model.kind)
    method.check_for(model)
    _check_trajectory(model, traj)

    path = traj.path()
    total = 0.0
    try:
        if path.size > 1:
            x, y = path[:-1], path[1:]
            log_free = model.free_logdensity(y, traj.delta, x)
            if not np.all(log_free >= LOG_PROB_FLOOR):
                return LogLik.failed()
            p = crossing_probability(model, x, y, traj.b, traj.delta, method.bridge, diagnostics)
            survive = 1.0 - p
            if not np.all(survive >= settings.PROB_FLOOR):
                return LogLik.failed()
            total = float(np.sum(log_free) + np.sum(np.log1p(-p)))
        if traj.crossed:
            g = g_prob(model, path[-1], traj.threshold, method, diagnostics)
            if not (g >= settings.PROB_FLOOR):
                return LogLik.failed()
            total += math.log(g)
    except NumericalFailure as e:
        logger.debug(f"killed log-likelihood evaluation failed at {model.describe()}: {e}")
        return LogLik.failed()
    return LogLik(total, True)


def loglik_killed_chain(
    model: DiffusionModel,
    traj: KilledTrajectory,
    method: Optional[CrossingMethod] = None,
) -> LogLik:
    """
    Killed log-likelihood accumulated one transition at a time along the
    killed chain x_0 -> ... -> x_{N-1} -> COFFIN.
    """
    if not model.is_feasible():
        return LogLik.failed()
    method = method or CrossingMethod.default_for(model.kind)
    states: List[Union[float, str]] = list(traj.path())
    if traj.crossed:
        states.append(COFFIN)
    cfg = traj.threshold
    total = 0.0
    try:
        for x, y in zip(states[:-1], states[1:]):
            term = killed_transition_logdensity(model, y, x, cfg, method)
            if not (term >= LOG_PROB_FLOOR):
                return LogLik.failed()
            total += term
    except NumericalFailure:
        return LogLik.failed()
    return LogLik(total, True)


def loglik_naive(model: DiffusionModel, traj: KilledTrajectory) -> LogLik:
    """Sum of free log transition densities, ignoring the threshold."""
    if not model.is_feasible():
        return LogLik.failed()
    _check_trajectory(model, traj)
    path = traj.path()
    if path.size < 2:
        return LogLik(0.0, True)
    log_free = model.free_logdensity(path[1:], traj.delta, path[:-1])
    if not np.all(log_free >= LOG_PROB_FLOOR):
        return LogLik.failed()
    return LogLik(float(np.sum(log_free)), True)


def loglik(
    model: DiffusionModel,
    traj: KilledTrajectory,
    objective: Objective = Objective.KILLED,
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> LogLik:
    """Per-trajectory log-likelihood for the chosen objective."""
    if Objective(objective) == Objective.NAIVE:
        return loglik_naive(model, traj)
    return loglik_killed(model, traj, method, diagnostics)


def loglik_pooled(
    model: DiffusionModel,
    trajs: Sequence[KilledTrajectory],
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
    objective: Objective = Objective.KILLED,
) -> LogLik:
    """
    Global log-likelihood: the sum of per-trajectory log-likelihoods in input order.

    Returns LogLik(-inf, False) as soon as one component fails.
    """
    total = 0.0
    for traj in trajs:
        term = loglik(model, traj, objective, method, diagnostics)
        if not term.eval_ok:
            return LogLik.failed()
        total += term.value
    return LogLik(total, True)


# ---------------------------------------------------------------------------
# Numerical scores
# ---------------------------------------------------------------------------

def per_trajectory_scores(
    model: DiffusionModel,
    trajs: Sequence[KilledTrajectory],
    method: Optional[CrossingMethod] = None,
    objective: Objective = Objective.KILLED,
) -> np.ndarray:
    """
    Central-difference scores of each trajectory's log-likelihood.

    Step h_i = settings.SCORE_REL_STEP * max(1, |theta_i|) per coordinate.

    Returns:
        Array of shape (len(trajs), n_params)

    Raises:
        NumericalFailure: If any perturbed evaluation fails
    """
    theta = model.theta_vector()
    scores = np.empty((len(trajs), theta.size))
    for i, value in enumerate(theta):
        h = settings.SCORE_REL_STEP * max(1.0, abs(value))
        values = []
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[i] += sign * h
            perturbed = from_theta(model.kind, shifted)
            column = []
            for traj in trajs:
                term = loglik(perturbed, traj, objective, method)
                if not term.eval_ok:
                    raise NumericalFailure(
                        f"score evaluation failed at {perturbed.describe()} for trajectory {traj.traj_id}"
                    )
                column.append(term.value)
            values.append(np.asarray(column))
        scores[:, i] = (values[0] - values[1]) / (2.0 * h)
    return scores


def score_numeric(
    model: DiffusionModel,
    trajs: Sequence[KilledTrajectory],
    method: Optional[CrossingMethod] = None,
    objective: Objective = Objective.KILLED,
) -> np.ndarray:
    """Numerical score of the pooled log-likelihood."""
    return per_trajectory_scores(model, trajs, method, objective).sum(axis=0)


def sample_information(scores: np.ndarray) -> np.ndarray:
    """Average outer product of per-trajectory scores (symmetric, positive semidefinite)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    info = scores.T @ scores / scores.shape[0]
    return 0.5 * (info + info.T)
