"""
Killed-trajectory simulation
Sub-step simulation with exact or Euler transitions, a Bernoulli bridge
correction for crossings between sub-steps, and thinning to the sampling step
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.signal import lfilter

from config.settings import settings
from ..core.crossing import BridgeMethod, crossing_probability
from ..core.exceptions import DivergenceError, ModelDomainError
from ..core.likelihood import KilledTrajectory
from ..core.models import DiffusionModel, ModelKind, ModelSpec, ThresholdConfig, decay_integral
from ..utils.numerics import keyed_stream

logger = logging.getLogger(__name__)


class Stepper(str, Enum):
    """Transition law used between sub-steps"""
    EXACT = "exact"
    EULER = "euler"


class SimPlan(BaseModel):
    """Everything needed to reproduce a batch of killed trajectories"""
    model: ModelSpec = Field(description="Model and true parameters")
    cfg: ThresholdConfig = Field(description="Starting point, threshold and sampling step")
    substep_divisor: int = Field(default=settings.DEFAULT_SUBSTEP_DIVISOR, ge=1, description="Sub-steps per sampling step")
    n_traj: int = Field(ge=0, description="Number of trajectories")
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0, description="Master seed")
    stepper: Stepper = Field(default=Stepper.EXACT, description="Exact or Euler transitions")
    stream_key: Tuple[int, ...] = Field(default=(), description="Prefix of every trajectory's stream key")
    max_substeps: int = Field(default=settings.MAX_SIM_SUBSTEPS, ge=1, description="Runaway guard per trajectory")

    @model_validator(mode="after")
    def _check_model(self) -> "SimPlan":
        self.cfg.check_for(self.model)
        if not self.model.is_feasible():
            raise ModelDomainError(f"cannot simulate infeasible parameters {self.model.describe()}")
        return self

    @property
    def substep(self) -> float:
        return self.cfg.delta / self.substep_divisor

    @property
    def bridge(self) -> BridgeMethod:
        return BridgeMethod.EXACT_WD if self.model.kind == ModelKind.WD else BridgeMethod.EXPANSION


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------

def step(model: DiffusionModel, x, dt: float, rng: np.random.Generator, stepper: Stepper = Stepper.EXACT) -> np.ndarray:
    """
    One transition of length dt from each state in x.

    Exact draws use the free transition law (normal for WD/OU, scaled
    non-central chi-square for SR); Euler draws reflect SR states at 0 to
    settings.SR_EULER_FLOOR.
    """
    x = np.asarray(x, dtype=float)
    if model.kind == ModelKind.SR:
        model.check_state(x)
        if stepper == Stepper.EXACT:
            c, k, nc = model.chi2_parameters(x, dt)
            return np.maximum(rng.noncentral_chisquare(k, nc) / c, settings.SR_EULER_FLOOR)
        z = rng.standard_normal(x.shape)
        moved = x + model.drift(x) * dt + model.diffusion(x) * np.sqrt(dt) * z
        return np.maximum(np.abs(moved), settings.SR_EULER_FLOOR)

    z = rng.standard_normal(x.shape)
    if stepper == Stepper.EXACT:
        mean, var = model.conditional_moments(x, dt)
        return mean + np.sqrt(var) * z
    return x + model.drift(x) * dt + model.diffusion(x) * np.sqrt(dt) * z


def _linear_block(model: DiffusionModel, x_prev: float, h: float, stepper: Stepper, rng: np.random.Generator, size: int) -> np.ndarray:
    """Block of WD/OU sub-steps as the recursion x_n = a x_{n-1} + m + s z_n."""
    z = rng.standard_normal(size)
    if model.kind == ModelKind.WD:
        return x_prev + np.cumsum(model.mu * h + model.sigma * np.sqrt(h) * z)
    if stepper == Stepper.EXACT:
        a = float(np.exp(-model.beta * h))
        m = model.mu * float(decay_integral(model.beta, h))
        s = model.sigma * np.sqrt(float(decay_integral(2.0 * model.beta, h)))
    else:
        a = 1.0 - model.beta * h
        m = model.mu * h
        s = model.sigma * np.sqrt(h)
    states, _ = lfilter([1.0], [1.0, -a], m + s * z, zi=[a * x_prev])
    return states


def _sr_block(model: DiffusionModel, x_prev: float, h: float, stepper: Stepper, rng: np.random.Generator, size: int) -> np.ndarray:
    states = np.empty(size)
    x = x_prev
    if stepper == Stepper.EXACT:
        c, k, _ = model.chi2_parameters(x_prev, h)
        c = float(c)
        decay = float(np.exp(-model.beta * h))
        for i in range(size):
            x = max(rng.noncentral_chisquare(k, c * x * decay) / c, settings.SR_EULER_FLOOR)
            states[i] = x
        return states
    z = rng.standard_normal(size)
    root_h = np.sqrt(h)
    for i in range(size):
        moved = x + (model.mu - model.beta * x) * h + model.sigma * np.sqrt(x) * root_h * z[i]
        x = max(abs(moved), settings.SR_EULER_FLOOR)
        states[i] = x
    return states


# ---------------------------------------------------------------------------
# Killed trajectories
# ---------------------------------------------------------------------------

def simulate_trajectory(plan: SimPlan, index: int) -> KilledTrajectory:
    """
    Simulate trajectory `index` of the plan from its own keyed stream.

    Each block of sub-steps draws its transitions, then one uniform per
    sub-step; a sub-step interval is a crossing when its end state is at
    or above b or its uniform falls below the bridge-crossing probability.
    Only sampling-grid states strictly before the crossing interval are kept.

    Raises:
        DivergenceError: If no crossing happens within plan.max_substeps
    """
    rng = keyed_stream(plan.seed, *plan.stream_key, index)
    model, cfg = plan.model, plan.cfg
    h, divisor, b = plan.substep, plan.substep_divisor, cfg.b
    block_size = min(256, settings.SIM_BLOCK_SIZE)
    make_block = _sr_block if model.kind == ModelKind.SR else _linear_block

    obs: List[float] = []
    x_prev = cfg.x0
    done = 0
    while True:
        states = make_block(model, x_prev, h, plan.stepper, rng, block_size)
        uniforms = rng.random(block_size)
        previous = np.concatenate(([x_prev], states[:-1]))

        crossed = states >= b
        below = ~crossed & (previous < b)
        if np.any(below):
            p = crossing_probability(model, previous[below], states[below], b, h, plan.bridge)
            crossed[below] = uniforms[below] < p

        hits = np.flatnonzero(crossed)
        end = hits[0] if hits.size else block_size
        # State i of the block has global index done + i + 1; the grid state
        # closing the crossing interval is already killed
        grid = np.flatnonzero((done + np.arange(1, end + 1)) % divisor == 0)
        obs.extend(states[grid].tolist())

        if hits.size:
            return KilledTrajectory(x0=cfg.x0, delta=cfg.delta, b=b, obs=obs, crossed=True, traj_id=str(index))
        done += block_size
        x_prev = float(states[-1])
        block_size = min(2 * block_size, settings.SIM_BLOCK_SIZE)
        if done >= plan.max_substeps:
            raise DivergenceError(
                f"trajectory {index} did not reach b={b} within {plan.max_substeps} sub-steps ({model.describe()})"
            )


def _simulate_range(plans: Sequence[SimPlan], start: int, stop: int) -> List[KilledTrajectory]:
    return [simulate_trajectory(plans[i % len(plans)], i) for i in range(start, stop)]


def simulate_killed(plan: SimPlan, n_workers: Optional[int] = None) -> List[KilledTrajectory]:
    """
    Simulate plan.n_traj killed trajectories.

    Trajectory i depends only on (plan.seed, plan.stream_key, i), so the
    output is identical for any number of workers.

    Args:
        plan: Simulation plan
        n_workers: Worker processes (defaults to settings.N_WORKERS)

    Returns:
        Trajectories in index order
    """
    return simulate_design(plan, [plan.cfg], plan.n_traj, n_workers)


def simulate_design(
    plan: SimPlan,
    cfgs: Sequence[ThresholdConfig],
    n_rep: int,
    n_workers: Optional[int] = None,
) -> List[KilledTrajectory]:
    """
    Simulate n_rep replicates of a design of len(cfgs) trajectories.

    Trajectory j of replicate i starts and is killed as cfgs[j] says and uses
    stream index i * len(cfgs) + j. A design whose only configuration is
    plan.cfg gives exactly simulate_killed's output.

    Args:
        plan: Model, seed, stream key and simulation settings (plan.cfg and plan.n_traj are ignored)
        cfgs: Threshold configuration of each position in the design
        n_rep: Number of replicates
        n_workers: Worker processes (defaults to settings.N_WORKERS)

    Returns:
        n_rep * len(cfgs) trajectories, replicate by replicate
    """
    if not cfgs:
        raise ValueError("a simulation design needs at least one threshold configuration")
    for cfg in cfgs:
        cfg.check_for(plan.model)
    total = n_rep * len(cfgs)
    plans = [plan.model_copy(update={"cfg": cfg, "n_traj": total}) for cfg in cfgs]
    n_workers = n_workers or settings.N_WORKERS
    logger.info(f"🎲 simulating {total} trajectories of {plan.model.describe()} "
                f"({len(cfgs)} configuration(s), divisor={plan.substep_divisor}, {plan.stepper.value})")
    if n_workers <= 1 or total < 2 * n_workers:
        return _simulate_range(plans, 0, total)

    bounds = np.linspace(0, total, n_workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(_simulate_range, plans, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        trajectories: List[KilledTrajectory] = []
        for future in futures:
            trajectories.extend(future.result())
    return trajectories
