"""
Run configuration
Versioned JSON document describing a simulation, estimation, bootstrap or study run
"""

import logging
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.cases import ParameterCase, get_case
from config.settings import settings
from ..core.crossing import CrossingMethod
from ..core.estimate import FitOptions
from ..core.exceptions import ConfigError
from ..core.likelihood import Objective
from ..core.models import DiffusionModel, ModelKind, ThresholdConfig, from_theta
from ..simulation.simulate import SimPlan, Stepper
from .recording import ThresholdRule
from .trajectory_io import TrajectorySchema

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    kind: ModelKind
    theta: Optional[Dict[str, float]] = Field(default=None, description="True parameters for simulation")


class ThresholdSection(_Section):
    x0: float
    b: float
    delta: float = Field(gt=0)


class SimulationSection(_Section):
    substep_divisor: int = Field(default=settings.DEFAULT_SUBSTEP_DIVISOR, ge=1)
    n_traj: int = Field(default=100, ge=0)
    stepper: Stepper = Stepper.EXACT


class CrossingSection(CrossingMethod):
    model_config = ConfigDict(extra="forbid")


class FitSection(FitOptions):
    model_config = ConfigDict(extra="forbid")


class StudySection(_Section):
    n_total: int = Field(default=settings.DESK_REPLICATES, ge=1)
    group_sizes: List[int] = Field(default_factory=lambda: list(settings.DEFAULT_GROUP_SIZES))
    objectives: List[Objective] = Field(default_factory=lambda: [Objective.KILLED, Objective.NAIVE])


class BootstrapSection(_Section):
    n_boot: int = Field(default=300, ge=1)
    n_outer: int = Field(default=300, ge=1)
    group_size: int = Field(default=1, ge=1)


class DataSection(TrajectorySchema):
    model_config = ConfigDict(extra="forbid")


class SegmentSection(_Section):
    delta: float = Field(gt=0)
    offset: float = 0.0
    start_level: float
    spike_level: float
    threshold: ThresholdRule


class OutputSection(_Section):
    dir: str = Field(default=settings.OUTPUT_DIR)
    prefix: str = Field(default="run")


class RunConfig(_Section):
    """
    Top-level run document. Unknown keys are rejected at every level.

    A registered case fills model and threshold; explicit model or threshold
    sections override it.
    """
    version: Literal[1] = CONFIG_VERSION
    case: Optional[str] = None
    model: Optional[ModelSection] = None
    threshold: Optional[ThresholdSection] = None
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    crossing: Optional[CrossingSection] = None
    fit: FitSection = Field(default_factory=FitSection)
    study: StudySection = Field(default_factory=StudySection)
    bootstrap: BootstrapSection = Field(default_factory=BootstrapSection)
    data: Optional[DataSection] = None
    segment: Optional[SegmentSection] = None
    output: OutputSection = Field(default_factory=OutputSection)
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)
    n_workers: int = Field(default=settings.N_WORKERS, ge=1)

    def registered_case(self) -> Optional[ParameterCase]:
        if self.case is None:
            return None
        try:
            return get_case(self.case)
        except KeyError as e:
            raise ConfigError(str(e)) from e

    def model_kind(self) -> ModelKind:
        if self.model is not None:
            return self.model.kind
        case = self.registered_case()
        if case is None:
            raise ConfigError("no model kind: set 'model.kind' or 'case'")
        return ModelKind(case.kind)

    def resolve_model(self) -> DiffusionModel:
        """Model with its true parameters, from the model section or the case."""
        case = self.registered_case()
        theta = self.model.theta if self.model is not None and self.model.theta is not None else None
        if theta is None and case is not None and ModelKind(case.kind) == self.model_kind():
            theta = case.theta
        if theta is None:
            raise ConfigError("no parameters: set 'model.theta' or 'case'")
        return from_theta(self.model_kind(), theta)

    def resolve_threshold(self) -> ThresholdConfig:
        if self.threshold is not None:
            return ThresholdConfig(**self.threshold.model_dump())
        case = self.registered_case()
        if case is None:
            raise ConfigError("no threshold: set 'threshold' or 'case'")
        return ThresholdConfig(b=case.b, x0=case.x0, delta=case.delta)

    def crossing_method(self) -> CrossingMethod:
        if self.crossing is None:
            return CrossingMethod.default_for(self.model_kind())
        return CrossingMethod(**self.crossing.model_dump())

    def fit_options(self) -> FitOptions:
        return FitOptions(**self.fit.model_dump())

    def sim_plan(self, n_traj: Optional[int] = None) -> SimPlan:
        return SimPlan(
            model=self.resolve_model(),
            cfg=self.resolve_threshold(),
            substep_divisor=self.simulation.substep_divisor,
            n_traj=self.simulation.n_traj if n_traj is None else n_traj,
            seed=self.seed,
            stepper=self.simulation.stepper,
        )

    def trajectory_schema(self) -> TrajectorySchema:
        """Data section, or one derived from the threshold when absent."""
        if self.data is not None:
            return TrajectorySchema(**self.data.model_dump())
        cfg = self.resolve_threshold()
        return TrajectorySchema(delta=cfg.delta, b=cfg.b, x0=cfg.x0)


def load_run_config(path: str) -> RunConfig:
    """
    Read and validate a run configuration file.

    Raises:
        ConfigError: Unreadable file or schema violation
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        config = RunConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}") from e
    logger.info(f"⚙️ loaded config {path} (version {config.version})")
    return config
