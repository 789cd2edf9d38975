"""
Diffusion models
Wiener with drift (WD), Ornstein-Uhlenbeck (OU) and square-root (SR) models:
drift and diffusion functions, free transition laws, the lambda function used
by the bridge-crossing expansion, feasibility and mean first-passage times
"""

import logging
import math
from enum import Enum
from typing import ClassVar, Dict, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator
from scipy import integrate, special
from typing_extensions import Annotated

from config.settings import settings
from .exceptions import DivergenceError, ModelDomainError
from ..utils.numerics import ncx2_logpdf, ncx2_sf, normal_logpdf, normal_sf

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    """Supported diffusion families"""
    WD = "WD"
    OU = "OU"
    SR = "SR"


class ThresholdConfig(BaseModel):
    """Threshold level, starting point and sampling step of a killed process"""
    model_config = ConfigDict(frozen=True)

    b: float = Field(description="Threshold level (same units as the state)")
    x0: float = Field(description="Initial state, strictly below b")
    delta: float = Field(gt=0, description="Sampling step (time units)")

    @model_validator(mode="after")
    def _check_order(self) -> "ThresholdConfig":
        if not self.x0 < self.b:
            raise ValueError(f"x0 ({self.x0}) must lie below the threshold b ({self.b})")
        return self

    def check_for(self, model: "DiffusionModel") -> None:
        """Raise ModelDomainError if the configuration lies outside the model's state space."""
        if model.kind == ModelKind.SR and (self.x0 <= 0 or self.b <= 0):
            raise ModelDomainError(f"SR model needs x0 > 0 and b > 0, got x0={self.x0}, b={self.b}")


def decay_integral(beta, t):
    """(1 - exp(-beta t)) / beta, equal to t at beta = 0."""
    beta = np.asarray(beta, dtype=float)
    safe = np.where(beta > 0, beta, 1.0)
    return np.where(beta > 0, -np.expm1(-beta * t) / safe, t)


class DiffusionModel(BaseModel):
    """Common interface of the diffusion families"""
    model_config = ConfigDict(frozen=True)

    PARAM_NAMES: ClassVar[Tuple[str, ...]] = ()

    @property
    def theta(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in self.PARAM_NAMES}

    def theta_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.PARAM_NAMES], dtype=float)

    def is_feasible(self) -> bool:
        return True

    def check_state(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def describe(self) -> str:
        params = ", ".join(f"{k}={v:.6g}" for k, v in self.theta.items())
        return f"{self.kind}({params})"

    # --- transition laws -------------------------------------------------

    def conditional_moments(self, x, dt) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def free_logdensity(self, y, dt, x) -> np.ndarray:
        mean, var = self.conditional_moments(x, dt)
        return normal_logpdf(y, mean, var)

    def free_density(self, y, dt, x) -> np.ndarray:
        """Free (unconstrained) transition density f(y, dt | x)."""
        return np.exp(self.free_logdensity(y, dt, x))

    def free_cdf_above(self, b, dt, x) -> np.ndarray:
        """P(X_dt > b | X_0 = x) under the free law."""
        mean, var = self.conditional_moments(x, dt)
        return normal_sf((np.asarray(b, dtype=float) - mean) / np.sqrt(var))


class WDModel(DiffusionModel):
    """Wiener process with drift: dX = mu dt + sigma dW"""
    kind: Literal["WD"] = "WD"
    mu: float = Field(allow_inf_nan=False, description="Drift per unit time")
    sigma: float = Field(gt=0, allow_inf_nan=False, description="Diffusion scale")

    PARAM_NAMES: ClassVar[Tuple[str, ...]] = ("mu", "sigma")

    def drift(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.mu)

    def diffusion(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)

    def diffusion_prime(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def lambda_fn(self, y):
        return np.full_like(np.asarray(y, dtype=float), (self.mu / self.sigma) ** 2)

    def scale_antiderivative(self, z):
        """Antiderivative of 1/sigma(z)."""
        return np.asarray(z, dtype=float) / self.sigma

    def lambda_antiderivative(self, z):
        """Antiderivative of lambda(z)/sigma(z)."""
        return (self.mu / self.sigma) ** 2 * np.asarray(z, dtype=float) / self.sigma

    def conditional_moments(self, x, dt):
        x = np.asarray(x, dtype=float)
        return x + self.mu * dt, np.full_like(x, self.sigma ** 2) * dt

    def mean_fpt(self, cfg: ThresholdConfig) -> float:
        if self.mu <= 0:
            raise DivergenceError(f"mean first-passage time is infinite for WD with mu={self.mu}")
        return (cfg.b - cfg.x0) / self.mu


class OUModel(DiffusionModel):
    """Ornstein-Uhlenbeck process: dX = (-beta X + mu) dt + sigma dW"""
    kind: Literal["OU"] = "OU"
    mu: float = Field(allow_inf_nan=False, description="Input level per unit time")
    beta: float = Field(ge=0, allow_inf_nan=False, description="Inverse time constant")
    sigma: float = Field(gt=0, allow_inf_nan=False, description="Diffusion scale")

    PARAM_NAMES: ClassVar[Tuple[str, ...]] = ("mu", "beta", "sigma")

    def drift(self, x):
        return -self.beta * np.asarray(x, dtype=float) + self.mu

    def diffusion(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)

    def diffusion_prime(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def lambda_fn(self, y):
        y = np.asarray(y, dtype=float)
        return -self.beta + (self.mu - self.beta * y) ** 2 / self.sigma ** 2

    def scale_antiderivative(self, z):
        return np.asarray(z, dtype=float) / self.sigma

    def lambda_antiderivative(self, z):
        # Expanded so that beta = 0 needs no special case
        z = np.asarray(z, dtype=float)
        mu, beta, s2 = self.mu, self.beta, self.sigma ** 2
        cubic = mu ** 2 * z - mu * beta * z ** 2 + beta ** 2 * z ** 3 / 3.0
        return (-beta * z + cubic / s2) / self.sigma

    def conditional_moments(self, x, dt):
        x = np.asarray(x, dtype=float)
        mean = x * np.exp(-self.beta * dt) + self.mu * decay_integral(self.beta, dt)
        var = self.sigma ** 2 * decay_integral(2.0 * self.beta, dt)
        return mean, np.broadcast_to(var, mean.shape)

    def mean_fpt(self, cfg: ThresholdConfig) -> float:
        if self.beta == 0:
            return WDModel(mu=self.mu, sigma=self.sigma).mean_fpt(cfg)
        beta, sigma = self.beta, self.sigma
        centre = self.mu / beta
        scale = math.sqrt(math.pi / beta) / sigma

        def integrand(z: float) -> float:
            return scale * special.erfcx(-(z - centre) * math.sqrt(beta) / sigma)

        return _quad_mean_fpt(integrand, cfg)


class SRModel(DiffusionModel):
    """Square-root (Feller) process: dX = (-beta X + mu) dt + sigma sqrt(X) dW"""
    kind: Literal["SR"] = "SR"
    mu: float = Field(allow_inf_nan=False, description="Input level per unit time")
    beta: float = Field(ge=0, allow_inf_nan=False, description="Inverse time constant")
    sigma: float = Field(gt=0, allow_inf_nan=False, description="Diffusion scale")

    PARAM_NAMES: ClassVar[Tuple[str, ...]] = ("mu", "beta", "sigma")

    def is_feasible(self) -> bool:
        """Entrance boundary at 0 requires 2 mu >= sigma^2."""
        return 2.0 * self.mu >= self.sigma ** 2

    def check_state(self, x, strict: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        bad = x <= 0 if strict else x < 0
        if np.any(bad):
            raise ModelDomainError(f"SR state must be {'positive' if strict else 'nonnegative'}, got {x[bad].min()}")
        return x

    def drift(self, x):
        return -self.beta * self.check_state(x) + self.mu

    def diffusion(self, x):
        return self.sigma * np.sqrt(self.check_state(x))

    def diffusion_prime(self, x):
        return self.sigma / (2.0 * np.sqrt(self.check_state(x, strict=True)))

    def lambda_coefficients(self) -> Tuple[float, float, float]:
        """Coefficients (c_m1, c_0, c_1) of lambda(y) = c_m1 / y + c_0 + c_1 y."""
        mu, beta, s2 = self.mu, self.beta, self.sigma ** 2
        shifted = mu - s2 / 4.0
        c_m1 = (mu ** 2 - mu * s2 + 3.0 * s2 ** 2 / 16.0) / s2
        c_0 = -beta / 2.0 - 2.0 * shifted * beta / s2
        c_1 = beta ** 2 / s2
        return c_m1, c_0, c_1

    def lambda_fn(self, y):
        y = self.check_state(y, strict=True)
        c_m1, c_0, c_1 = self.lambda_coefficients()
        return c_m1 / y + c_0 + c_1 * y

    def scale_antiderivative(self, z):
        return 2.0 * np.sqrt(self.check_state(z)) / self.sigma

    def lambda_antiderivative(self, z):
        root = np.sqrt(self.check_state(z, strict=True))
        c_m1, c_0, c_1 = self.lambda_coefficients()
        return (-2.0 * c_m1 / root + 2.0 * c_0 * root + 2.0 / 3.0 * c_1 * root ** 3) / self.sigma

    def degrees_of_freedom(self) -> float:
        return 4.0 * self.mu / self.sigma ** 2

    def chi2_parameters(self, x, dt) -> Tuple[np.ndarray, float, np.ndarray]:
        """Scale c, degrees of freedom k and non-centrality of the transition from x over dt."""
        x = np.asarray(x, dtype=float)
        c = 4.0 / (self.sigma ** 2 * decay_integral(self.beta, dt))
        nc = c * x * np.exp(-self.beta * dt)
        return c, self.degrees_of_freedom(), nc

    def conditional_moments(self, x, dt):
        x = self.check_state(x)
        g = decay_integral(self.beta, dt)
        decay = np.exp(-self.beta * dt)
        mean = x * decay + self.mu * g
        var = self.sigma ** 2 * (x * decay * g + 0.5 * self.mu * g ** 2)
        return mean, var

    def free_logdensity(self, y, dt, x):
        c, k, nc = self.chi2_parameters(x, dt)
        y = np.asarray(y, dtype=float)
        return np.log(c) + ncx2_logpdf(c * y, k, nc)

    def free_cdf_above(self, b, dt, x):
        c, k, nc = self.chi2_parameters(x, dt)
        return ncx2_sf(c * np.asarray(b, dtype=float), k, nc)

    def mean_fpt(self, cfg: ThresholdConfig) -> float:
        cfg.check_for(self)
        if self.beta == 0:
            return WDModel(mu=self.mu, sigma=self.sigma).mean_fpt(cfg)
        s2 = self.sigma ** 2
        a = 2.0 * self.mu / s2
        c = 2.0 * self.beta / s2
        log_front = math.log(2.0 / s2) + special.gammaln(a)

        def integrand(z: float) -> float:
            cz = c * z
            return math.exp(log_front + math.log(special.gammainc(a, cz)) - a * math.log(cz) + cz)

        return _quad_mean_fpt(integrand, cfg)


def _quad_mean_fpt(integrand, cfg: ThresholdConfig) -> float:
    value, abserr = integrate.quad(integrand, cfg.x0, cfg.b, epsrel=settings.MEAN_FPT_REL_TOL, limit=200)
    if not np.isfinite(value) or abserr > 1e-6 * max(1.0, abs(value)):
        raise DivergenceError(f"mean first-passage quadrature did not converge (value={value}, error={abserr})")
    return float(value)


ModelSpec = Annotated[Union[WDModel, OUModel, SRModel], Field(discriminator="kind")]
_MODEL_ADAPTER = TypeAdapter(ModelSpec)

MODEL_CLASSES = {ModelKind.WD: WDModel, ModelKind.OU: OUModel, ModelKind.SR: SRModel}


def param_names(kind: Union[ModelKind, str]) -> Tuple[str, ...]:
    """Parameter names of a model family, in vector order."""
    return MODEL_CLASSES[ModelKind(kind)].PARAM_NAMES


def from_theta(kind: Union[ModelKind, str], theta) -> DiffusionModel:
    """
    Build a model from a parameter mapping or a vector in PARAM_NAMES order.

    Raises:
        ModelDomainError: If a parameter violates the family's constraints
    """
    kind = ModelKind(kind)
    if not isinstance(theta, dict):
        theta = dict(zip(param_names(kind), np.asarray(theta, dtype=float).tolist()))
    try:
        return _MODEL_ADAPTER.validate_python({"kind": kind.value, **theta})
    except ValueError as e:
        raise ModelDomainError(f"invalid {kind.value} parameters {theta}: {e}") from e
