"""
Threshold crossing probabilities
Bridge-crossing probability between two sub-threshold observations and the
one-step first-passage probability G(delta | x): exact for the Wiener model,
small-step expansions for the OU and SR models
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy import special

from config.settings import settings
from .exceptions import DivergenceError, ModelDomainError
from .models import DiffusionModel, ModelKind, SRModel, ThresholdConfig, WDModel
from ..utils.numerics import QuadratureSpec, adaptive_quad, normal_logpdf

logger = logging.getLogger(__name__)


class BridgeMethod(str, Enum):
    """How P(T_b < delta | x, y) is evaluated"""
    EXACT_WD = "exact_wd"
    EXPANSION = "expansion"


class GMethod(str, Enum):
    """How the one-step first-passage probability G(delta | x) is evaluated"""
    EXACT_WD = "exact_wd"
    PSI_APPROX = "psi_approx"
    DENSITY_INTEGRAL = "density_integral"
    GAUSSIAN_CLOSED_FORM = "gaussian_closed_form"


class PsiCoefficient(str, Enum):
    """Coefficient multiplying the time-integrated density in the PSI_APPROX formula"""
    PRINTED = "printed"                       # mu(b) - sigma'(b) / 4
    SQUARED_DIFFUSION = "squared_diffusion"   # mu(b) - (sigma^2)'(b) / 4


class CrossingMethod(BaseModel):
    """Bridge and first-passage evaluation choices used by the likelihood"""
    bridge: BridgeMethod = Field(default=BridgeMethod.EXPANSION, description="Bridge-crossing evaluation")
    g_method: GMethod = Field(default=GMethod.PSI_APPROX, description="First-passage probability evaluation")
    psi_coefficient: PsiCoefficient = Field(default=PsiCoefficient.PRINTED, description="PSI_APPROX coefficient form")

    @classmethod
    def default_for(cls, kind) -> "CrossingMethod":
        """Exact formulas for WD, expansions otherwise."""
        if ModelKind(kind) == ModelKind.WD:
            return cls(bridge=BridgeMethod.EXACT_WD, g_method=GMethod.EXACT_WD)
        return cls()

    def check_for(self, model: DiffusionModel) -> None:
        exact = {BridgeMethod.EXACT_WD, GMethod.EXACT_WD}
        if model.kind != ModelKind.WD and (self.bridge in exact or self.g_method in exact):
            raise ModelDomainError(f"exact WD formulas requested for a {model.kind} model")
        if model.kind == ModelKind.SR and self.g_method == GMethod.GAUSSIAN_CLOSED_FORM:
            raise ModelDomainError("GAUSSIAN_CLOSED_FORM needs a constant diffusion coefficient")


@dataclass
class CrossingDiagnostics:
    """Counters owned by the caller; clamped probabilities never raise"""
    n_bridge_evals: int = 0
    n_bridge_clamped: int = 0
    n_g_evals: int = 0
    n_g_clamped: int = 0
    n_g_negative: int = 0

    def merge(self, other: "CrossingDiagnostics") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


# ---------------------------------------------------------------------------
# phi_b
# ---------------------------------------------------------------------------

def _near_diagonal(x, y):
    return np.abs(x - y) < settings.PHI_BRANCH_TOL * np.maximum(1.0, np.abs(x))


def _phi_b_sr(model: SRModel, x, y, b):
    c_m1, _, c_1 = model.lambda_coefficients()
    mu, beta, s2 = model.mu, model.beta, model.sigma ** 2
    rx, ry, rb = np.sqrt(x), np.sqrt(y), math.sqrt(b)
    k = 3.0 * mu ** 2 - 3.0 * s2 * mu + 9.0 / 16.0 * s2 ** 2
    b2 = beta ** 2

    near = _near_diagonal(x, y)
    numerator = -(
        rx * (b - y) * (y * b2 * b + k)
        - ry * (b - x) * (x * b2 * b + k)
        - rb * (x - y) * (x * y * b2 + k)
    )
    denominator = 3.0 * s2 * np.sqrt(x * y * b) * (rx - ry) * (-2.0 * rb + rx + ry)
    off_diagonal = numerator / np.where(near, 1.0, denominator)

    # y = x limit of the same expression
    diagonal = c_m1 * (rb - rx) / (2.0 * x * rb) - c_1 * (rb - rx) * (rb + 2.0 * rx) / 6.0
    return np.where(near, diagonal, off_diagonal)


def phi_b(model: DiffusionModel, x, y, b: float):
    """
    First-order correction phi_b(x, y) of the bridge-crossing expansion.

    WD has constant lambda, so phi_b vanishes; OU and SR use closed forms.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.kind == ModelKind.WD:
        return np.zeros(np.broadcast(x, y).shape)
    if model.kind == ModelKind.OU:
        beta, mu, s2 = model.beta, model.mu, model.sigma ** 2
        return -beta * (b - x) * (b - y) * (beta * (b + x + y) - 3.0 * mu) / (3.0 * s2 * (2.0 * b - x - y))
    model.check_state(np.minimum(x, y), strict=True)
    return _phi_b_sr(model, x, y, b)


def phi_b_generic(model: DiffusionModel, x, y, b: float):
    """
    phi_b from the antiderivatives of 1/sigma and lambda/sigma.

    Independent of the closed forms in phi_b; covers every model family.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s_x, s_y, s_b = (model.scale_antiderivative(v) for v in (x, y, b))
    l_x, l_y, l_b = (model.lambda_antiderivative(v) for v in (x, y, b))

    near = _near_diagonal(x, y)
    chord = (l_y - l_x) / np.where(near, 1.0, s_y - s_x)
    to_threshold = ((l_b - l_x) + (l_b - l_y)) / ((s_b - s_x) + (s_b - s_y))
    diagonal = model.lambda_fn(y) - (l_b - l_y) / (s_b - s_y)
    return 0.5 * np.where(near, diagonal, chord - to_threshold)


# ---------------------------------------------------------------------------
# Bridge crossing
# ---------------------------------------------------------------------------

def crossing_probability(
    model: DiffusionModel,
    x,
    y,
    b: float,
    delta: float,
    bridge: BridgeMethod = BridgeMethod.EXPANSION,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> np.ndarray:
    """
    Vectorized P(T_b < delta | X_0 = x, X_delta = y) for x, y below b.

    Args:
        model: Diffusion model
        x: Start states
        y: End states
        b: Threshold
        delta: Time between the two states
        bridge: EXACT_WD or EXPANSION
        diagnostics: Optional counters updated with clamp events

    Returns:
        Probabilities clamped to [0, 1]
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x >= b) or np.any(y >= b):
        raise ModelDomainError(f"bridge endpoints must lie below the threshold b={b}")

    s_b = model.scale_antiderivative(b)
    exponent = 2.0 / delta * (s_b - model.scale_antiderivative(x)) * (s_b - model.scale_antiderivative(y))
    prob = np.exp(-exponent)
    if bridge == BridgeMethod.EXPANSION:
        prob = prob * (1.0 + delta * phi_b(model, x, y, b))

    clipped = np.clip(prob, 0.0, 1.0)
    if diagnostics is not None:
        diagnostics.n_bridge_evals += int(clipped.size)
        diagnostics.n_bridge_clamped += int(np.count_nonzero(clipped != prob))
    return clipped


def bridge_crossing_prob(
    model: DiffusionModel,
    x: float,
    y: float,
    cfg: ThresholdConfig,
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> float:
    """Conditional crossing probability between observations x and y one step apart."""
    method = method or CrossingMethod.default_for(model.kind)
    method.check_for(model)
    return float(crossing_probability(model, x, y, cfg.b, cfg.delta, method.bridge, diagnostics))


# ---------------------------------------------------------------------------
# First-passage probability G
# ---------------------------------------------------------------------------

def wd_first_passage_cdf(model: WDModel, t, distance):
    """
    P(T_b <= t) for a Wiener process with drift started `distance` below b.

    The exponentially weighted erfc term is evaluated through erfcx so that
    large positive drifts do not overflow.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(distance, dtype=float)
    mu, sigma = model.mu, model.sigma
    positive = t > 0
    tt = np.where(positive, t, 1.0)
    root = np.sqrt(2.0 * tt) * sigma
    z1 = (d - mu * tt) / root
    z2 = (d + mu * tt) / root
    with np.errstate(over="ignore", invalid="ignore"):
        scaled = special.erfcx(z2) * np.exp(-z1 ** 2)
        direct = np.exp(2.0 * mu * d / sigma ** 2) * special.erfc(z2)
    second = np.where(z2 > 0, scaled, direct)
    cdf = 0.5 * special.erfc(z1) + 0.5 * second
    return np.where(positive, np.clip(cdf, 0.0, 1.0), np.where(d <= 0, 1.0, 0.0))


def _psi_coefficient(model: DiffusionModel, b: float, form: PsiCoefficient) -> float:
    drift_b = float(model.drift(b))
    if form == PsiCoefficient.SQUARED_DIFFUSION:
        return drift_b - 0.5 * float(model.diffusion(b)) * float(model.diffusion_prime(b))
    return drift_b - 0.25 * float(model.diffusion_prime(b))


def _density_at_threshold(model: DiffusionModel, b: float, x: float):
    """Integrand r -> f(X_r = b | x), zero at r = 0."""
    def integrand(r: float) -> float:
        if r <= 0:
            return 0.0
        value = float(model.free_density(b, r, x))
        if not np.isfinite(value):
            # Series window exhausted: both chi-square parameters are huge,
            # where the moment-matched normal is accurate
            mean, var = model.conditional_moments(x, r)
            value = float(np.exp(normal_logpdf(b, float(mean), float(var))))
        return value
    return integrand


def _g_psi_approx(model: DiffusionModel, x: float, b: float, delta: float, form: PsiCoefficient) -> float:
    spec = QuadratureSpec(
        abs_tol=settings.PSI_QUAD_ABS_TOL,
        rel_tol=1e-8,
        max_depth=settings.PSI_QUAD_MAX_DEPTH,
        min_depth=settings.PSI_QUAD_MIN_DEPTH,
    )
    density = _density_at_threshold(model, b, x)
    # r = u**2 removes the r**-1/2 behaviour of the density near r = 0 when x is close to b
    time_integral = adaptive_quad(lambda u: 2.0 * u * density(u * u), 0.0, math.sqrt(delta), spec)
    return 2.0 * float(model.free_cdf_above(b, delta, x)) - _psi_coefficient(model, b, form) * time_integral


def _g_gaussian_closed_form(model: DiffusionModel, x: float, b: float, delta: float) -> float:
    mean, var = model.conditional_moments(x, delta)
    mean, s = float(mean), math.sqrt(float(var))
    kappa = 2.0 * (b - x) / (model.sigma ** 2 * delta)
    gap = b - mean
    below = special.ndtr(gap / s)
    killed = math.exp(-kappa * gap + 0.5 * (kappa * s) ** 2 + special.log_ndtr(gap / s - kappa * s))
    return 1.0 - below + killed


def _g_density_integral(model: DiffusionModel, x: float, b: float, delta: float, method: "CrossingMethod") -> float:
    from .likelihood import fb_density_vector

    mean, var = model.conditional_moments(x, delta)
    lower = float(mean) - 12.0 * math.sqrt(float(var))
    if model.kind == ModelKind.SR:
        lower = max(lower, 0.0)
    if lower >= b:
        return 1.0

    def integrand(y: float) -> float:
        if model.kind == ModelKind.SR and y <= 0:
            return 0.0
        if y >= b:
            return 0.0
        return float(fb_density_vector(model, np.array([y]), np.array([x]), b, delta, method)[0])

    spec = QuadratureSpec(abs_tol=settings.PSI_QUAD_ABS_TOL, rel_tol=1e-9,
                          max_depth=settings.PSI_QUAD_MAX_DEPTH, min_depth=4)
    return 1.0 - adaptive_quad(integrand, lower, b, spec)


def g_prob(
    model: DiffusionModel,
    x: float,
    cfg: ThresholdConfig,
    method: Optional[CrossingMethod] = None,
    diagnostics: Optional[CrossingDiagnostics] = None,
) -> float:
    """
    Probability G(delta | x) that the threshold is reached within one step.

    Args:
        model: Diffusion model
        x: Current sub-threshold state
        cfg: Threshold and step (cfg.x0 is not used)
        method: Crossing evaluation choices
        diagnostics: Optional counters; negative approximations are clamped to 0

    Returns:
        Probability in [0, 1]

    Raises:
        ModelDomainError: If x is not below the threshold
        QuadratureError: If a quadrature does not converge
    """
    method = method or CrossingMethod.default_for(model.kind)
    method.check_for(model)
    x = float(x)
    b, delta = cfg.b, cfg.delta
    if x >= b:
        raise ModelDomainError(f"state {x} is not below the threshold {b}")

    if method.g_method == GMethod.EXACT_WD:
        value = float(wd_first_passage_cdf(model, delta, b - x))
    elif method.g_method == GMethod.PSI_APPROX:
        value = _g_psi_approx(model, x, b, delta, method.psi_coefficient)
    elif method.g_method == GMethod.GAUSSIAN_CLOSED_FORM:
        value = _g_gaussian_closed_form(model, x, b, delta)
    else:
        value = _g_density_integral(model, x, b, delta, method)

    if not np.isfinite(value):
        return float("nan")
    clipped = min(max(value, 0.0), 1.0)
    if diagnostics is not None:
        diagnostics.n_g_evals += 1
        if value < 0:
            diagnostics.n_g_negative += 1
        if clipped != value:
            diagnostics.n_g_clamped += 1
    if value < 0:
        logger.debug(f"G approximation {value:.3e} at x={x} clamped to 0")
    return clipped


# ---------------------------------------------------------------------------
# Discretized mean first-passage index
# ---------------------------------------------------------------------------

def discretized_mean_N(model: WDModel, cfg: ThresholdConfig, max_steps: Optional[int] = None) -> float:
    """
    Expected index N of the first sampling time at or after the crossing.

    E(N) = sum_{n >= 0} P(T_b > n delta), truncated once the tail mass drops
    below settings.DISCRETE_TAIL_TOL, or after max_steps terms if given.

    Raises:
        ModelDomainError: For a non-WD model
        DivergenceError: If mu <= 0 (the sum does not converge)
    """
    if model.kind != ModelKind.WD:
        raise ModelDomainError("discretized_mean_N is defined for the WD model")
    if model.mu <= 0:
        raise DivergenceError(f"E(N) is infinite for WD with mu={model.mu}")

    distance = cfg.b - cfg.x0
    total = 0.0
    start = 0
    chunk = 1024
    while True:
        n = np.arange(start, start + chunk)
        if max_steps is not None:
            n = n[n < max_steps]
            if n.size == 0:
                return total
        survival = 1.0 - wd_first_passage_cdf(model, n * cfg.delta, distance)
        below = np.flatnonzero(survival < settings.DISCRETE_TAIL_TOL)
        if below.size:
            return total + float(survival[:below[0]].sum())
        total += float(survival.sum())
        start += chunk
        if start > settings.MAX_SIM_SUBSTEPS:
            raise DivergenceError("E(N) series did not reach its tail tolerance")
