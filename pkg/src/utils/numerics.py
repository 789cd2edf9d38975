"""
Numerical building blocks
Error function and normal helpers, a log-domain non-central chi-square,
adaptive Simpson quadrature, the Nelder-Mead kernel and keyed random streams
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy import special
from scipy.optimize import minimize

from config.settings import settings
from ..core.exceptions import QuadratureError

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Error function and normal distribution
# ---------------------------------------------------------------------------

def erf(x):
    """Error function (scalar or array)."""
    return special.erf(x)


def normal_cdf(x):
    """Standard normal cumulative distribution function."""
    return special.ndtr(x)


def normal_sf(x):
    """Standard normal survival function, accurate in the upper tail."""
    return special.ndtr(-np.asarray(x, dtype=float))


def normal_logpdf(y, mean, var):
    """Log density of N(mean, var) at y, elementwise."""
    y = np.asarray(y, dtype=float)
    var = np.asarray(var, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


# ---------------------------------------------------------------------------
# Non-central chi-square
# ---------------------------------------------------------------------------

def _chi2_logpdf(x, k):
    half_k = 0.5 * k
    return special.xlogy(half_k - 1.0, x) - 0.5 * x - half_k * LOG2 - special.gammaln(half_k)


def _term_peak(x, k, nc):
    """Index of the largest Poisson-mixture term and the spread around it."""
    half_k = 0.5 * k
    jstar = 0.5 * (-half_k + np.sqrt(half_k ** 2 + nc * x))
    jstar = np.maximum(jstar, 0.0)
    spread = np.sqrt(1.0 / (1.0 / (jstar + 1.0) + 1.0 / (half_k + jstar)))
    return jstar, spread


def ncx2_logpdf(x, k, nc):
    """
    Log density of the non-central chi-square distribution.

    Evaluated as a Poisson mixture of central chi-square densities in log
    space, summing only the window of terms around the largest one.

    Args:
        x: Evaluation point(s), x >= 0
        k: Degrees of freedom, k > 0
        nc: Non-centrality, nc >= 0

    Returns:
        Log density with the input's shape; NaN where the evaluation is not
        trustworthy (invalid arguments or a window wider than the cap)
    """
    x, k, nc = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(k, dtype=float), np.asarray(nc, dtype=float)
    )
    out = np.full(x.shape, np.nan)
    valid = np.isfinite(x) & np.isfinite(k) & np.isfinite(nc) & (k > 0) & (nc >= 0)

    out[valid & (x <= 0)] = -np.inf
    central = valid & (x > 0) & (nc == 0)
    out[central] = _chi2_logpdf(x[central], k[central])

    idx = np.flatnonzero(valid & (x > 0) & (nc > 0))
    if idx.size:
        xs, ks, ncs = x.flat[idx], k.flat[idx], nc.flat[idx]
        jstar, spread = _term_peak(xs, ks, ncs)
        width = np.ceil(settings.NCX2_WINDOW_SDS * spread + 10.0)
        ok = width <= settings.NCX2_MAX_WINDOW
        if ok.any():
            w = int(width[ok].max())
            j = np.floor(jstar[ok])[:, None] + np.arange(-w, w + 1)[None, :]
            inside = j >= 0
            j = np.where(inside, j, 0.0)
            half_nc = 0.5 * ncs[ok][:, None]
            nu_half = 0.5 * ks[ok][:, None] + j
            xv = xs[ok][:, None]
            log_terms = (
                -half_nc + special.xlogy(j, half_nc) - special.gammaln(j + 1.0)
                + (nu_half - 1.0) * np.log(xv) - 0.5 * xv - nu_half * LOG2 - special.gammaln(nu_half)
            )
            log_terms = np.where(inside, log_terms, -np.inf)
            res = special.logsumexp(log_terms, axis=1)
            res[~np.isfinite(res) & (res != -np.inf)] = np.nan
            out.flat[idx[ok]] = res
    return out if out.ndim else float(out)


def ncx2_pdf(x, k, nc):
    """Non-central chi-square density (NaN is the failure sentinel)."""
    return np.exp(ncx2_logpdf(x, k, nc))


def _ncx2_tail(x, k, nc, upper: bool):
    x, k, nc = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(k, dtype=float), np.asarray(nc, dtype=float)
    )
    out = np.full(x.shape, np.nan)
    valid = np.isfinite(x) & np.isfinite(k) & np.isfinite(nc) & (k > 0) & (nc >= 0)
    regularized = special.gammaincc if upper else special.gammainc

    out[valid & (x <= 0)] = 1.0 if upper else 0.0
    central = valid & (x > 0) & (nc == 0)
    out[central] = regularized(0.5 * k[central], 0.5 * x[central])

    idx = np.flatnonzero(valid & (x > 0) & (nc > 0))
    if idx.size:
        xs, ks, ncs = x.flat[idx], k.flat[idx], nc.flat[idx]
        half_nc = 0.5 * ncs
        jstar, spread = _term_peak(xs, ks, ncs)
        n_sd = settings.NCX2_WINDOW_SDS
        lo = np.maximum(np.floor(np.minimum(half_nc - n_sd * np.sqrt(half_nc), jstar - n_sd * spread)) - 10.0, 0.0)
        hi = np.ceil(np.maximum(half_nc + n_sd * np.sqrt(half_nc), jstar + n_sd * spread)) + 10.0
        span = hi - lo
        ok = span <= 2 * settings.NCX2_MAX_WINDOW
        if ok.any():
            w = int(span[ok].max())
            j = lo[ok][:, None] + np.arange(w + 1)[None, :]
            inside = j <= hi[ok][:, None]
            hv = half_nc[ok][:, None]
            log_pois = -hv + special.xlogy(j, hv) - special.gammaln(j + 1.0)
            probs = regularized(0.5 * ks[ok][:, None] + j, 0.5 * xs[ok][:, None])
            terms = np.where(inside, np.exp(log_pois) * probs, 0.0)
            out.flat[idx[ok]] = np.clip(terms.sum(axis=1), 0.0, 1.0)
    return out if out.ndim else float(out)


def ncx2_cdf(x, k, nc):
    """Non-central chi-square distribution function."""
    return _ncx2_tail(x, k, nc, upper=False)


def ncx2_sf(x, k, nc):
    """Non-central chi-square survival function, summed directly so small tails keep precision."""
    return _ncx2_tail(x, k, nc, upper=True)


# ---------------------------------------------------------------------------
# Adaptive Simpson quadrature
# ---------------------------------------------------------------------------

class QuadratureSpec(BaseModel):
    """Tolerances for adaptive Simpson quadrature"""
    abs_tol: float = Field(default=1e-10, gt=0, description="Absolute error tolerance")
    rel_tol: float = Field(default=1e-10, gt=0, description="Relative error tolerance")
    max_depth: int = Field(default=40, ge=1, description="Maximum recursion depth")
    min_depth: int = Field(default=3, ge=0, description="Levels always subdivided before accepting")
    floor_rel: float = Field(default=1e-12, ge=0, description="Local tolerance floor relative to the whole-interval estimate")


def adaptive_quad(f: Callable[[float], float], a: float, b: float, spec: Optional[QuadratureSpec] = None) -> float:
    """
    Adaptive Simpson's rule integration with Richardson correction.

    Args:
        f: Scalar integrand
        a: Lower bound
        b: Upper bound
        spec: Tolerances and depth limits

    Returns:
        The integral estimate

    Raises:
        QuadratureError: If the tolerance is not met within max_depth levels
    """
    spec = spec or QuadratureSpec()
    if a == b:
        return 0.0
    if a > b:
        return -adaptive_quad(f, b, a, spec)

    def _simpson(fa: float, fm: float, fb: float, h: float) -> float:
        return h / 3.0 * (fa + 4.0 * fm + fb)

    def _adaptive(lo: float, hi: float, flo: float, fmid: float, fhi: float,
                  whole: float, depth: int, tol: float) -> float:
        mid = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        flm = f(0.5 * (lo + mid))
        frm = f(0.5 * (mid + hi))
        left = _simpson(flo, flm, fmid, 0.5 * h)
        right = _simpson(fmid, frm, fhi, 0.5 * h)
        combined = left + right
        error = (combined - whole) / 15.0
        if depth >= spec.min_depth and abs(error) <= max(tol, spec.rel_tol * abs(combined), floor):
            return combined + error
        if depth >= spec.max_depth:
            raise QuadratureError(f"adaptive Simpson did not converge on [{lo}, {hi}] (error {error:.3e})")
        return (_adaptive(lo, mid, flo, flm, fmid, left, depth + 1, 0.5 * tol)
                + _adaptive(mid, hi, fmid, frm, fhi, right, depth + 1, 0.5 * tol))

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = _simpson(fa, fm, fb, 0.5 * (b - a))
    # Local tolerances halve per level down to this floor
    floor = spec.floor_rel * abs(whole)
    return _adaptive(a, b, fa, fm, fb, whole, 0, spec.abs_tol)


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimplexResult:
    """Outcome of one Nelder-Mead run"""
    x: np.ndarray
    fun: float
    n_evals: int
    converged: bool
    message: str


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    initial_simplex: Optional[np.ndarray] = None,
    max_evals: int = None,
    f_rel_tol: float = None,
    x_tol: float = None,
) -> SimplexResult:
    """
    Minimize f with the Nelder-Mead simplex.

    The objective may return +inf at infeasible points; such vertices are
    always ranked worst, so the simplex reflects or shrinks away from them.

    Args:
        f: Objective on R^p
        x0: Starting point
        initial_simplex: Optional (p+1, p) array of starting vertices
        max_evals: Budget of function evaluations
        f_rel_tol: Function-value spread tolerance, relative to max(1, |f(x0)|)
        x_tol: Vertex spread tolerance

    Returns:
        SimplexResult with the best vertex found
    """
    max_evals = max_evals or settings.FIT_MAX_EVALS
    f_rel_tol = settings.FIT_F_REL_TOL if f_rel_tol is None else f_rel_tol
    x_tol = settings.FIT_X_TOL if x_tol is None else x_tol
    x0 = np.asarray(x0, dtype=float)

    f0 = f(x0)
    scale = max(1.0, abs(f0)) if np.isfinite(f0) else 1.0
    options = {
        "maxfev": max_evals,
        "maxiter": max_evals,
        "xatol": x_tol,
        "fatol": f_rel_tol * scale,
    }
    if initial_simplex is not None:
        options["initial_simplex"] = np.asarray(initial_simplex, dtype=float)

    res = minimize(f, x0, method="Nelder-Mead", options=options)
    logger.debug(f"Nelder-Mead finished: fun={res.fun:.6g}, nfev={res.nfev}, success={res.success}")
    return SimplexResult(
        x=np.asarray(res.x, dtype=float),
        fun=float(res.fun),
        n_evals=int(res.nfev) + 1,
        converged=bool(res.success),
        message=str(res.message),
    )


# ---------------------------------------------------------------------------
# Keyed random streams
# ---------------------------------------------------------------------------

def keyed_stream(seed: int, *indices: int) -> np.random.Generator:
    """
    Independent random stream identified by (seed, indices...).

    The stream depends only on its key, so results do not change with the
    order or the process in which streams are consumed.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.PCG64(sequence))
