#!/usr/bin/env python3
"""
Test script for the numerical building blocks
Special functions, adaptive Simpson quadrature, Nelder-Mead and keyed streams
"""

import math
import sys
import traceback

import numpy as np
import pytest
from scipy import stats

from src.core.exceptions import QuadratureError
from src.utils.numerics import (
    QuadratureSpec,
    adaptive_quad,
    erf,
    keyed_stream,
    ncx2_cdf,
    ncx2_logpdf,
    ncx2_sf,
    nelder_mead,
    normal_cdf,
    normal_logpdf,
)


def test_normal_helpers():
    """erf and the normal distribution against reference values"""
    print("🧪 Testing erf and normal helpers...")
    assert erf(0.0) == 0.0
    assert erf(1.0) == pytest.approx(0.8427007929497149, rel=1e-14)
    assert normal_cdf(1.959963984540054) == pytest.approx(0.975, rel=1e-12)
    assert normal_logpdf(1.0, 0.0, 4.0) == pytest.approx(stats.norm.logpdf(1.0, scale=2.0), rel=1e-12)
    print("✅ normal helpers match reference values")


def test_ncx2_logpdf_matches_scipy():
    """Windowed Poisson mixture against scipy.stats.ncx2"""
    print("🧪 Testing non-central chi-square log density...")
    for x, k, nc in [(3.0, 4.0, 2.0), (0.5, 1.5, 0.3), (80.0, 81.6327, 60.0), (400.0, 81.6327, 350.0)]:
        ours = ncx2_logpdf(x, k, nc)
        ref = stats.ncx2.logpdf(x, k, nc)
        assert ours == pytest.approx(ref, rel=1e-8, abs=1e-10), (x, k, nc)
    assert ncx2_logpdf(2.0, 3.0, 0.0) == pytest.approx(stats.chi2.logpdf(2.0, 3.0), rel=1e-12)
    print("✅ log density matches scipy")


def test_ncx2_edge_cases():
    print("🧪 Testing non-central chi-square edge cases...")
    assert ncx2_logpdf(0.0, 4.0, 1.0) == -math.inf
    assert ncx2_logpdf(-1.0, 4.0, 1.0) == -math.inf
    assert math.isnan(ncx2_logpdf(1.0, -2.0, 1.0))
    assert math.isnan(ncx2_logpdf(1.0, 2.0, -1.0))
    values = ncx2_logpdf(np.array([1.0, 2.0, 3.0]), 4.0, 2.0)
    assert values.shape == (3,)
    print("✅ edge cases return -inf / NaN sentinels")


def test_ncx2_tails():
    print("🧪 Testing non-central chi-square cdf and survival function...")
    for x, k, nc in [(3.0, 4.0, 2.0), (60.0, 20.0, 30.0), (120.0, 81.6327, 40.0)]:
        cdf = ncx2_cdf(x, k, nc)
        sf = ncx2_sf(x, k, nc)
        assert cdf == pytest.approx(stats.ncx2.cdf(x, k, nc), rel=1e-8, abs=1e-12)
        assert cdf + sf == pytest.approx(1.0, abs=1e-10)
    print("✅ cdf and sf are consistent")


def test_adaptive_quad():
    print("🧪 Testing adaptive Simpson quadrature...")
    assert adaptive_quad(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-9)
    assert adaptive_quad(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1.0, rel=1e-10)
    assert adaptive_quad(math.exp, 1.0, 0.0) == pytest.approx(1.0 - math.e, rel=1e-10)
    assert adaptive_quad(math.exp, 2.0, 2.0) == 0.0
    print("✅ smooth integrals reproduced")


def test_adaptive_quad_raises_on_depth():
    print("🧪 Testing quadrature depth limit...")
    spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-14, max_depth=5, min_depth=0)
    with pytest.raises(QuadratureError):
        adaptive_quad(lambda x: 1.0 / math.sqrt(x) if x > 0 else 0.0, 0.0, 1.0, spec)
    print("✅ QuadratureError raised beyond max depth")


def test_adaptive_quad_tolerates_integrand_noise():
    print("🧪 Testing quadrature on a slightly noisy integrand...")

    def noisy(x):
        return math.exp(x) * (1.0 + 1e-6 * math.sin(1e9 * x))

    assert adaptive_quad(noisy, 0.0, 1.0) == pytest.approx(math.e - 1.0, rel=1e-5)
    with pytest.raises(QuadratureError):
        adaptive_quad(noisy, 0.0, 1.0, QuadratureSpec(floor_rel=0.0, max_depth=20))
    print("✅ local tolerance floor stops the recursion")


def test_nelder_mead_rosenbrock():
    print("🧪 Testing Nelder-Mead on the Rosenbrock function...")

    def rosenbrock(p):
        return (1.0 - p[0]) ** 2 + 100.0 * (p[1] - p[0] ** 2) ** 2

    result = nelder_mead(rosenbrock, [-1.2, 1.0], max_evals=4000, f_rel_tol=1e-12, x_tol=1e-8)
    assert result.converged
    assert result.x == pytest.approx([1.0, 1.0], abs=1e-3)
    print(f"✅ minimum at {result.x} after {result.n_evals} evaluations")


def test_nelder_mead_infeasible_region():
    print("🧪 Testing Nelder-Mead with +inf sentinels...")

    def objective(p):
        return math.inf if p[0] < 0 else (p[0] - 1.0) ** 2 + p[1] ** 2

    result = nelder_mead(objective, [2.0, 1.0])
    assert result.x == pytest.approx([1.0, 0.0], abs=1e-3)
    assert np.isfinite(result.fun)
    print("✅ simplex retreats from infeasible vertices")


def test_keyed_stream():
    print("🧪 Testing keyed random streams...")
    a = keyed_stream(7, 0, 3).standard_normal(5)
    b = keyed_stream(7, 0, 3).standard_normal(5)
    c = keyed_stream(7, 0, 4).standard_normal(5)
    d = keyed_stream(8, 0, 3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    print("✅ streams depend only on their key")


def main():
    print("🚀 Numerics Test Suite")
    print("=" * 60)
    tests = [
        test_normal_helpers,
        test_ncx2_logpdf_matches_scipy,
        test_ncx2_edge_cases,
        test_ncx2_tails,
        test_adaptive_quad,
        test_adaptive_quad_raises_on_depth,
        test_adaptive_quad_tolerates_integrand_noise,
        test_nelder_mead_rosenbrock,
        test_nelder_mead_infeasible_region,
        test_keyed_stream,
    ]
    passed = 0
    for test in tests:
        try:
            test()
            passed += 1
        except Exception as e:
            print(f"❌ {test.__name__} failed: {e}")
            traceback.print_exc()
    print("\n" + "=" * 60)
    print(f"📊 Numerics Test Results: {passed}/{len(tests)} tests passed")
    if passed != len(tests):
        sys.exit(1)


if __name__ == "__main__":
    main()
