#!/usr/bin/env python3
"""
Test script for the diffusion models
Moments, transition densities, lambda functions, feasibility and mean first-passage times
"""

import math
import sys
import traceback

import pytest
from pydantic import ValidationError
from scipy import integrate, stats

from config.cases import get_case
from src.core.exceptions import DivergenceError, ModelDomainError
from src.core.models import (
    ModelKind,
    OUModel,
    SRModel,
    ThresholdConfig,
    WDModel,
    from_theta,
    param_names,
)


def _case_model(name):
    case = get_case(name)
    return from_theta(case.kind, case.theta), ThresholdConfig(b=case.b, x0=case.x0, delta=case.delta)


def test_ou_conditional_moments():
    print("🧪 Testing OU conditional moments...")
    model, cfg = _case_model("OU1")
    mean, var = model.conditional_moments(0.0, cfg.delta)
    assert float(mean) == pytest.approx(0.042893, rel=1e-4)
    assert float(var) == pytest.approx(0.143281, rel=1e-4)
    print(f"✅ mean={float(mean):.6f}, var={float(var):.6f}")


def test_ou_moments_at_zero_beta_match_wd():
    model = OUModel(mu=0.4, beta=0.0, sigma=1.1)
    wd = WDModel(mu=0.4, sigma=1.1)
    for a, b in zip(model.conditional_moments(1.5, 0.3), wd.conditional_moments(1.5, 0.3)):
        assert float(a) == pytest.approx(float(b), rel=1e-14)


def test_sr_chi_square_parameters():
    print("🧪 Testing SR transition law...")
    model, cfg = _case_model("SR1")
    c, k, nc = model.chi2_parameters(cfg.x0, cfg.delta)
    assert k == pytest.approx(81.6327, rel=1e-5)
    y = 5.3
    ref = math.log(c) + stats.ncx2.logpdf(c * y, k, nc)
    assert float(model.free_logdensity(y, cfg.delta, cfg.x0)) == pytest.approx(ref, rel=1e-8)
    total, _ = integrate.quad(lambda v: float(model.free_density(v, cfg.delta, cfg.x0)), 0.0, 20.0, points=[5.3], limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    print(f"✅ degrees of freedom k={k:.4f}, density integrates to {total:.8f}")


def test_sr_moments_match_chi_square():
    model = SRModel(mu=6.0, beta=0.31, sigma=0.5)
    c, k, nc = model.chi2_parameters(10.0, 0.12)
    mean, var = model.conditional_moments(10.0, 0.12)
    assert float(mean) == pytest.approx((k + nc) / c, rel=1e-12)
    assert float(var) == pytest.approx(2.0 * (k + 2.0 * nc) / c ** 2, rel=1e-12)


def test_lambda_values():
    print("🧪 Testing lambda functions...")
    model, _ = _case_model("OU1")
    assert float(model.lambda_fn(0.0)) == pytest.approx(0.07840, abs=5e-6)
    wd = WDModel(mu=0.3, sigma=0.5)
    assert float(wd.lambda_fn(3.0)) == pytest.approx(0.36, rel=1e-12)
    print("✅ lambda(0) for OU1 = 0.07840")


@pytest.mark.parametrize("name", ["WD1", "OU1", "SR1"])
def test_antiderivatives(name):
    """Central differences of the antiderivatives recover 1/sigma and lambda/sigma"""
    model, _ = _case_model(name)
    h = 1e-5
    for z in (2.0, 6.5, 9.0):
        ds = (model.scale_antiderivative(z + h) - model.scale_antiderivative(z - h)) / (2 * h)
        dl = (model.lambda_antiderivative(z + h) - model.lambda_antiderivative(z - h)) / (2 * h)
        sigma = float(model.diffusion(z))
        assert float(ds) == pytest.approx(1.0 / sigma, rel=1e-6, abs=1e-6)
        assert float(dl) == pytest.approx(float(model.lambda_fn(z)) / sigma, rel=1e-6, abs=1e-6)


def test_feasibility_and_validation():
    print("🧪 Testing parameter validation...")
    assert SRModel(mu=10.0, beta=1.2, sigma=0.7).is_feasible()
    assert not SRModel(mu=0.1, beta=1.0, sigma=1.0).is_feasible()
    with pytest.raises(ModelDomainError):
        from_theta("OU", {"mu": 1.0, "beta": -0.1, "sigma": 1.0})
    with pytest.raises(ModelDomainError):
        from_theta(ModelKind.WD, [0.3, 0.0])
    with pytest.raises(ValidationError):
        ThresholdConfig(b=1.0, x0=2.0, delta=0.1)
    with pytest.raises(ModelDomainError):
        ThresholdConfig(b=1.0, x0=-1.0, delta=0.1).check_for(SRModel(mu=1.0, beta=1.0, sigma=1.0))
    with pytest.raises(ModelDomainError):
        SRModel(mu=1.0, beta=1.0, sigma=1.0).drift(-0.5)
    assert param_names("SR") == ("mu", "beta", "sigma")
    assert from_theta("OU", [0.43, 0.05, 1.2]).theta == {"mu": 0.43, "beta": 0.05, "sigma": 1.2}
    print("✅ invalid parameters and states rejected")


def test_mean_fpt():
    print("🧪 Testing mean first-passage times...")
    model, cfg = _case_model("WD1")
    assert model.mean_fpt(cfg) == pytest.approx(10.0 / 0.3, rel=1e-12)
    with pytest.raises(DivergenceError):
        WDModel(mu=-0.1, sigma=1.0).mean_fpt(cfg)

    cfg_ou = ThresholdConfig(b=10.0, x0=0.0, delta=0.1)
    almost_wd = OUModel(mu=0.43, beta=1e-6, sigma=1.2).mean_fpt(cfg_ou)
    assert almost_wd == pytest.approx(10.0 / 0.43, rel=1e-3)
    assert OUModel(mu=0.43, beta=0.0, sigma=1.2).mean_fpt(cfg_ou) == pytest.approx(10.0 / 0.43, rel=1e-12)

    ou1, cfg1 = _case_model("OU1")
    t_ou = ou1.mean_fpt(cfg1)
    assert t_ou == pytest.approx(41.4976, abs=5e-4)
    sr1, cfg_sr = _case_model("SR1")
    t_sr = sr1.mean_fpt(cfg_sr)
    assert 0.0 < t_sr < 50.0
    print(f"✅ E(T) OU1={t_ou:.3f}, SR1={t_sr:.4f}")


def main():
    print("🚀 Diffusion Model Test Suite")
    print("=" * 60)
    tests = [
        test_ou_conditional_moments,
        test_ou_moments_at_zero_beta_match_wd,
        test_sr_chi_square_parameters,
        test_sr_moments_match_chi_square,
        test_lambda_values,
        lambda: [test_antiderivatives(n) for n in ("WD1", "OU1", "SR1")],
        test_feasibility_and_validation,
        test_mean_fpt,
    ]
    passed = 0
    for test in tests:
        try:
            test()
            passed += 1
        except Exception as e:
            print(f"❌ {getattr(test, '__name__', 'test')} failed: {e}")
            traceback.print_exc()
    print("\n" + "=" * 60)
    print(f"📊 Model Test Results: {passed}/{len(tests)} tests passed")
    if passed != len(tests):
        sys.exit(1)


if __name__ == "__main__":
    main()
