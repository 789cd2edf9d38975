#!/usr/bin/env python3
"""
Test script for the killed-process likelihood
Trajectory records, killed and naive log-likelihoods, the killed chain and numerical scores
"""

import math
import sys
import traceback

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from src.core.crossing import CrossingMethod, wd_first_passage_cdf
from src.core.exceptions import ModelDomainError
from src.core.likelihood import (
    COFFIN,
    KilledTrajectory,
    Objective,
    killed_transition_logdensity,
    loglik,
    loglik_killed,
    loglik_killed_chain,
    loglik_naive,
    loglik_pooled,
    per_trajectory_scores,
    sample_information,
    score_numeric,
)
from src.core.models import OUModel, SRModel, ThresholdConfig, WDModel
from src.simulation.simulate import SimPlan, simulate_killed


WD = WDModel(mu=1.0, sigma=1.0)
WD_TRAJ = KilledTrajectory(x0=0.0, delta=0.5, b=3.0, obs=[0.8, 1.9, 2.5], traj_id="w")
OU = OUModel(mu=0.43, beta=0.05, sigma=1.2)
OU_TRAJ = KilledTrajectory(x0=0.0, delta=0.1, b=3.0, obs=[0.3, 0.1, 0.6, 1.1, 1.4, 2.0, 2.6], traj_id="o")


def test_trajectory_record():
    print("🧪 Testing trajectory records...")
    assert WD_TRAJ.n_steps == 4
    assert list(WD_TRAJ.path()) == [0.0, 0.8, 1.9, 2.5]
    assert WD_TRAJ.threshold == ThresholdConfig(b=3.0, x0=0.0, delta=0.5)
    with pytest.raises(ValidationError):
        KilledTrajectory(x0=0.0, delta=0.5, b=3.0, obs=[1.0, 3.0])
    with pytest.raises(ValidationError):
        KilledTrajectory(x0=3.5, delta=0.5, b=3.0)
    print("✅ observations at or above b rejected")


def test_wd_killed_loglik_by_hand():
    print("🧪 Testing WD killed log-likelihood against a hand computation...")
    path = WD_TRAJ.path()
    expected = 0.0
    for x, y in zip(path[:-1], path[1:]):
        expected += stats.norm.logpdf(y, loc=x + 0.5, scale=math.sqrt(0.5))
        expected += math.log1p(-math.exp(-2.0 * (3.0 - x) * (3.0 - y) / 0.5))
    expected += math.log(float(wd_first_passage_cdf(WD, 0.5, 0.5)))
    result = loglik_killed(WD, WD_TRAJ)
    assert result.eval_ok
    assert result.value == pytest.approx(expected, rel=1e-12)
    print(f"✅ log L = {result.value:.6f}")


def test_wd_naive_loglik_by_hand():
    path = WD_TRAJ.path()
    expected = sum(stats.norm.logpdf(y, loc=x + 0.5, scale=math.sqrt(0.5)) for x, y in zip(path[:-1], path[1:]))
    assert loglik_naive(WD, WD_TRAJ).value == pytest.approx(expected, rel=1e-12)
    assert loglik(WD, WD_TRAJ, Objective.NAIVE).value == loglik_naive(WD, WD_TRAJ).value


def test_uncrossed_trajectory_has_no_g_term():
    crossed = loglik_killed(WD, WD_TRAJ).value
    censored = loglik_killed(WD, WD_TRAJ.model_copy(update={"crossed": False})).value
    assert crossed - censored == pytest.approx(math.log(float(wd_first_passage_cdf(WD, 0.5, 0.5))), rel=1e-12)


def test_killed_chain_matches_sequential_form():
    print("🧪 Testing the killed-chain form of the likelihood...")
    for model, traj in ((WD, WD_TRAJ), (OU, OU_TRAJ)):
        sequential = loglik_killed(model, traj)
        chain = loglik_killed_chain(model, traj)
        assert sequential.eval_ok and chain.eval_ok
        assert chain.value == pytest.approx(sequential.value, rel=1e-10)
    print("✅ both forms agree")


def test_coffin_transitions():
    cfg = WD_TRAJ.threshold
    assert killed_transition_logdensity(WD, COFFIN, COFFIN, cfg) == 0.0
    assert killed_transition_logdensity(WD, 1.0, COFFIN, cfg) == -math.inf
    g = float(wd_first_passage_cdf(WD, 0.5, 0.5))
    assert killed_transition_logdensity(WD, COFFIN, 2.5, cfg) == pytest.approx(math.log(g), rel=1e-12)
    assert killed_transition_logdensity(WD, 3.2, 2.5, cfg) == -math.inf


def test_pooled_is_sum():
    other = KilledTrajectory(x0=0.0, delta=0.5, b=3.0, obs=[1.2], traj_id="v")
    pooled = loglik_pooled(WD, [WD_TRAJ, other])
    assert pooled.value == pytest.approx(loglik_killed(WD, WD_TRAJ).value + loglik_killed(WD, other).value, rel=1e-14)
    naive = loglik_pooled(WD, [WD_TRAJ, other], objective=Objective.NAIVE)
    assert naive.value == pytest.approx(loglik_naive(WD, WD_TRAJ).value + loglik_naive(WD, other).value, rel=1e-14)


def test_failure_sentinels():
    print("🧪 Testing infeasible and failed evaluations...")
    infeasible = SRModel(mu=0.1, beta=1.0, sigma=1.0)
    traj = KilledTrajectory(x0=1.0, delta=0.1, b=3.0, obs=[1.1, 1.3])
    assert not loglik_killed(infeasible, traj).eval_ok
    assert loglik_killed(infeasible, traj).value == -math.inf
    assert not loglik_naive(infeasible, traj).eval_ok

    far = KilledTrajectory(x0=0.0, delta=0.01, b=1000.0, obs=[900.0])
    assert not loglik_killed(WDModel(mu=0.0, sigma=0.1), far).eval_ok

    sr = SRModel(mu=10.0, beta=1.2, sigma=0.7)
    with pytest.raises(ModelDomainError):
        loglik_killed(sr, KilledTrajectory(x0=5.0, delta=0.08, b=10.0, obs=[0.0, 4.0]))
    print("✅ -inf returned with eval_ok=False")


def test_sr_killed_loglik_finite():
    sr = SRModel(mu=10.0, beta=1.2, sigma=0.7)
    traj = KilledTrajectory(x0=5.0, delta=0.08, b=10.0, obs=[5.4, 5.9, 6.1, 6.8, 7.5, 8.1, 8.9, 9.6])
    killed = loglik_killed(sr, traj, CrossingMethod.default_for("SR"))
    assert killed.eval_ok and np.isfinite(killed.value)
    assert killed.value < loglik_naive(sr, traj).value


def test_sr_pooled_loglik_with_last_state_near_threshold():
    print("🧪 Testing SR likelihoods for paths ending just below b...")
    sr3 = SRModel(mu=2.0, beta=0.05, sigma=0.5)
    group = [
        KilledTrajectory(x0=10.0, delta=0.08, b=20.0, obs=np.linspace(10.5, 20.0 - gap, 20).tolist(), traj_id=str(gap))
        for gap in (0.044, 0.04, 0.017)
    ]
    for traj in group:
        term = loglik_killed(sr3, traj)
        assert term.eval_ok and np.isfinite(term.value), traj.traj_id
    pooled = loglik_pooled(sr3, group)
    assert pooled.eval_ok and np.isfinite(pooled.value)
    assert pooled.value == pytest.approx(sum(loglik_killed(sr3, t).value for t in group), rel=1e-12)
    print(f"✅ pooled log-likelihood {pooled.value:.4f}")


def test_wd_score_has_zero_mean():
    print("🧪 Testing the zero-mean property of the killed score...")
    plan = SimPlan(model=WD, cfg=ThresholdConfig(b=3.0, x0=0.0, delta=0.5), n_traj=300, seed=11)
    trajs = simulate_killed(plan, n_workers=1)
    scores = per_trajectory_scores(WD, trajs)
    assert scores.shape == (300, 2)
    mean = scores.mean(axis=0)
    se = scores.std(axis=0, ddof=1) / math.sqrt(scores.shape[0])
    assert np.all(np.abs(mean) < 4.0 * se), (mean, se)
    assert score_numeric(WD, trajs) == pytest.approx(scores.sum(axis=0), rel=1e-12)

    info = sample_information(scores)
    assert np.allclose(info, info.T)
    assert np.all(np.linalg.eigvalsh(info) >= -1e-12)
    print(f"✅ mean score {mean} within 4 standard errors {se}")


def main():
    print("🚀 Likelihood Test Suite")
    print("=" * 60)
    tests = [
        test_trajectory_record,
        test_wd_killed_loglik_by_hand,
        test_wd_naive_loglik_by_hand,
        test_uncrossed_trajectory_has_no_g_term,
        test_killed_chain_matches_sequential_form,
        test_coffin_transitions,
        test_pooled_is_sum,
        test_failure_sentinels,
        test_sr_killed_loglik_finite,
        test_sr_pooled_loglik_with_last_state_near_threshold,
        test_wd_score_has_zero_mean,
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
    print(f"📊 Likelihood Test Results: {passed}/{len(tests)} tests passed")
    if passed != len(tests):
        sys.exit(1)


if __name__ == "__main__":
    main()
