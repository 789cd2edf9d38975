#!/usr/bin/env python3
"""
Test script for the Monte Carlo study harness
Group fits, summaries, confidence intervals and figure tables
"""

import sys
import traceback

import numpy as np
import pandas as pd
import pytest

from src.core.exceptions import ConfigError
from src.core.likelihood import Objective
from src.core.models import ThresholdConfig, WDModel
from src.evaluation.study import (
    FigureKind,
    export_figure_data,
    mean_bias_ci,
    normal_qq,
    qq_correlation,
    run_study,
    summaries_frame,
)
from src.simulation.simulate import SimPlan


PLAN = SimPlan(model=WDModel(mu=1.0, sigma=1.0), cfg=ThresholdConfig(b=3.0, x0=0.0, delta=0.5), n_traj=12, seed=99)


def test_mean_bias_ci():
    print("🧪 Testing the mean relative bias interval...")
    low, high = mean_bias_ci([0.9, 1.1], 1.0)
    assert low == pytest.approx(-1.2706, rel=1e-4)
    assert high == pytest.approx(1.2706, rel=1e-4)
    low, high = mean_bias_ci([2.2, 2.2, 2.2], 2.0)
    assert low == pytest.approx(0.1) and high == pytest.approx(0.1)
    with pytest.raises(ValueError):
        mean_bias_ci([1.0], 1.0)
    print("✅ t interval reproduced")


def test_qq_helpers():
    values = np.random.default_rng(4).standard_normal(500)
    assert qq_correlation(values) >= 0.99
    theoretical, sample = normal_qq(values)
    assert theoretical.shape == sample.shape == (500,)
    assert np.all(np.diff(sample) >= 0)
    assert np.isnan(qq_correlation([1.0, 2.0]))
    assert np.isnan(qq_correlation([3.0, 3.0, 3.0, 3.0]))


def test_run_study_rejects_small_totals():
    with pytest.raises(ConfigError):
        run_study(PLAN, group_sizes=[1, 30], n_total=12, n_workers=1)


def test_tiny_wd_study():
    print("🧪 Testing a tiny WD study...")
    result = run_study(PLAN, group_sizes=[3, 1], n_total=12, n_workers=1)
    assert len(result.summaries) == 4
    assert [(s.objective, s.group_size) for s in result.summaries] == [
        (Objective.KILLED, 1), (Objective.KILLED, 3), (Objective.NAIVE, 1), (Objective.NAIVE, 3),
    ]
    assert [s.n_replicates for s in result.summaries] == [12, 4, 12, 4]
    assert result.estimates_for(Objective.KILLED, 3).shape == (4, 2)
    with pytest.raises(KeyError):
        result.estimates_for(Objective.KILLED, 10)

    summary = result.summaries[1]
    assert summary.avg_N > 1.0
    mu = summary.parameters["mu"]
    assert mu.true == 1.0
    assert mu.q025 <= mu.mean <= mu.q975
    assert mu.rel_bias == pytest.approx((mu.mean - 1.0) / 1.0, rel=1e-12)

    frame = summaries_frame(result.summaries)
    assert len(frame) == 8
    assert list(frame.columns[:4]) == ["model", "objective", "group_size", "parameter"]
    assert set(frame["model"]) == {"WD"}

    again = run_study(PLAN, group_sizes=[1, 3], n_total=12, n_workers=1)
    pd.testing.assert_frame_equal(summaries_frame(again.summaries), frame)
    print(f"✅ {len(frame)} summary rows reproduced")


def test_figure_tables():
    print("🧪 Testing figure data export...")
    result = run_study(PLAN, objectives=[Objective.KILLED], group_sizes=[1, 3], n_total=12, n_workers=1)

    ci = export_figure_data(result, FigureKind.CI_VS_M)
    assert list(ci.columns) == ["parameter", "group_size", "rel_bias", "ci_low", "ci_high"]
    assert len(ci) == 4
    assert np.all(ci["ci_low"] <= ci["rel_bias"]) and np.all(ci["rel_bias"] <= ci["ci_high"])

    qq = export_figure_data(result, "qq_normal")
    assert list(qq.columns) == ["parameter", "theoretical", "sample"]
    assert len(qq) == 24

    density = export_figure_data(result, FigureKind.DENSITY, group_size=1, grid_points=50)
    assert list(density.columns) == ["parameter", "x", "density"]
    assert len(density) == 100
    assert np.all(density["density"] >= 0)

    assert export_figure_data(result, FigureKind.CI_VS_M, objective=Objective.NAIVE).empty
    print("✅ CI, Q-Q and density tables exported")


def main():
    print("🚀 Study Harness Test Suite")
    print("=" * 60)
    tests = [
        test_mean_bias_ci,
        test_qq_helpers,
        test_run_study_rejects_small_totals,
        test_tiny_wd_study,
        test_figure_tables,
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
    print(f"📊 Study Test Results: {passed}/{len(tests)} tests passed")
    if passed != len(tests):
        sys.exit(1)


if __name__ == "__main__":
    main()
