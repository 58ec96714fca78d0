import numpy as np
import pytest
from scipy import stats

from ofu_lqr import CostPair, DynamicsParameter, NoiseModel, ParameterRegion
from ofu_lqr.exceptions import DomainError
from ofu_lqr.verify import (
    BoundReport,
    RegretConfig,
    ks_pvalue,
    ks_statistic,
    loglog_slope,
    normal_cdf,
    normalized_ratio,
    scaling_checks,
    verify_clt,
    verify_covariance_floor,
    verify_noise_bound,
    verify_optimism,
    verify_prediction,
    verify_regret_scaling,
    verify_series_limit,
)

A0 = DynamicsParameter([[0.0]], [[1.0]])
UNIT = CostPair([[1.0]], [[1.0]])


def test_report_rule():
    r = BoundReport("noise_bound_L4", 100, 10, 0.1)
    assert r.empirical_rate == 0.1 and r.passed
    r = BoundReport("noise_bound_L4", 1000, 150, 0.1)
    assert r.standard_error == pytest.approx(np.sqrt(0.15 * 0.85 / 1000))
    assert not r.passed
    assert r.to_dict()["verdict"] == "fail"
    with pytest.raises(DomainError):
        BoundReport("made_up", 1, 0, 0.1)


def test_noise_bound_bounded_and_gaussian():
    r = verify_noise_bound(NoiseModel.uniform(np.eye(2)), 100, 2, 0.1, 500, seed=1)
    assert r.failures == 0
    r = verify_noise_bound(NoiseModel.gaussian(np.eye(2)), 100, 2, 0.1, 2000, seed=1)
    assert r.passed
    with pytest.raises(DomainError):
        verify_noise_bound(NoiseModel.gaussian(np.eye(2)), 100, 2, 0.1, 0)


def test_covariance_floor_vacuous():
    r = verify_covariance_floor(A0, [[0.0]], NoiseModel.uniform([[1.0]]), 1.0, 0.1, 50, seed=0)
    assert r.metadata["floor"] <= 0
    assert r.failures == 0


def test_covariance_floor_bounded_example():
    r = verify_covariance_floor(A0, [[0.0]], NoiseModel.uniform([[1.0]]), 0.5, 0.1, 200, seed=2)
    assert r.metadata["n"] == 842
    assert r.passed


def test_unstable_loop_rejected():
    with pytest.raises(DomainError):
        verify_covariance_floor(DynamicsParameter([[1.5]], [[1.0]]), [[0.0]], NoiseModel.uniform([[1.0]]),
                                0.5, 0.1, 10)


def test_series_limit(scalar_theta, scalar_noise):
    from conftest import L_SCALAR
    assert verify_series_limit(scalar_theta, [[L_SCALAR]], scalar_noise, n=10**5, seed=3) < 0.05


def test_prediction_and_self_test():
    noise = NoiseModel.uniform([[1.0]])
    ok = verify_prediction(A0, [[0.0]], noise, 0.1, 100, seed=4)
    bad = verify_prediction(A0, [[0.0]], noise, 0.1, 100, seed=4, radius_multiplier=1e-6)
    assert ok.passed
    assert not bad.passed
    with pytest.raises(DomainError):
        NoiseModel.gaussian([[0.0]])


def test_ks_against_scipy():
    rng = np.random.default_rng(0)
    for n in (50, 400, 2000):
        x = rng.standard_normal(n) * 1.7
        ours = ks_statistic(x, normal_cdf(1.7))
        ref = stats.kstest(x, stats.norm(scale=1.7).cdf)
        assert ours == pytest.approx(ref.statistic, rel=1e-12)
        assert ks_pvalue(ours, n) == pytest.approx(ref.pvalue, abs=0.03)


def test_ks_detects_wrong_scale():
    x = np.random.default_rng(1).standard_normal(1000) * 2.0
    assert ks_pvalue(ks_statistic(x, normal_cdf(1.0)), 1000) < 1e-6


def test_clt_requires_replications():
    with pytest.raises(DomainError):
        verify_clt(A0, UNIT, NoiseModel.gaussian([[1.0]]), 100, 1)


def test_clt_degenerate_a_zero():
    r = verify_clt(A0, UNIT, NoiseModel.gaussian([[1.0]]), 2000, 300, seed=5)
    assert r.metadata["sigma2"] == pytest.approx(2.0)
    assert r.passed, r.metadata


def test_slope_helpers():
    T = np.array([1e3, 1e4, 1e5])
    assert loglog_slope(T, 3 * np.sqrt(T)) == pytest.approx(0.5)
    ratio = normalized_ratio(T, np.sqrt(T))
    assert np.all(np.diff(ratio) < 0)
    assert scaling_checks(T, np.sqrt(T))["slope_ok"]
    assert not scaling_checks(T, T)["slope_ok"]
    assert not scaling_checks(T, T)["ratio_ok"]


def _config(scalar_theta, unit_cost, scalar_noise):
    return RegretConfig(scalar_theta, unit_cost, scalar_noise, ParameterRegion(scalar_theta, 0.2),
                        delta=0.1, gamma=3.0, scale=1e-4, radius_scale=1.5e-4, samples=50, name="scalar")


def test_regret_scaling_needs_grid(scalar_theta, unit_cost, scalar_noise):
    with pytest.raises(DomainError):
        verify_regret_scaling(_config(scalar_theta, unit_cost, scalar_noise), [1000], 2)


def test_optimal_anchor(scalar_theta, unit_cost, scalar_noise):
    r = verify_regret_scaling(_config(scalar_theta, unit_cost, scalar_noise), [1000, 10_000, 100_000], 100,
                              policy="optimal")
    assert r.passed, r.metadata
    assert abs(r.metadata["slope"] - 0.5) < 0.15


def test_reports_are_reproducible(scalar_theta, unit_cost, scalar_noise):
    a = verify_regret_scaling(_config(scalar_theta, unit_cost, scalar_noise), [500, 1000, 2000], 3)
    b = verify_regret_scaling(_config(scalar_theta, unit_cost, scalar_noise), [500, 1000, 2000], 3, threads=2)
    assert a.to_dict() == b.to_dict()
    c = verify_prediction(A0, [[0.0]], NoiseModel.uniform([[1.0]]), 0.1, 20, seed=9)
    d = verify_prediction(A0, [[0.0]], NoiseModel.uniform([[1.0]]), 0.1, 20, seed=9)
    assert c.to_dict() == d.to_dict()


def test_optimism_small(scalar_theta, unit_cost, scalar_noise):
    rep = verify_optimism(_config(scalar_theta, unit_cost, scalar_noise), 5000, 5)
    assert rep.runs == 5
    assert rep.optimism_violations == 0
    assert rep.passed()


def test_check_list_reports_have_no_slack():
    assert not BoundReport("regret_scaling_T2", 2, 1, 0.0, sampled=False).passed
    assert BoundReport("regret_scaling_T2", 2, 0, 0.0, sampled=False).passed
    # the Monte Carlo rule would wave a single failed check through
    assert BoundReport("regret_scaling_T2", 2, 1, 0.0).passed


def test_excess_statistic_vanishes_without_uncertainty(scalar_theta, unit_cost, scalar_noise):
    cfg = RegretConfig(scalar_theta, unit_cost, scalar_noise, ParameterRegion(scalar_theta, 0.0),
                       gamma=3.0, scale=1e-4, samples=5)
    r = verify_regret_scaling(cfg, [500, 1000, 2000], 3)
    assert r.metadata["statistic"] == "excess"
    assert np.allclose(r.metadata["median_excess_regret"], 0.0, atol=1e-8)
    assert not r.passed
    with pytest.raises(DomainError):
        verify_regret_scaling(cfg, [500, 1000, 2000], 3, statistic="mean")


def test_scaling_checks_reject_nonpositive():
    c = scaling_checks([10, 100, 1000], [1.0, -1.0, 5.0])
    assert not c["slope_ok"] and not c["ratio_ok"]
