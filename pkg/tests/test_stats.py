from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erosion import stats
from erosion.generator import PwLinear, apply_generator_many
from erosion.npoint import erosion_theta_family, sample_npoint_erosion
from erosion.paths import CouplingParams, PathPair, TimeGrid, sample_coalescing_pair, sample_pn_pair, sample_theta_pair
from erosion.stats import EstimateWithError, TestReport


def test_estimate_basics():
    e = stats.estimate([1.0, 2.0, 3.0, 4.0])
    assert e.value == 2.5 and e.replicas == 4
    assert e.std_error == pytest.approx(math.sqrt(np.var([1, 2, 3, 4], ddof=1) / 4))
    assert stats.estimate([5.0]).std_error == math.inf
    with pytest.raises(ValueError):
        stats.estimate([])
    with pytest.raises(ValueError):
        EstimateWithError(0.0, -1.0, 3)
    with pytest.raises(ValueError):
        EstimateWithError(0.0, 1.0, 0)
    assert EstimateWithError(1.0, 0.5, 4).z_score(0.0) == 2.0
    assert EstimateWithError(1.0, 0.0, 4).z_score(1.0) == 0.0


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.randoms())
def test_estimate_is_order_independent(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert stats.estimate(xs).value == stats.estimate(ys).value


def test_standard_error_scaling():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40000)
    small, large = stats.estimate(x[:10000]), stats.estimate(x)
    assert abs(large.std_error / small.std_error - 0.5) <= 0.1


def test_ratio_estimate():
    rng = np.random.default_rng(1)
    den = rng.random(1000) + 0.5
    r = stats.ratio_estimate(2 * den, den)
    assert r.value == pytest.approx(2.0) and r.std_error == pytest.approx(0.0, abs=1e-15)
    # delta method against the spread of independent ratio estimates
    ests = []
    for _ in range(400):
        b = rng.random(200) + 0.5
        a = b + rng.normal(0, 0.3, 200)
        ests.append(stats.ratio_estimate(a, b))
    spread = np.std([e.value for e in ests])
    assert np.mean([e.std_error for e in ests]) == pytest.approx(spread, rel=0.15)
    with pytest.raises(ValueError):
        stats.ratio_estimate([1.0], [1.0])
    with pytest.raises(ValueError):
        stats.ratio_estimate([1.0, 2.0], [1.0, -1.0])


def test_occupation_extremes():
    grid = TimeGrid.over(1.0, 256)
    assert stats.occupation_diagonal(sample_coalescing_pair(0.0, 0.0, grid, seed=1)) == pytest.approx(1.0)
    indep = sample_pn_pair(0.0, 1.0, 1.0, 256, seed=2)
    assert stats.occupation_diagonal(indep) == 0.0


@pytest.mark.slow
def test_occupation_matches_tanaka_oracle():
    rng = np.random.default_rng(3)
    params = CouplingParams(0.0, 0.0, 1.0)
    occ, gap = [], []
    for _ in range(2000):
        pair, _ = sample_theta_pair(0.0, 0.0, params, TimeGrid.over(1.0, 64), fine_factor=16, seed=rng)
        occ.append(stats.occupation_diagonal(pair))
        gap.append(abs(pair.diff[-1]) / 2.0)
    d = stats.estimate(np.array(occ) - np.array(gap))
    assert np.mean(occ) > 0
    assert d.z_score(0.0) <= 4


def test_downcrossing_edge_cases():
    grid = TimeGrid.over(1.0, 10)
    assert stats.local_time_downcrossing(np.zeros(11), grid, 0.01) == 0.0
    with pytest.raises(ValueError):
        stats.local_time_downcrossing(np.zeros(11), grid, 0.0)
    with pytest.raises(ValueError):
        stats.local_time_downcrossing(np.zeros(5), grid, 0.1)
    zigzag = np.array([0.0, 0.2, 0.0, 0.2, -0.2, 0.05, 0.3, 0.0, 0.3, 0.0, 0.0])
    # sign changes count as passages through 0
    assert stats.local_time_downcrossing(zigzag, grid, 0.1) == pytest.approx(0.1 * 5)
    with pytest.raises(ValueError):
        stats.local_time_downcrossing(zigzag, None, 0.1, rng=1)


def test_downcrossing_against_reflected_motion():
    # difference of two independent standard motions: E L_1 = E|Y_1| = sqrt(4/pi)
    rng = np.random.default_rng(4)
    n, reps, eps = 2**14, 2000, 0.05
    grid = TimeGrid.over(1.0, n)
    est = []
    for _ in range(reps):
        y = np.concatenate(([0.0], np.cumsum(rng.normal(0.0, math.sqrt(2.0 / n), n))))
        est.append(stats.local_time_downcrossing(y, grid, eps, rng=rng))
    e = stats.estimate(est)
    # the count misses at most the cycle in progress, worth about eps
    target = math.sqrt(4 / math.pi)
    assert target - eps - 4 * e.std_error <= e.value <= target + 4 * e.std_error


def test_bridge_counting_agrees_with_grid_on_fine_paths():
    rng = np.random.default_rng(11)
    n = 2**16
    grid = TimeGrid.over(1.0, n)
    y = np.concatenate(([0.0], np.cumsum(rng.normal(0.0, math.sqrt(2.0 / n), n))))
    plain = stats.local_time_downcrossing(y, grid, 0.5)
    bridged = stats.local_time_downcrossing(y, grid, 0.5, rng=rng)
    assert abs(plain - bridged) <= 0.5
    assert stats.local_time_downcrossing(np.zeros(n + 1), grid, 0.5, rng=rng) == 0.0


def test_quad_covariation():
    n = 4096
    grid = TimeGrid.over(1.0, n)
    rng = np.random.default_rng(5)
    w = np.concatenate(([0.0], np.cumsum(rng.normal(0, math.sqrt(1 / n), n))))
    v = np.concatenate(([0.0], np.cumsum(rng.normal(0, math.sqrt(1 / n), n))))
    same = PathPair(grid, w, w.copy(), np.ones(n + 1, dtype=bool))
    assert abs(stats.quad_covariation(same) - 1.0) <= 4 * math.sqrt(2 / n)
    apart = PathPair(grid, w, v + 10.0, np.zeros(n + 1, dtype=bool))
    assert abs(stats.quad_covariation(apart)) <= 4 * math.sqrt(1 / n)


def test_ks_two_sample_power_and_calibration():
    rng = np.random.default_rng(6)
    a = rng.standard_normal(10000)
    same = stats.ks_two_sample(a, a)
    assert same.statistic == 0.0 and same.passed
    assert not stats.ks_two_sample(a, rng.standard_normal(10000) + 1.0).passed
    passes = sum(stats.ks_two_sample(rng.standard_normal(10000), rng.standard_normal(10000)).passed
                 for _ in range(200))
    assert passes >= 196
    with pytest.raises(ValueError):
        stats.ks_two_sample([], a)
    with pytest.raises(ValueError):
        stats.ks_critical_value(1.5, 10, 10)


def test_ks_normal():
    rng = np.random.default_rng(7)
    assert stats.ks_normal(rng.normal(2.0, 3.0, 5000), 2.0, 3.0).passed
    assert not stats.ks_normal(rng.normal(0.0, 1.2, 5000)).passed
    with pytest.raises(ValueError):
        stats.ks_normal([])


def test_test_report():
    r = TestReport.compare(1.5, 2.0, "x")
    assert r.passed and TestReport.from_json(r.to_json()) == r
    assert not TestReport.compare(2.5, 2.0, "x").passed
    assert TestReport.compare(2.0, 2.0, "x").passed
    assert stats.two_sided_z(0.0026998) == pytest.approx(3.0, abs=1e-4)
    with pytest.raises(ValueError):
        stats.two_sided_z(0.0)
    assert stats.zero_mean_report([1.0, -1.0, 1.0, -1.0]).passed
    assert not stats.zero_mean_report([1.0, 1.1, 0.9, 1.0]).passed


def _erosion_sampler(theta, n_switch, sub_steps):
    def sample(x0, t, rng):
        return sample_npoint_erosion(x0, theta, t, n_switch, sub_steps, seed=rng)

    return sample


def test_drift_statistics_branches_agree():
    rng = np.random.default_rng(8)
    fam = erosion_theta_family(1.0)
    f = PwLinear(3, a=[0.5, -1.0, 0.25], b=[[0, 1, -0.5], [0, 0, 2], [0, 0, 0]], c=0.5)
    bundles = [sample_npoint_erosion([0.0, 0.0, 0.3], 1.0, 1.0, 64, 2, seed=rng) for _ in range(20)]
    fast = stats.drift_statistics(bundles, f, fam)
    slow = stats.drift_statistics(bundles, f, fam, tol=1e-300)
    assert np.allclose(fast, slow, rtol=0, atol=1e-12)
    b = bundles[0]
    gen = apply_generator_many(fam, f, b.paths[:-1])
    want = f.evaluate(b.paths[-1]) - f.evaluate(b.paths[0]) - math.fsum(gen * b.grid.dt)
    assert fast[0] == pytest.approx(want, abs=1e-12)
    mid = stats.drift_statistics(bundles, f, fam, quad_points=32)
    assert mid.shape == (20,)
    with pytest.raises(ValueError):
        stats.drift_statistics([], f, fam)


def test_martingale_drift_linear_function_passes():
    fam = erosion_theta_family(1.0)
    f = PwLinear.linear([1.0, -2.0, 0.5])
    rep = stats.martingale_drift_test(_erosion_sampler(1.0, 64, 2), f, fam, [0.0, 0.0, 0.5], 1.0,
                                      replicas=1000, seed=9)
    assert rep.passed
