import numpy as np
import pytest
from scipy import stats

from fnls.basis import build_basis, smooth_random_coeffs
from fnls.dynamics import FlowParams
from fnls.errors import InsufficientEnsemble, InsufficientSamples
from fnls.fluctdissip import DissipationSpec
from fnls.measures import (EmpiricalMeasure, ObservableSeries, StationaryRun, balance_identity_check,
                           growth_bound_fit, ks_bootstrap, ks_calibration, ks_statistic,
                           moment_bound_sweep, stationarity_test, time_average_measure)


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(0)
    for n, m in ((10, 15), (100, 100), (37, 250)):
        x, y = rng.standard_normal(n), rng.standard_normal(m) + 0.3
        assert ks_statistic(x, y) == pytest.approx(stats.ks_2samp(x, y).statistic, abs=1e-14)


def test_ks_statistic_with_ties_matches_scipy():
    rng = np.random.default_rng(1)
    x, y = rng.integers(0, 5, 60).astype(float), rng.integers(0, 6, 40).astype(float)
    assert ks_statistic(x, y) == pytest.approx(stats.ks_2samp(x, y).statistic, abs=1e-14)


def test_ks_statistic_vectorized():
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((5, 30)), rng.standard_normal((5, 20))
    batch = ks_statistic(x, y)
    assert np.allclose(batch, [ks_statistic(a, b) for a, b in zip(x, y)])


def test_ks_bootstrap_behaviour():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(200)
    same = ks_bootstrap(x, x.copy(), 199, rng)
    assert same.statistic == 0.0 and same.p_value == 1.0 and not same.reject
    shifted = ks_bootstrap(x, rng.standard_normal(200) + 1.0, 199, rng)
    assert shifted.reject and shifted.p_value < 0.01
    with pytest.raises(InsufficientSamples):
        ks_bootstrap(x[:1], x, 9, rng)


def test_ks_calibration_small():
    # null rejections stay rare; a strong drift is always caught
    assert ks_calibration(repetitions=200, n=50, n_boot=199, seed=4) <= 0.04
    assert ks_calibration(repetitions=20, n=50, n_boot=99, seed=4, drift=6.0) == 1.0


def test_observable_series_validation():
    with pytest.raises(ValueError):
        ObservableSeries("m", [0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        ObservableSeries("m", [0.0, 1.0], [1.0, np.nan])


def test_time_average_measure_burn_in_and_se():
    rng = np.random.default_rng(5)
    t = np.linspace(0, 10, 1001)
    x = rng.standard_normal((40, t.size)) + 2.0
    m = time_average_measure(t, {"x": x}, burn_in=0.2)
    assert m.times[0] == pytest.approx(2.0)
    assert m.samples["x"].shape == (40, 801)
    assert m.mean("x") == pytest.approx(2.0, abs=4 * m.se("x"))
    # i.i.d. samples: batch-means SE equals the naive SE up to sampling noise
    assert m.se("x") == pytest.approx(1 / np.sqrt(40 * 801), rel=0.15)
    assert m.trajectory_means("x").shape == (40,)
    with pytest.raises(InsufficientEnsemble):
        time_average_measure(t, {"x": x}, min_trajectories=100)
    with pytest.raises(InsufficientSamples):
        time_average_measure(t, {"x": x}, burn_in=5000)


def test_batch_means_capture_correlation():
    rng = np.random.default_rng(6)
    # AR(1) with strong correlation: the naive SE underestimates, batch means do not
    n, phi = 6000, 0.95
    e = rng.standard_normal((20, n))
    x = np.zeros_like(e)
    for i in range(1, n):
        x[:, i] = phi * x[:, i - 1] + e[:, i]
    m = EmpiricalMeasure({"x": x}, np.arange(n, dtype=float))
    true_se = np.sqrt((1 + phi) / (1 - phi) / (1 - phi**2) / x.size)
    assert m.se("x") == pytest.approx(true_se, rel=0.3)


def test_stationarity_test_accepts_stationary_and_rejects_drift():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 10, 201)
    flat = rng.standard_normal((500, t.size))
    m = time_average_measure(t, {"x": flat, "y": flat + t * 0.5}, burn_in=0)
    out = stationarity_test(m, lag=5.0, window=4.0, n_boot=199, seed=1)
    assert not out["x"].reject
    assert out["y"].reject
    with pytest.raises(InsufficientSamples):
        stationarity_test(m, lag=8.0, window=4.0)


@pytest.fixture(scope="module")
def small_run():
    run = StationaryRun(N=8, alpha=0.2, T=20.0, n_traj=60, stride=10)
    return run.run()


def test_stationary_run_balance_identity(small_run):
    measure, res, (basis, _, _, noise) = small_run
    assert res.observables["mass"].shape == (60, 201)
    check = balance_identity_check(measure, noise, basis)
    assert check.target == pytest.approx(0.5 * noise.A(basis, 0.0))
    assert check.passed, (check.mean, check.target, check.se)


def test_empirical_mass_is_positive(small_run):
    measure = small_run[0]
    assert measure.mean("mass") > 0 and measure.mean("energy_rate") > 0


def test_moment_sweep_small():
    base = StationaryRun(n_traj=20, stride=10, T=5.0)
    rep = moment_bound_sweep(base, Ns=(4, 8), alphas=(0.4, 0.2), T_scale=2.0)
    assert len(rep.cells) == 4
    assert rep.ratio() >= 1.0
    assert rep.passed
    assert {c["N"] for c in rep.cells} == {4, 8}


def test_growth_bound_fit_finite():
    basis = build_basis("ball", 3, 8)
    spec = DissipationSpec(1.0, 1.5)
    c0 = smooth_random_coeffs(basis, np.random.default_rng(8), size=3)
    rep = growth_bound_fit(basis, c0, FlowParams(1.0, 0.01), spec, T=5.0)
    assert rep.c_star.shape == (3,)
    assert np.all(np.isfinite(rep.c_star)) and np.all(rep.c_star > 0)
    assert 0.0 <= rep.early_fraction <= 1.0
