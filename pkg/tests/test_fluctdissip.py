import warnings

import numpy as np
import pytest

from fnls import dynamics
from fnls.basis import build_basis, smooth_random_coeffs
from fnls.dynamics import FlowParams, Propagator
from fnls.errors import InsufficientEnsemble, Overflow, StiffnessWarning
from fnls.fluctdissip import (Branch, DissipationSpec, EnsembleConfig, NoiseSpec, SdeState,
                              StochasticStepper, Xi, brownian_increments, diss_rate_energy,
                              diss_rate_mass, diss_rate_mass_closed, dissipation_apply,
                              ito_mass_balance, make_rng, ou_discrete_second_moment,
                              ou_stationary_second_moment, prefactor, resolve_threads,
                              run_ensemble, step_stochastic)


@pytest.fixture
def ball():
    return build_basis("ball", 3, 12)


def test_xi_inverse_pairs():
    x = np.linspace(0.5, 4, 8)
    for xi in Xi:
        assert np.allclose(xi(xi.inverse(x)), x)
    assert Xi.LOG(np.e - 1.0) == pytest.approx(1.0)


def test_spec_constraints():
    with pytest.raises(ValueError, match="sigma"):
        DissipationSpec(1.5, 1.0)
    with pytest.raises(ValueError, match="low-regularity"):
        DissipationSpec(0.5, 1.6, branch="low")
    spec = DissipationSpec(1.0, 1.2, branch="high")
    with pytest.raises(ValueError, match="high-regularity"):
        spec.check_dimension(3)
    spec.check_dimension(2)
    assert DissipationSpec(1.0, 1.5, alpha=0.0).alpha == 0.0
    with pytest.raises(ValueError):
        DissipationSpec(1.0, 1.5, alpha=1.0)


@pytest.mark.parametrize("branch,s", [("low", 1.5), ("high", 2.0)])
def test_mass_rate_closed_form(ball, branch, s):
    spec = DissipationSpec(1.0, s, branch=branch)
    c = smooth_random_coeffs(ball, np.random.default_rng(0), amplitude=0.5, size=3)
    assert np.allclose(diss_rate_mass(ball, c, spec), diss_rate_mass_closed(ball, c, spec), rtol=1e-12)
    assert np.all(diss_rate_mass(ball, c, spec) > 0)


def test_energy_rate_is_nonnegative_low_branch(ball):
    # the cross term <(-Delta)^sigma u, p |u|^2 u> is non-negative by the Cordoba-Cordoba inequality
    spec = DissipationSpec(1.0, 1.5)
    c = smooth_random_coeffs(ball, np.random.default_rng(1), amplitude=2.0, size=50)
    assert np.all(diss_rate_energy(ball, c, spec) > 0)


def test_prefactor_and_overflow(ball):
    spec = DissipationSpec(1.0, 1.5)
    c = np.zeros(ball.n_modes, dtype=complex)
    assert prefactor(ball, c, spec) == pytest.approx(1.0)
    c[0] = 1.0
    norm = dynamics.sobolev_norm(ball, c, 1.45)
    assert prefactor(ball, c, spec) == pytest.approx(np.exp(norm))
    with pytest.raises(Overflow):
        prefactor(ball, 1e3 * c, spec)
    with pytest.raises(Overflow):
        prefactor(ball, 10 * c, DissipationSpec(1.0, 1.5, xi="log"))


def test_dissipation_linear_part_high_branch(ball):
    spec = DissipationSpec(1.0, 2.0, branch="high")
    c = np.zeros(ball.n_modes, dtype=complex)
    c[1] = 0.1
    p = prefactor(ball, c, spec)
    assert np.allclose(dissipation_apply(ball, c, spec), (ball.z ** 2.0 + p) * c)


def test_noise_default_and_A(ball):
    noise = NoiseSpec.default(ball, a0=2.0, sigma=1.0)
    assert np.allclose(np.abs(noise.a), 2.0 * (1 + ball.z) ** -3.5)
    assert noise.A(ball, 0.0) == pytest.approx(np.sum(np.abs(noise.a) ** 2))
    assert NoiseSpec.zero(ball).A(ball, 1.0) == 0.0


def test_brownian_increment_moments():
    rng = make_rng(0, 0)
    db = brownian_increments(4, 0.01, rng, size=200_000)
    assert np.allclose(db.var(axis=0), 0.01, rtol=0.02)
    dc = brownian_increments(4, 0.01, rng, circular=True, size=200_000)
    assert np.allclose(np.mean(np.abs(dc) ** 2, axis=0), 0.01, rtol=0.02)
    assert np.all(brownian_increments(3, 0.0, rng) == 0)


def test_alpha_zero_reduces_to_hamiltonian(ball):
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, 1.5, alpha=0.0)
    noise = NoiseSpec.default(ball, 100.0)
    c = smooth_random_coeffs(ball, np.random.default_rng(2))
    st = step_stochastic(SdeState(c, 0.0, 0, 0), flow, spec, noise, ball)
    assert np.allclose(st.c, Propagator(ball, flow).step(c), atol=1e-15)
    assert st.t == pytest.approx(0.01)


def test_alpha_zero_ensemble_balance_is_exact(ball):
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, 1.5, alpha=0.0)
    noise = NoiseSpec.default(ball, 100.0)
    c0 = smooth_random_coeffs(ball, np.random.default_rng(3), size=100)
    res = run_ensemble(ball, flow, spec, noise, c0, EnsembleConfig(T=1.0, stride=10))
    rep = ito_mass_balance(res, 0.0, noise.A(ball, 0.0))
    assert np.max(np.abs(rep.residual)) <= 1e-6


def test_dissipation_reduces_mass_without_noise(ball):
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, 1.5, alpha=0.5)
    c0 = smooth_random_coeffs(ball, np.random.default_rng(4), size=5)
    res = run_ensemble(ball, flow, spec, NoiseSpec.zero(ball), c0, EnsembleConfig(T=2.0, stride=20))
    m = res.observables["mass"]
    assert np.all(np.diff(m, axis=1) < 0)


def test_ensemble_reproducible_and_batch_independent(ball):
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, 1.5)
    noise = NoiseSpec.default(ball, 100.0)
    c0 = np.zeros((6, ball.n_modes), dtype=complex)
    cfg = EnsembleConfig(T=0.5, stride=5, seed=11, chunk=16, block=4)
    a = run_ensemble(ball, flow, spec, noise, c0, cfg)
    b = run_ensemble(ball, flow, spec, noise, c0, cfg, threads=2)
    assert np.array_equal(a.final, b.final)
    assert np.array_equal(a.observables["energy"], b.observables["energy"])
    # a trajectory's path depends only on its stream, up to rounding from the batch shape
    single = run_ensemble(ball, flow, spec, noise, c0[3:4], cfg, streams=[3])
    assert np.allclose(single.final[0], a.final[3], rtol=0, atol=1e-13)
    other = run_ensemble(ball, flow, spec, noise, c0, EnsembleConfig(T=0.5, stride=5, seed=12))
    assert not np.allclose(other.final, a.final)


def test_streams_do_not_depend_on_chunk(ball):
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, 1.5)
    noise = NoiseSpec.default(ball, 100.0)
    c0 = np.zeros((2, ball.n_modes), dtype=complex)
    a = run_ensemble(ball, flow, spec, noise, c0, EnsembleConfig(T=0.3, chunk=7))
    b = run_ensemble(ball, flow, spec, noise, c0, EnsembleConfig(T=0.3, chunk=256))
    assert np.array_equal(a.final, b.final)


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("FNLS_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("FNLS_THREADS")
    assert resolve_threads(None) >= 1


@pytest.mark.parametrize("branch,s", [("low", 1.5), ("high", 2.0)])
def test_ou_closed_form(branch, s):
    basis = build_basis("ball", 3, 4)
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, s, alpha=0.2, branch=branch)
    noise = NoiseSpec.default(basis, 5.0)
    obs = {f"c{j}": (lambda c, j=j: np.abs(c[..., j]) ** 2) for j in range(3)}
    cfg = EnsembleConfig(T=40.0, stride=10, seed=5, hamiltonian_nonlinear=False, freeze_unit_prefactor=True)
    res = run_ensemble(basis, flow, spec, noise, np.zeros((400, 4), dtype=complex), cfg, obs)
    keep = res.times >= 15.0
    for j in range(3):
        got = res.observables[f"c{j}"][:, keep].mean()
        assert got == pytest.approx(ou_discrete_second_moment(basis, noise, spec, j, flow.dt), rel=0.04)
        if spec.alpha * flow.dt * basis.z[j] ** (2 * (s - 1)) < 0.05:
            assert got == pytest.approx(ou_stationary_second_moment(basis, noise, spec, j), rel=0.05)


def test_ou_discrete_tends_to_continuum():
    basis = build_basis("ball", 3, 4)
    spec = DissipationSpec(1.0, 2.0, alpha=0.2, branch="high")
    noise = NoiseSpec.default(basis, 5.0)
    cont = ou_stationary_second_moment(basis, noise, spec, 3)
    disc = [ou_discrete_second_moment(basis, noise, spec, 3, dt) for dt in (1e-2, 1e-4, 1e-6)]
    assert disc[0] > disc[1] > disc[2] > cont
    assert disc[2] == pytest.approx(cont, rel=1e-4)


def test_ito_balance_small_ensemble(ball):
    flow = FlowParams(1.0, 0.01)
    spec = DissipationSpec(1.0, 1.5, alpha=0.1)
    noise = NoiseSpec.default(ball, 100.0)
    cfg = EnsembleConfig(T=2.0, stride=10, seed=1, track_martingale=True)
    res = run_ensemble(ball, flow, spec, noise, np.zeros((200, ball.n_modes), dtype=complex), cfg)
    rep = ito_mass_balance(res, spec.alpha, noise.A(ball, 0.0))
    assert rep.within(3.0)
    # removing the realized martingale leaves only the discretization bias
    assert np.max(np.abs(rep.compensated)) < 0.5 * np.max(rep.se)
    with pytest.raises(InsufficientEnsemble):
        ito_mass_balance(res, spec.alpha, noise.A(ball, 0.0), min_trajectories=500)


def test_stiffness_warning(ball):
    spec = DissipationSpec(1.0, 1.5, alpha=0.9)
    stepper = StochasticStepper(ball, FlowParams(1.0, 1.0), spec, NoiseSpec.zero(ball))
    with pytest.warns(StiffnessWarning):
        stepper.step(np.zeros(ball.n_modes, dtype=complex), np.zeros(ball.n_modes))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        StochasticStepper(ball, FlowParams(1.0, 1e-3), DissipationSpec(1.0, 1.5), NoiseSpec.zero(ball)).step(
            np.zeros(ball.n_modes, dtype=complex), np.zeros(ball.n_modes))


def test_sigma_mismatch_rejected(ball):
    with pytest.raises(ValueError):
        StochasticStepper(ball, FlowParams(0.5, 0.01), DissipationSpec(1.0, 1.5), NoiseSpec.zero(ball))


def test_branch_enum():
    assert Branch("low") is Branch.LOW
