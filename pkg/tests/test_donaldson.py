import numpy as np
import pytest
from hypothesis import given, strategies as st

from gclab.donaldson import (
    NoConvergence,
    Overflow,
    SolverConfig,
    codazzi_residual,
    continuation,
    default_schedule,
    energy,
    energy_gradient_u,
    gauss_residual,
    minimize,
    problem_for,
    solve_eta,
    solve_u,
    state_from,
    xi_data,
)
from gclab.fuchsian import dbar


@pytest.fixture(scope="module")
def beta_h(bb3):
    b = bb3.combine([1.0, 0.4 - 0.2j, 0.1j]).field
    return b / np.sqrt(np.sum(bb3.mesh.hyperbolic_areas * np.abs(b) ** 2))


@pytest.fixture(scope="module")
def trace(beta_h, mesh3):
    return continuation(beta_h, default_schedule(8), mesh3)


def rand(n, seed, cplx=False):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    return x + 1j * rng.normal(size=n) if cplx else x


@pytest.mark.parametrize("t", [1.0, 0.3, 1e-3])
def test_trivial_class_closed_form(mesh3, t):
    # oracle: with beta = 0 the minimizer is the constant ln(1/t) and F = area (1 + ln t)
    zero = np.zeros(mesh3.n_triangles, dtype=complex)
    s = minimize(zero, t, mesh3)
    assert np.allclose(s.u, np.log(1 / t), atol=1e-10)
    assert s.energy == pytest.approx(4 * np.pi * (1 + np.log(t)), rel=1e-10, abs=1e-10)
    assert np.allclose(s.f_t, 0, atol=1e-9)


def test_energy_at_origin_is_area(mesh3, beta_h):
    n = mesh3.n_dofs
    assert energy(np.zeros(n), np.zeros(n), np.zeros_like(beta_h), 1.0, mesh3) == pytest.approx(4 * np.pi, rel=1e-12)


def test_energy_depends_on_beta_only(mesh3, beta_h):
    # F depends on eta only through beta0 + dbar eta
    u, eta = 0.1 * rand(mesh3.n_dofs, 1), rand(mesh3.n_dofs, 2, True)
    eta_hat = rand(mesh3.n_dofs, 3, True)
    b2 = beta_h - dbar(mesh3, (1, 0)) @ eta_hat
    a = energy(u, eta, beta_h, 0.5, mesh3)
    b = energy(u, eta + eta_hat, b2, 0.5, mesh3)
    assert a == pytest.approx(b, rel=1e-11)


@given(st.integers(0, 10**6))
def test_gradient_matches_finite_differences(mesh3, beta_h, seed):
    u = 0.3 * rand(mesh3.n_dofs, seed)
    eta = 0.1 * rand(mesh3.n_dofs, seed + 1, True)
    v = rand(mesh3.n_dofs, seed + 2)
    h = 1e-5
    fd = (energy(u + h * v, eta, beta_h, 0.7, mesh3) - energy(u - h * v, eta, beta_h, 0.7, mesh3)) / (2 * h)
    g = energy_gradient_u(u, eta, beta_h, 0.7, mesh3)
    assert fd == pytest.approx(g @ v, rel=1e-6, abs=1e-8)
    assert np.allclose(gauss_residual(u, eta, beta_h, 0.7, mesh3), -2 * g)


def test_residual_affine_in_t(mesh3, beta_h):
    u, eta = 0.2 * rand(mesh3.n_dofs, 4), np.zeros(mesh3.n_dofs, complex)
    r = [gauss_residual(u, eta, beta_h, t, mesh3) for t in (0.0, 0.5, 1.0)]
    assert np.allclose(r[1], 0.5 * (r[0] + r[2]), atol=1e-12)


def test_eta_vanishes_for_harmonic_at_flat_u(mesh3, beta_h):
    eta = solve_eta(np.zeros(mesh3.n_dofs), beta_h, mesh3)
    assert np.linalg.norm(dbar(mesh3, (1, 0)) @ eta) <= 1e-6 * np.linalg.norm(beta_h)


def test_eta_cancels_exact_beta(mesh3):
    eta_hat = rand(mesh3.n_dofs, 5, True)
    b0 = dbar(mesh3, (1, 0)) @ eta_hat
    eta = solve_eta(0.3 * rand(mesh3.n_dofs, 6), b0, mesh3)
    assert np.allclose(eta, -eta_hat, atol=1e-8 * np.abs(eta_hat).max())


def test_eta_step_decreases_energy(mesh3, beta_h):
    u = 0.2 * rand(mesh3.n_dofs, 7)
    eta0 = 0.1 * rand(mesh3.n_dofs, 8, True)
    eta = solve_eta(u, beta_h, mesh3)
    assert energy(u, eta, beta_h, 0.5, mesh3) <= energy(u, eta0, beta_h, 0.5, mesh3)
    assert np.linalg.norm(codazzi_residual(u, eta, beta_h, mesh3)) < 1e-10


def test_newton_energy_monotone(mesh3, beta_h):
    from gclab.donaldson import NewtonInfo

    info = NewtonInfo()
    solve_u(np.zeros(mesh3.n_dofs, complex), beta_h, 0.1, mesh3, info=info)
    assert np.all(np.diff(info.energies) <= 1e-12 * np.abs(info.energies[:-1]))
    assert info.grad_norm <= SolverConfig().newton_tol


def test_unique_minimizer(mesh3, beta_h):
    ref = minimize(beta_h, 0.25, mesh3)
    for seed in range(5):
        s = minimize(beta_h, 0.25, mesh3, u_init=rand(mesh3.n_dofs, seed), eta_init=rand(mesh3.n_dofs, seed + 9, True))
        assert np.allclose(s.u, ref.u, atol=1e-7)
        assert s.energy == pytest.approx(ref.energy, rel=1e-10)


def test_warm_start_agrees_with_cold(trace, beta_h, mesh3):
    cold = minimize(beta_h, trace.records[-1].t, mesh3)
    assert np.allclose(cold.u, trace.states[-1].u, atol=1e-7)


def test_alternation_energies_descend(trace):
    for s in trace.states:
        e = np.array(s.energies)
        assert np.all(np.diff(e) <= 1e-10 * np.abs(e[:-1]))


def test_continuation_invariants(trace):
    rho = trace.column("rho")
    assert np.all(np.diff(rho) >= -1e-9)
    assert np.all(rho > 0) and np.all(rho < trace.area)
    # summed Gauss equation at a critical point
    assert np.allclose(rho + trace.column("t_int_eu"), trace.area, rtol=1e-8)
    assert np.all(trace.column("gauss_res") < 1e-8)
    assert np.all(trace.column("codazzi_res") < 1e-8)


def test_f_t_range(trace):
    for s in trace.states:
        assert s.f_t.min() >= -1e-6 and s.f_t.max() <= 2


def test_xi_normalization(trace, mesh3):
    s, xi, a2 = xi_data(trace.states[-1], mesh3)
    assert mesh3.dof_areas @ a2 == pytest.approx(1, rel=1e-12)
    assert np.allclose(xi, -trace.states[-1].u + s)


def test_state_roundtrip(trace, mesh3):
    s = trace.states[3]
    r = state_from(s.u, s.eta, s.beta0, s.t, mesh3)
    assert r.energy == s.energy and r.gauss_residual_norm == s.gauss_residual_norm


def test_overflow(mesh3, beta_h):
    with pytest.raises(Overflow):
        energy(np.full(mesh3.n_dofs, 701.0), np.zeros(mesh3.n_dofs), beta_h, 1.0, mesh3)


def test_schedule_and_t_validation(mesh3, beta_h):
    with pytest.raises(ValueError):
        continuation(beta_h, [1.0, 1.0], mesh3)
    with pytest.raises(ValueError):
        minimize(beta_h, 0.0, mesh3)
    with pytest.raises(ValueError):
        solve_u(np.zeros(mesh3.n_dofs), np.zeros_like(beta_h), 0.0, mesh3)


def test_no_convergence_carries_state(mesh3, beta_h):
    with pytest.raises(NoConvergence) as info:
        minimize(beta_h, 0.01, mesh3, SolverConfig(max_alternations=1, newton_tol=1e-14))
    assert info.value.state is not None


@pytest.mark.parametrize("kw", [{"damping": 1.5}, {"newton_tol": 0}, {"armijo": -1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_problem_cached(mesh3):
    assert problem_for(mesh3) is problem_for(mesh3)
    assert problem_for(mesh3).area == pytest.approx(4 * np.pi, rel=1e-12)
