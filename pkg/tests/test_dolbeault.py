import numpy as np
import pytest
from hypothesis import given, strategies as st

from gclab.dolbeault import (
    EXPECTED_DIM,
    GapTooSmall,
    beltrami_norm,
    beta_from_covector,
    discrete_qd,
    dolbeault_decompose,
    hodge_star_E,
    hodge_star_E_inv,
    holomorphic_basis,
    inner,
    pairing_residual,
    poincare_constant,
    qd_point_conditions,
    wedge_pair,
)
from gclab.fuchsian import dbar, integrate, poincare_factor, pointwise_norm2

cvec = st.lists(st.floats(-2, 2), min_size=6, max_size=6).map(lambda v: np.array(v[:3]) + 1j * np.array(v[3:]))


@pytest.mark.parametrize("weight", sorted(EXPECTED_DIM))
def test_kernel_dimensions(mesh3, weight):
    b = holomorphic_basis(mesh3, weight, min_gap=1.0)
    assert b.dim == EXPECTED_DIM[weight]


def test_gap_too_small_carries_basis(mesh3):
    # at refinement 3 the quadratic-differential gap is about 15, below the strict threshold
    with pytest.raises(GapTooSmall) as info:
        holomorphic_basis(mesh3, (-2, 0))
    assert info.value.basis.dim == 3


def test_basis_orthonormal_and_in_kernel(c2_3, mesh3):
    assert np.allclose(c2_3.gram, np.eye(3), atol=1e-10)
    assert np.all(c2_3.residuals <= 10 * c2_3.sigma_cut)
    assert c2_3.condition < 1e3


@given(cvec)
def test_star_isometry_pointwise(mesh3, c):
    rng = np.random.default_rng(int(abs(c[0].real) * 1e6))
    beta = rng.normal(size=mesh3.n_triangles) + 1j * rng.normal(size=mesh3.n_triangles)
    h = hodge_star_E(beta, mesh3)
    lhs = pointwise_norm2(h, mesh3.triangle_conformal, (-2, 0))
    assert np.allclose(lhs, np.abs(beta) ** 2, rtol=1e-12)
    assert np.allclose(hodge_star_E_inv(h, mesh3), beta, atol=1e-12)
    assert np.allclose(hodge_star_E(1j * beta, mesh3), -1j * h, atol=1e-12)


def test_wedge_of_star_is_norm(mesh3):
    rng = np.random.default_rng(1)
    beta = rng.normal(size=mesh3.n_triangles) + 1j * rng.normal(size=mesh3.n_triangles)
    val = wedge_pair(beta, hodge_star_E(beta, mesh3), mesh3)
    assert abs(val.imag) < 1e-10 * abs(val)
    assert val.real == pytest.approx(beltrami_norm(mesh3, beta) ** 2, rel=1e-12)
    assert wedge_pair(np.zeros(mesh3.n_triangles), np.ones(mesh3.n_triangles), mesh3) == 0


def test_pairing_nondegenerate(bb3):
    assert bb3.condition < 1e3


def test_decompose_harmonic(bb3, mesh3):
    beta = bb3.combine([1, 0.5j, -0.3]).field
    h, eta, res = dolbeault_decompose(beta, bb3)
    assert np.linalg.norm(eta) <= 1e-8 * beltrami_norm(mesh3, beta)
    assert res < 1e-10


def test_decompose_exact(bb3, mesh3):
    rng = np.random.default_rng(2)
    eta = rng.normal(size=mesh3.n_dofs) + 1j * rng.normal(size=mesh3.n_dofs)
    beta = dbar(mesh3, (1, 0)) @ eta
    h, _, res = dolbeault_decompose(beta, bb3)
    assert beltrami_norm(mesh3, h.field) <= 1e-6 * beltrami_norm(mesh3, beta)


def test_poincare_constant_finite(mesh3):
    c = poincare_constant(mesh3)
    assert np.isfinite(c) and 0 < c < 10
    rng = np.random.default_rng(3)
    eta = rng.normal(size=mesh3.n_dofs) + 1j * rng.normal(size=mesh3.n_dofs)
    lhs = np.sqrt(inner(mesh3, eta, eta, (1, 0)).real)
    assert lhs <= c * beltrami_norm(mesh3, dbar(mesh3, (1, 0)) @ eta) * (1 + 1e-9)


def test_pairing_representative_independence(bb3, mesh3):
    # a smooth exact part (built from an abelian differential) barely changes the pairing
    omega = holomorphic_basis(mesh3, (-1, 0), min_gap=1.0).values[0]
    eta = np.conj(omega) / poincare_factor(mesh3.dof_points)
    b0 = bb3.combine([1, 0, 0]).field
    d = dbar(mesh3, (1, 0)) @ eta
    d *= beltrami_norm(mesh3, b0) / beltrami_norm(mesh3, d)
    p0 = np.array([wedge_pair(b0, h, mesh3) for h in bb3.c2.values])
    p1 = np.array([wedge_pair(b0 + d, h, mesh3) for h in bb3.c2.values])
    assert np.linalg.norm(p1 - p0) < 0.05 * np.linalg.norm(p0)


@pytest.mark.parametrize("j", range(3))
def test_beta_from_unit_covector(bb3, j):
    w = np.eye(3)[j]
    beta = beta_from_covector(w, bb3)
    got = np.array([wedge_pair(beta.field, h, bb3.mesh) for h in bb3.c2.values])
    assert np.allclose(got, w, atol=1e-8)


@given(cvec, st.complex_numbers(min_magnitude=0.1, max_magnitude=10))
def test_beta_from_covector_linear(bb3, w, lam):
    if np.linalg.norm(w) < 1e-3:
        return
    a = beta_from_covector(lam * w, bb3).field
    b = lam * beta_from_covector(w, bb3).field
    assert np.allclose(a, b, atol=1e-10 * np.abs(b).max())


def test_center_annihilator(bb3, c2_3):
    w = qd_point_conditions(c2_3, 0j, 0)[0]
    beta = beta_from_covector(w, bb3)
    assert pairing_residual(beta, bb3, discrete_qd(c2_3, [0j], [0])) <= 1e-6


def test_point_condition_dimensions(c2_3):
    z = 0.2 + 0.15j
    assert discrete_qd(c2_3, [z], [0]).shape[1] == 2
    assert discrete_qd(c2_3, [z], [1]).shape[1] == 1
    assert discrete_qd(c2_3, [z], [2]).shape[1] == 0


def test_point_conditions_at_a_zero(c2_3, mesh3):
    # oracle: the smallest value of |h| e^{-2u} over interior dofs locates a zero of some basis field
    pf = poincare_factor(mesh3.dof_points)
    inside = np.abs(mesh3.dof_points) < 0.5
    best = None
    for j, h in enumerate(c2_3.values):
        dens = pointwise_norm2(h, pf, (-2, 0))
        rel = np.where(inside, dens, np.inf) / np.median(dens)
        i = int(np.argmin(rel))
        if best is None or rel[i] < best[0]:
            best = (rel[i], j, mesh3.dof_points[i])
    rel, j, z = best
    assert rel < 1e-6
    row = qd_point_conditions(c2_3, z, 0)[0]
    assert abs(row[j]) < 1e-3 * np.abs(row).max()


def test_high_order_stencil_rejected(c2_3):
    with pytest.raises(ValueError):
        qd_point_conditions(c2_3, 0j, 5)


def test_harmonic_fields_integrate_like_norms(bb3, mesh3):
    f = bb3.fields[0]
    dens = pointwise_norm2(f, mesh3.triangle_conformal, (1, -1))
    assert integrate(mesh3, dens) == pytest.approx(beltrami_norm(mesh3, f) ** 2, rel=1e-12)
