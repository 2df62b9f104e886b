"""Discrete Hodge theory on the Bolza mesh.

Fields of weight (a, 0) live on dofs; their dbar images, weight (a, -1),
live on triangles. Each triangle uses one conformal factor, the exact mean
of e^{2u_X} over it (geodesic over Euclidean area). The Hodge star, the
wedge pairing and the integrals then agree with each other exactly.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fuchsian import (
    AutomorphicField,
    SurfaceMesh,
    dbar,
    integrate,
    poincare_factor,
    pointwise_norm2,
)

log = logging.getLogger(__name__)

EXPECTED_DIM = {(0, 0): 1, (-1, 0): 2, (-2, 0): 3}
MIN_GAP = 1e2


class DolbeaultError(Exception):
    pass


class GapTooSmall(DolbeaultError):
    def __init__(self, message, basis=None):
        super().__init__(message)
        self.basis = basis


class IllConditioned(DolbeaultError):
    pass


class SingularPairing(DolbeaultError):
    pass


class StencilDegenerate(DolbeaultError):
    pass


# --- norms and inner products ------------------------------------------------------


def dof_weights(mesh: SurfaceMesh, weight) -> np.ndarray:
    """Lumped L^2 weights of a weight-(a, b) dof field (norm constant included)."""
    ones = np.ones(mesh.n_dofs)
    return mesh.dof_areas * pointwise_norm2(ones, poincare_factor(mesh.dof_points), weight)


def triangle_weights(mesh: SurfaceMesh, weight) -> np.ndarray:
    ones = np.ones(mesh.n_triangles)
    return mesh.hyperbolic_areas * pointwise_norm2(ones, mesh.triangle_conformal, weight)


def inner(mesh: SurfaceMesh, f, g, weight) -> complex:
    f, g = np.asarray(f), np.asarray(g)
    w = triangle_weights(mesh, weight) if len(f) == mesh.n_triangles else dof_weights(mesh, weight)
    return complex(np.sum(w * f * np.conj(g)))


def l2_norm(mesh: SurfaceMesh, f, weight) -> float:
    return float(np.sqrt(max(inner(mesh, f, f, weight).real, 0.0)))


# --- holomorphic bases -------------------------------------------------------------


@lru_cache(maxsize=8)
def _dual_laplacian(mesh: SurfaceMesh) -> sp.csr_matrix:
    """Graph Laplacian on triangles sharing an edge inside the octagon."""
    owners = defaultdict(list)
    for t, tri in enumerate(mesh.triangles):
        for i in range(3):
            a, b = sorted((int(tri[i]), int(tri[(i + 1) % 3])))
            owners[(a, b)].append(t)
    pairs = np.array([ts for ts in owners.values() if len(ts) == 2])
    n = mesh.n_triangles
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    return (sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()


@dataclass(eq=False)
class DiscreteBasis:
    """Orthonormal numerical kernel of dbar on weight-(a, 0) fields."""

    mesh: SurfaceMesh
    weight: tuple
    values: np.ndarray  # (M, n_dofs)
    gram: np.ndarray
    svd_gap: float
    singular_values: np.ndarray
    residuals: np.ndarray
    condition: float

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def sigma_cut(self) -> float:
        return float(self.singular_values[self.dim])

    @property
    def fields(self) -> list:
        return [AutomorphicField(self.mesh, v, self.weight) for v in self.values]

    def centroid(self) -> np.ndarray:
        """Values at triangle centroids, shape (M, n_triangles)."""
        fold = self.mesh.folding(self.weight)
        vert = (fold @ self.values.T).T
        return vert[:, self.mesh.triangles].mean(axis=2)

    def combine(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs) @ self.values


DiscreteC2Basis = DiscreteBasis


def _lowest_spectrum(mesh, weight, n_probe, smoothing):
    """Smallest generalized eigenpairs of dbar* R dbar against the lumped domain mass.

    R is the H^-1 norm A (smoothing * L + A)^-1 A on triangle data, with A the
    geodesic areas and L the dual-graph Laplacian; it damps the mesh-scale
    oscillation that the P1 interpolant of a holomorphic field leaves in its
    dbar, so kernel singular values scale like h^2 instead of h.
    """
    a, _ = weight
    d = dbar(mesh, weight)
    rho = mesh.triangle_conformal ** ((a - 1) / 2.0)
    area = sp.diags(mesh.hyperbolic_areas)
    c = (area @ sp.diags(rho) @ d).tocsc()
    s_mat = (smoothing * _dual_laplacian(mesh) + area).tocsc()
    g = dof_weights(mesh, weight)
    n = mesh.n_dofs
    shift = 1e-6
    kkt = sp.bmat([[-s_mat, c], [c.conj().T, sp.diags(shift * g)]], format="csc").astype(complex)
    lu = spla.splu(kkt)
    s_lu = spla.splu(s_mat.astype(complex))
    nt = mesh.n_triangles

    def h_apply(x):
        return c.conj().T @ s_lu.solve(c @ x)

    def shifted_solve(b):
        rhs = np.concatenate([np.zeros(nt, dtype=complex), b])
        return lu.solve(rhs)[nt:]

    k = min(n_probe, n - 2)
    if n <= 400:
        h = np.column_stack([h_apply(col) for col in np.eye(n, dtype=complex)])
        h = 0.5 * (h + h.conj().T)
        from scipy.linalg import eigh

        lam, vec = eigh(h, np.diag(g).astype(complex))
        lam, vec = lam[:k], vec[:, :k]
    else:
        op = spla.LinearOperator((n, n), matvec=h_apply, dtype=complex)
        opinv = spla.LinearOperator((n, n), matvec=shifted_solve, dtype=complex)
        lam, vec = spla.eigsh(
            op, k=k, M=sp.diags(g).astype(complex).tocsc(), sigma=-shift, OPinv=opinv,
            which="LM", v0=np.ones(n, dtype=complex), tol=1e-12,
        )
        order = np.argsort(lam)
        lam, vec = lam[order], vec[:, order]
    return np.sqrt(np.clip(lam, 0.0, None)), vec


def holomorphic_basis(
    mesh: SurfaceMesh,
    weight=(-2, 0),
    min_gap: float = MIN_GAP,
    dim: int | None = None,
    n_probe: int = 10,
    smoothing: float = 1.0,
) -> DiscreteBasis:
    """Numerical kernel of dbar, detected at the largest relative singular-value gap.

    ``dim`` fixes the kernel dimension instead of detecting it; the gap is
    still measured and checked against ``min_gap``.
    """
    weight = tuple(weight)
    s, vec = _lowest_spectrum(mesh, weight, n_probe, smoothing)
    floor = 1e-14 * max(s[-1], 1e-300)
    ratios = s[1:] / np.maximum(s[:-1], floor)
    k = dim if dim is not None else int(np.argmax(ratios)) + 1
    gap = float(ratios[k - 1])
    raw = vec[:, :k].T.copy()
    raw_gram = _gram(mesh, raw, weight)
    lam, u = np.linalg.eigh(raw_gram)
    # symmetric (Loewdin) orthonormalization stays closest to the raw singular vectors
    values = (u @ np.diag(lam**-0.5) @ u.conj().T) @ raw
    values = _fix_phase(values, mesh)
    basis = DiscreteBasis(
        mesh, weight, values, _gram(mesh, values, weight), gap, s, s[:k], float(lam[-1] / lam[0])
    )
    log.info("weight %s: kernel dim %d, gap %.3g", weight, k, gap)
    if gap < min_gap:
        raise GapTooSmall(f"singular-value gap {gap:.3g} below {min_gap:g} for weight {weight}", basis)
    return basis


def _gram(mesh, values, weight) -> np.ndarray:
    w = dof_weights(mesh, weight)
    return (values * w) @ values.conj().T


def _fix_phase(values, mesh) -> np.ndarray:
    """Deterministic phases: each field real-positive at its largest-modulus dof."""
    out = values.copy()
    for i, v in enumerate(out):
        j = int(np.argmax(np.abs(v) * mesh.dof_areas))
        out[i] = v * (abs(v[j]) / v[j])
    return out


# --- Hodge star and pairing ------------------------------------------------------------


def _per_triangle(mesh: SurfaceMesh, values, weight) -> np.ndarray:
    values = np.asarray(values)
    if len(values) == mesh.n_triangles:
        return values
    vert = mesh.unfold(values, weight)
    return vert[mesh.triangles].mean(axis=1)


def hodge_star_E(beta, mesh: SurfaceMesh) -> np.ndarray:
    """Weight (1,-1) to weight (-2,0): h = conj(beta) (-i/2) e^{2u_X}."""
    return np.conj(beta) * (-0.5j) * mesh.triangle_conformal


def hodge_star_E_inv(h, mesh: SurfaceMesh) -> np.ndarray:
    """Inverse star: beta = -2i conj(h) e^{-2u_X}; dof data is sampled at centroids first."""
    h = _per_triangle(mesh, h, (-2, 0))
    return -2j * np.conj(h) / mesh.triangle_conformal


def wedge_pair(beta, h, mesh: SurfaceMesh) -> complex:
    """Integral of beta wedge alpha: 2i sum_T area_euclid(T) mean(beta h)."""
    h = _per_triangle(mesh, h, (-2, 0))
    return complex(2j * np.sum(mesh.euclid_areas * np.asarray(beta) * h))


def beltrami_norm(mesh: SurfaceMesh, beta) -> float:
    return l2_norm(mesh, beta, (1, -1))


# --- harmonic Beltrami differentials -------------------------------------------------------


class _ExactProjector:
    """L^2 projection onto range(dbar) on weight-(1,0) sections, weights W per triangle."""

    def __init__(self, mesh: SurfaceMesh, tri_weights=None):
        self.mesh = mesh
        self.d = dbar(mesh, (1, 0)).tocsc()
        self.w = mesh.hyperbolic_areas if tri_weights is None else tri_weights
        normal = (self.d.conj().T @ sp.diags(self.w) @ self.d).tocsc()
        self.lu = spla.splu(normal)

    def eta(self, beta) -> np.ndarray:
        """Least-squares eta with dbar(eta) closest to beta."""
        return self.lu.solve(self.d.conj().T @ (self.w * beta))

    def exact_part(self, beta) -> np.ndarray:
        return self.d @ self.eta(beta)


@lru_cache(maxsize=8)
def _projector(mesh: SurfaceMesh) -> _ExactProjector:
    return _ExactProjector(mesh)


@dataclass(eq=False)
class HarmonicBeltrami:
    field: np.ndarray  # per triangle
    source: np.ndarray  # coefficients over the discrete basis

    def star(self, mesh: SurfaceMesh) -> np.ndarray:
        return hodge_star_E(self.field, mesh)


@dataclass(eq=False)
class BeltramiBasis:
    """Harmonic Beltrami differentials paired with a discrete C2 basis."""

    c2: DiscreteBasis
    fields: np.ndarray  # (M, n_triangles)
    pairing: np.ndarray  # pairing[i, j] = wedge(beta_i, h_j)

    @property
    def mesh(self) -> SurfaceMesh:
        return self.c2.mesh

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.pairing))

    def combine(self, coeffs) -> HarmonicBeltrami:
        coeffs = np.asarray(coeffs, dtype=complex)
        return HarmonicBeltrami(coeffs @ self.fields, coeffs)


def harmonic_beltrami_basis(c2: DiscreteBasis) -> BeltramiBasis:
    """star^-1 of each basis field with its dbar-exact part removed.

    The projection makes discrete harmonicity exact: at u = 0 the eta solve
    returns zero for every element of the span.
    """
    mesh = c2.mesh
    proj = _projector(mesh)
    raw = np.array([hodge_star_E_inv(h, mesh) for h in c2.values])
    fields = np.array([b - proj.exact_part(b) for b in raw])
    pairing = np.array([[wedge_pair(b, h, mesh) for h in c2.values] for b in fields])
    return BeltramiBasis(c2, fields, pairing)


def beta_from_covector(w, basis: BeltramiBasis, cond_max: float = 1e8) -> HarmonicBeltrami:
    """Harmonic Beltrami with wedge(beta, h_j) = w_j for every basis field h_j."""
    w = np.asarray(getattr(w, "w", w), dtype=complex)
    if basis.condition > cond_max:
        raise SingularPairing(f"pairing condition number {basis.condition:.3g}")
    coeffs = np.linalg.solve(basis.pairing.T, w)
    return basis.combine(coeffs)


def dolbeault_decompose(beta, basis: BeltramiBasis, tol_factor: float = 10.0):
    """Split beta = beta0 + dbar(eta) with beta0 harmonic; least squares in L^2.

    Returns (HarmonicBeltrami, eta, relative residual).
    """
    mesh = basis.mesh
    beta = np.asarray(beta, dtype=complex)
    proj = _projector(mesh)
    w = mesh.hyperbolic_areas
    harm = basis.fields
    # eliminate eta: fit the co-exact parts of beta by those of the harmonic fields
    perp = np.array([b - proj.exact_part(b) for b in harm]).T
    target = beta - proj.exact_part(beta)
    sw = np.sqrt(w)[:, None]
    coeffs, *_ = np.linalg.lstsq(sw * perp, sw[:, 0] * target, rcond=None)
    if np.linalg.cond(sw * perp) > 1e8:
        raise IllConditioned("harmonic fields are nearly dependent")
    beta0 = coeffs @ harm
    eta = proj.eta(beta - beta0)
    res = beta - beta0 - proj.d @ eta
    nb = beltrami_norm(mesh, beta)
    rel = beltrami_norm(mesh, res) / nb if nb else 0.0
    return HarmonicBeltrami(beta0, coeffs), eta, rel


def poincare_constant(mesh: SurfaceMesh) -> float:
    """Smallest C with ||eta|| <= C ||dbar eta|| over weight-(1,0) sections."""
    d = dbar(mesh, (1, 0))
    normal = (d.conj().T @ sp.diags(triangle_weights(mesh, (1, -1))) @ d).tocsc()
    g = sp.diags(dof_weights(mesh, (1, 0))).tocsc()
    lam = spla.eigsh(normal, k=1, M=g, sigma=0.0, which="LM", v0=np.ones(mesh.n_dofs, dtype=complex),
                     return_eigenvectors=False)
    return float(1.0 / np.sqrt(lam.min()))


# --- point conditions -----------------------------------------------------------------------


def _ring(mesh: SurfaceMesh, v: int, k: int) -> list:
    seen, frontier = {v}, {v}
    for _ in range(k):
        frontier = {w for u in frontier for w in mesh.vertex_neighbours[u]} - seen
        seen |= frontier
    return sorted(seen)


def qd_point_conditions(basis: DiscreteBasis, z0: complex, order: int = 0) -> np.ndarray:
    """Rows n = 0..order: n-th complex derivative of each basis field at z0.

    Derivatives come from a least-squares holomorphic polynomial fit of
    degree order + 2 on the (order + 2)-ring of the nearest vertex.
    """
    mesh = basis.mesh
    if order > 4:
        raise ValueError("order must be at most 4")
    z0 = complex(z0)
    v = int(np.argmin(np.abs(mesh.vertices - z0)))
    deg = order + 2
    ring = _ring(mesh, v, deg)
    if len(ring) < 2 * (deg + 1):
        raise StencilDegenerate(f"stencil of {len(ring)} vertices for degree {deg}")
    pts = mesh.vertices[ring] - z0
    hloc = max(np.abs(pts).max(), 1e-300)
    vand = (pts[:, None] / hloc) ** np.arange(deg + 1)[None, :]
    if np.linalg.cond(vand) > 1e10:
        raise StencilDegenerate("ill-conditioned fitting stencil")
    vert = (basis.mesh.folding(basis.weight) @ basis.values.T)[ring]
    coef, *_ = np.linalg.lstsq(vand, vert, rcond=None)
    fact = np.array([float(np.prod(np.arange(1, n + 1))) for n in range(order + 1)])
    return coef[: order + 1] * (fact / hloc ** np.arange(order + 1))[:, None]


def discrete_qd(basis: DiscreteBasis, points, orders) -> np.ndarray:
    """Orthonormal coefficient basis of Q(D) for D = sum (N_x + 1) x on the mesh."""
    rows = [qd_point_conditions(basis, z, n) for z, n in zip(points, orders)]
    m = basis.dim
    if not rows:
        return np.eye(m, dtype=complex)
    c = np.vstack(rows)
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    _, s, vh = np.linalg.svd(c, full_matrices=True)
    rank = int(np.sum(s > 1e-8 * s[0]))
    return vh[rank:].conj().T


def pairing_residual(beta0: HarmonicBeltrami, basis: BeltramiBasis, sub: np.ndarray) -> float:
    """max over alpha in span(sub) of |wedge(beta0, alpha)| / (||beta0|| ||alpha||)."""
    mesh = basis.mesh
    if sub.shape[1] == 0:
        return 0.0
    p = np.array([wedge_pair(beta0.field, h, mesh) for h in basis.c2.values])
    return float(np.linalg.norm(sub.T @ p) / beltrami_norm(mesh, beta0.field))
