"""Minimization of the Donaldson functional and the continuation t -> 0+.

Discretization on the Bolza mesh (P1 scalars u, P1 sections eta, Beltrami
data per triangle):

    F_t(u, eta) = 1/4 u.K.u - m.u + t m.e^u + 4 sum_T A_T mean_T(e^u) |beta_T|^2

with beta = beta0 + dbar(eta), K the stiffness matrix, m the lumped geodesic
areas (summing exactly to the area of the surface) and A_T the geodesic
triangle areas. Writing W_i = 4 sum_{T ni i} A_T/3 |beta_T|^2, the u-gradient
is K u / 2 - m + (t m + W) e^u; at a critical point summing it gives
rho + t sum m e^u = area exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fuchsian import SurfaceMesh, dbar, stiffness

log = logging.getLogger(__name__)

U_MAX = 700.0


class DonaldsonError(Exception):
    pass


class Overflow(DonaldsonError, ArithmeticError):
    pass


class LineSearchFailed(DonaldsonError):
    pass


class MaxIterations(DonaldsonError):
    pass


class EtaSolveStalled(DonaldsonError):
    pass


class NoConvergence(DonaldsonError):
    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50
    max_alternations: int = 200
    damping: float = 0.5
    armijo: float = 1e-4
    linear_tol: float = 1e-12

    def __post_init__(self):
        for name in ("newton_tol", "damping", "armijo", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")


class Problem:
    """Operators shared by every solve on one mesh."""

    def __init__(self, mesh: SurfaceMesh):
        self.mesh = mesh
        self.K = stiffness(mesh).tocsc()
        self.m = mesh.dof_areas
        self.area = float(self.m.sum())
        self.A = mesh.hyperbolic_areas
        self.D = dbar(mesh, (1, 0)).tocsr()
        self.Dh = self.D.conj().T.tocsr()
        nt, nd = mesh.n_triangles, mesh.n_dofs
        # triangle -> dof incidence with weight 1/3, and its transpose
        self.T2D = sp.csr_matrix(
            (np.full(3 * nt, 1.0 / 3.0), (np.repeat(np.arange(nt), 3), mesh.tri_dofs.ravel())), shape=(nt, nd)
        )
        self.D2T = self.T2D.T.tocsr()

    def beta(self, beta0, eta) -> np.ndarray:
        return beta0 + self.D @ eta

    def W(self, beta) -> np.ndarray:
        return 4.0 * (self.D2T @ (self.A * np.abs(beta) ** 2))

    def mean_exp(self, u) -> np.ndarray:
        return self.T2D @ np.exp(u)


_PROBLEMS: dict = {}


def problem_for(mesh: SurfaceMesh) -> Problem:
    key = id(mesh)
    if key not in _PROBLEMS or _PROBLEMS[key].mesh is not mesh:
        _PROBLEMS[key] = Problem(mesh)
    return _PROBLEMS[key]


def _check_u(u):
    if np.max(u) > U_MAX:
        raise Overflow(f"max u = {np.max(u):.6g} exceeds {U_MAX}")


def _reduced(pb: Problem, u, t, W) -> float:
    return 0.25 * u @ (pb.K @ u) - pb.m @ u + (t * pb.m + W) @ np.exp(u)


def energy(u, eta, beta0, t, mesh: SurfaceMesh) -> float:
    """Discrete Donaldson functional F_t(u, eta)."""
    pb = problem_for(mesh)
    u = np.asarray(u, dtype=float)
    _check_u(u)
    beta = pb.beta(beta0, eta)
    return float(_reduced(pb, u, t, pb.W(beta)))


def energy_gradient_u(u, eta, beta0, t, mesh: SurfaceMesh) -> np.ndarray:
    pb = problem_for(mesh)
    W = pb.W(pb.beta(beta0, eta))
    return 0.5 * (pb.K @ u) - pb.m + (t * pb.m + W) * np.exp(u)


def gauss_residual(u, eta, beta0, t, mesh: SurfaceMesh) -> np.ndarray:
    """Weak residual of  Delta u + 2 - 2t e^u - 8 e^u |beta|^2  against the P1 hat functions.

    Equals minus twice the u-gradient of the discrete functional.
    """
    return -2.0 * energy_gradient_u(u, eta, beta0, t, mesh)


def codazzi_residual(u, eta, beta0, mesh: SurfaceMesh) -> np.ndarray:
    """Weak residual dbar^*(e^u beta) of the Codazzi equation (eta-gradient up to a factor 4)."""
    pb = problem_for(mesh)
    return pb.Dh @ (pb.A * pb.mean_exp(u) * pb.beta(beta0, eta))


def solve_eta(u, beta0, mesh: SurfaceMesh, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Minimizer of sum_T A_T mean_T(e^u) |beta0 + dbar eta|^2 by a sparse direct solve."""
    pb = problem_for(mesh)
    omega = pb.A * pb.mean_exp(u)
    normal = (pb.Dh @ sp.diags(omega) @ pb.D).tocsc()
    rhs = -(pb.Dh @ (omega * beta0))
    eta = spla.splu(normal).solve(rhs)
    res = np.linalg.norm(normal @ eta - rhs)
    if not np.isfinite(res) or res > 1e3 * cfg.linear_tol * max(1.0, np.linalg.norm(rhs)):
        raise EtaSolveStalled(f"normal-equation residual {res:.3g}")
    return eta


@dataclass
class NewtonInfo:
    iterations: int = 0
    grad_norm: float = np.inf
    energies: list = field(default_factory=list)


def _newton(pb: Problem, u, t, W, cfg: SolverConfig, info: NewtonInfo | None = None) -> np.ndarray:
    info = info if info is not None else NewtonInfo()
    c = t * pb.m + W
    f = _reduced(pb, u, t, W)
    info.energies.append(f)
    for it in range(cfg.max_newton + 1):
        _check_u(u)
        e = np.exp(u)
        g = 0.5 * (pb.K @ u) - pb.m + c * e
        gn = float(np.linalg.norm(g))
        info.iterations, info.grad_norm = it, gn
        if gn <= cfg.newton_tol:
            return u
        if it == cfg.max_newton:
            break
        hess = (0.5 * pb.K + sp.diags(c * e)).tocsc()
        du = spla.splu(hess).solve(-g)
        slope = float(g @ du)
        if not slope < 0:
            raise LineSearchFailed(f"Newton direction is not a descent direction (slope {slope:.3g})")
        step = 1.0
        # below this predicted decrease the energy cannot resolve progress; judge by the gradient
        flat = -slope <= 1e-12 * (1.0 + abs(f))
        while True:
            trial = u + step * du
            if np.max(trial) <= U_MAX:
                ft = _reduced(pb, trial, t, W)
                if ft <= f + cfg.armijo * step * slope + 1e-15 * abs(f):
                    break
                if flat and np.linalg.norm(0.5 * (pb.K @ trial) - pb.m + c * np.exp(trial)) < gn:
                    break
            step *= cfg.damping
            if step < 1e-12:
                raise LineSearchFailed(f"no sufficient decrease (gradient norm {gn:.3g})")
        u, f = trial, ft
        info.energies.append(f)
    raise MaxIterations(f"Newton stopped at gradient norm {info.grad_norm:.3g}")


def solve_u(eta, beta0, t, mesh: SurfaceMesh, cfg: SolverConfig = SolverConfig(), u_init=None, info=None) -> np.ndarray:
    """Damped Newton on the strictly convex reduced functional in u."""
    pb = problem_for(mesh)
    if t < 0:
        raise ValueError("t must be nonnegative")
    W = pb.W(pb.beta(beta0, eta))
    if t == 0 and not np.any(W > 0):
        raise ValueError("t = 0 needs a nonzero Beltrami term")
    u0 = np.full(mesh.n_dofs, np.log(1.0 / t) if t > 0 else 0.0) if u_init is None else np.array(u_init, dtype=float)
    return _newton(pb, u0, t, W, cfg, info)


@dataclass
class SolverState:
    u: np.ndarray
    eta: np.ndarray
    t: float
    energy: float
    gauss_residual_norm: float
    codazzi_residual_norm: float
    f_t: np.ndarray
    beta0: np.ndarray = field(repr=False, default=None)
    alternations: int = 0
    energies: list = field(default_factory=list, repr=False)

    def beta(self, mesh) -> np.ndarray:
        return problem_for(mesh).beta(self.beta0, self.eta)


def _state(pb, u, eta, beta0, t, alternations=0, energies=None) -> SolverState:
    mesh = pb.mesh
    return SolverState(
        u=u,
        eta=eta,
        t=t,
        energy=energy(u, eta, beta0, t, mesh),
        gauss_residual_norm=float(np.linalg.norm(energy_gradient_u(u, eta, beta0, t, mesh))),
        codazzi_residual_norm=float(np.linalg.norm(codazzi_residual(u, eta, beta0, mesh))),
        f_t=2.0 * (1.0 - t * np.exp(u)),
        beta0=np.asarray(beta0),
        alternations=alternations,
        energies=energies or [],
    )


def state_from(u, eta, beta0, t, mesh: SurfaceMesh) -> SolverState:
    """Rebuild a state (energy and residuals included) from stored fields."""
    return _state(problem_for(mesh), np.asarray(u, dtype=float), np.asarray(eta, dtype=complex), np.asarray(beta0, dtype=complex), float(t))


def minimize(beta0, t, mesh: SurfaceMesh, cfg: SolverConfig = SolverConfig(), u_init=None, eta_init=None) -> SolverState:
    """Alternate the exact eta-minimization with Newton in u until both residuals vanish."""
    if not t > 0:
        raise ValueError("t must be positive")
    pb = problem_for(mesh)
    beta0 = np.asarray(beta0, dtype=complex)
    u = np.full(mesh.n_dofs, np.log(1.0 / t)) if u_init is None else np.array(u_init, dtype=float)
    eta = np.zeros(mesh.n_dofs, dtype=complex) if eta_init is None else np.array(eta_init, dtype=complex)
    energies = [energy(u, eta, beta0, t, mesh)]
    trivial = not np.any(beta0)
    for k in range(1, cfg.max_alternations + 1):
        eta = np.zeros_like(eta) if trivial else solve_eta(u, beta0, mesh, cfg)
        u = _newton(pb, u, t, pb.W(pb.beta(beta0, eta)), cfg)
        energies.append(energy(u, eta, beta0, t, mesh))
        if energies[-1] > energies[-2] + 1e-12 * abs(energies[-2]):
            log.warning("energy increased across an alternation: %.17g -> %.17g", energies[-2], energies[-1])
        cod = float(np.linalg.norm(codazzi_residual(u, eta, beta0, mesh)))
        if cod <= cfg.newton_tol:
            return _state(pb, u, eta, beta0, t, k, energies)
    state = _state(pb, u, eta, beta0, t, cfg.max_alternations, energies)
    raise NoConvergence(
        f"t={t:g}: residuals gauss {state.gauss_residual_norm:.3g}, codazzi {state.codazzi_residual_norm:.3g}", state
    )


# --- continuation -------------------------------------------------------------------


@dataclass
class TraceRecord:
    t: float
    d_t: float
    s_t: float
    max_xi: float
    energy: float
    rho: float
    t_int_eu: float
    d_minus_s: float
    gauss_res: float
    codazzi_res: float
    status: str = "ok"

    FIELDS = ("t", "d_t", "s_t", "max_xi", "rho", "energy", "gauss_res", "codazzi_res", "d_minus_s", "t_int_eu")


@dataclass
class ContinuationTrace:
    records: list = field(default_factory=list)
    states: list = field(default_factory=list, repr=False)
    area: float = 4 * np.pi

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def xi_data(state: SolverState, mesh: SurfaceMesh):
    """(s_t, xi, |alpha_hat|^2 per dof) with alpha_t = e^u star(beta).

    The pointwise |beta|^2 at a dof is the area-weighted average over its
    triangles, W_i / (4 m_i); this makes the lumped Liouville equation for xi
    coincide with the Gauss equation for u.
    """
    pb = problem_for(mesh)
    W = pb.W(state.beta(mesh))
    beta2 = W / (4.0 * pb.m)
    alpha2 = np.exp(2 * state.u) * beta2
    total = float(pb.m @ alpha2)
    if total <= 0:
        return None
    s = float(np.log(total))
    return s, -state.u + s, alpha2 / total


def _record(pb: Problem, state: SolverState) -> TraceRecord:
    e = np.exp(state.u)
    W = pb.W(state.beta(pb.mesh))
    rho = float(W @ e)
    d = float(pb.m @ state.u / pb.area)
    xd = xi_data(state, pb.mesh)
    s, max_xi = (xd[0], float(np.max(xd[1]))) if xd else (np.nan, np.nan)
    return TraceRecord(
        t=state.t,
        d_t=d,
        s_t=s,
        max_xi=max_xi,
        energy=state.energy,
        rho=rho,
        t_int_eu=float(state.t * (pb.m @ e)),
        d_minus_s=d - s,
        gauss_res=state.gauss_residual_norm,
        codazzi_res=state.codazzi_residual_norm,
    )


def default_schedule(steps: int = 14, t0: float = 1.0, ratio: float = 0.5) -> np.ndarray:
    return t0 * ratio ** np.arange(steps + 1)


def continuation(beta0, t_schedule, mesh: SurfaceMesh, cfg: SolverConfig = SolverConfig(), keep_states: bool = True) -> ContinuationTrace:
    """Warm-started minimizations along a strictly decreasing schedule."""
    ts = np.asarray(t_schedule, dtype=float)
    if np.any(ts <= 0) or np.any(np.diff(ts) >= 0):
        raise ValueError("schedule must be positive and strictly decreasing")
    pb = problem_for(mesh)
    trace = ContinuationTrace(area=pb.area)
    u = eta = None
    for t in ts:
        try:
            state = minimize(beta0, t, mesh, cfg, u_init=u, eta_init=eta)
        except NoConvergence as exc:
            if exc.state is not None:
                rec = _record(pb, exc.state)
                rec.status = "no-convergence"
                trace.records.append(rec)
            exc.trace = trace
            raise
        trace.records.append(_record(pb, state))
        if keep_states:
            trace.states.append(state)
        u, eta = state.u, state.eta
        log.info("t=%.6g rho=%.6g max_xi=%.6g alternations=%d", t, trace.records[-1].rho, trace.records[-1].max_xi, state.alternations)
    return trace


def with_config(cfg: SolverConfig, **changes) -> SolverConfig:
    return replace(cfg, **changes)
