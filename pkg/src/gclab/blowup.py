"""Blow-up diagnostics along a continuation trace.

Masses are measured in units of 8 pi: a simple bubble carries mass 1 and a
bubble sitting on a zero of order n of the weight carries n + 1.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .dolbeault import BeltramiBasis, HarmonicBeltrami, StencilDegenerate, discrete_qd, pairing_residual
from .donaldson import ContinuationTrace, SolverState, gauss_residual, problem_for, xi_data
from .fuchsian import FuchsianGroup, SurfaceMesh, geodesic_midpoint, hyperbolic_distance

log = logging.getLogger(__name__)

PEAK_OFFSET = 6.0
MERGE_RADIUS = 0.1
PLATEAU_TOL = 0.05
QUANTIZATION_TOL = 0.15
GROWTH_EVIDENCE = 6.0


class ZeroAlpha(ValueError):
    pass


# --- fixtures -------------------------------------------------------------------------


@dataclass(frozen=True)
class BubbleFixture:
    """xi(z) = log(8 (n+1)^2 lam^2 / (1 + lam^2 |z - c|^(2(n+1)))^2), solving -Lap xi = |z-c|^(2n) e^xi."""

    n: int
    lam: float
    center: complex = 0j

    def __post_init__(self):
        if not (0 <= self.n <= 6 and 10 <= self.lam <= 1e6):
            raise ValueError("fixture needs 0 <= n <= 6 and 10 <= lam <= 1e6")

    def xi(self, z):
        r2 = np.abs(np.asarray(z) - self.center) ** 2
        k = self.n + 1
        return np.log(8 * k**2 * self.lam**2) - 2 * np.log1p(self.lam**2 * r2**k)

    def weight(self, z):
        return np.abs(np.asarray(z) - self.center) ** (2 * self.n)

    def laplacian(self, z):
        """Exact Laplacian of xi."""
        return -self.weight(z) * np.exp(self.xi(z))

    def planar_mass(self, radius: float) -> float:
        """Closed form of (1/8pi) * integral over |z - c| < radius of weight * e^xi."""
        a = self.lam**2 * radius ** (2 * (self.n + 1))
        return (self.n + 1) * a / (1 + a)


def synthetic_bubble(n: int, lam: float, center: complex = 0j, points=None):
    """Fixture values at ``points`` (disk coordinates or a mesh's dof points)."""
    fx = BubbleFixture(n, lam, complex(center))
    if points is None:
        return fx
    pts = getattr(points, "dof_points", points)
    return fx.xi(pts)


# --- xi field -------------------------------------------------------------------------------


@dataclass
class XiField:
    xi: np.ndarray
    s: float
    alpha_hat2: np.ndarray  # |alpha_hat|^2 per dof, unit L^2 mass

    def density(self) -> np.ndarray:
        """8 |alpha_hat|^2 e^xi per dof."""
        return 8.0 * self.alpha_hat2 * np.exp(self.xi)


def xi_field(state: SolverState, mesh: SurfaceMesh) -> XiField:
    data = xi_data(state, mesh)
    if data is None:
        raise ZeroAlpha("alpha_t vanishes identically ([beta] = 0)")
    s, xi, a2 = data
    return XiField(xi, s, a2)


def liouville_residual(state: SolverState, mesh: SurfaceMesh, xf: XiField | None = None) -> np.ndarray:
    """Weak residual of -Lap xi - (8 |alpha_hat|^2 e^xi - f_t), lumped."""
    pb = problem_for(mesh)
    xf = xf or xi_field(state, mesh)
    return (pb.K @ xf.xi) - pb.m * (xf.density() - state.f_t)


# --- peaks and masses ------------------------------------------------------------------------


@dataclass
class Peak:
    point: complex
    value: float
    dof: int


def detect_peaks(xi, mesh: SurfaceMesh, threshold: float | None = None) -> list:
    """Local maxima of xi above the threshold (default median + 6), merged within distance 0.1."""
    xi = np.asarray(xi, dtype=float)
    thr = float(np.median(xi) + PEAK_OFFSET) if threshold is None else float(threshold)
    nbrs = mesh.dof_neighbours
    cands = [i for i in range(mesh.n_dofs) if xi[i] > thr and all(xi[i] >= xi[j] for j in nbrs[i])]
    cands.sort(key=lambda i: (-xi[i], i))
    peaks: list = []
    for i in cands:
        z = mesh.dof_points[i]
        if all(mesh.surface_distance(p.point, np.array([z]))[0] >= MERGE_RADIUS for p in peaks):
            peaks.append(Peak(complex(z), float(xi[i]), i))
    return peaks


@dataclass
class MassEstimate:
    radii: np.ndarray
    masses: np.ndarray
    outer: np.ndarray
    plateau_radius: float | None
    mhat: float
    deviation: float

    @property
    def status(self) -> str:
        if self.plateau_radius is None:
            return "no-plateau"
        return "quantized" if self.deviation <= QUANTIZATION_TOL else "unresolved"


def _mesh_masses(density, x, radii, mesh):
    dist = mesh.surface_distance(complex(x), mesh.dof_points)
    w = mesh.dof_areas * np.asarray(density)
    return np.array([w[dist < r].sum() for r in radii]) / (8 * np.pi)


def _planar_masses(xi, weight, x, radii, nodes=160, angles=64, r_min=1e-12):
    """Polar Gauss-Legendre quadrature in log r around x (Euclidean area)."""
    gx, gw = roots_legendre(nodes)
    th = 2 * np.pi * (np.arange(angles) + 0.5) / angles
    out = []
    for r in radii:
        a, b = np.log(r_min), np.log(r)
        s = 0.5 * (b - a) * gx + 0.5 * (b + a)
        rho = np.exp(s)
        z = x + rho[:, None] * np.exp(1j * th)[None, :]
        f = weight(z) * np.exp(xi(z))
        ring = f.mean(axis=1) * 2 * np.pi * rho**2  # rho d rho = rho^2 ds
        out.append(0.5 * (b - a) * np.dot(gw, ring))
    return np.array(out) / (8 * np.pi)


def local_mass(xi, weight, x, radii, mesh: SurfaceMesh | None = None) -> MassEstimate:
    """Masses (1/8pi) int_{B(x,r)} weight e^xi dA with the plateau value.

    On a mesh ``xi`` and ``weight`` are dof arrays (``weight`` is 8|alpha_hat|^2)
    and balls are hyperbolic; with ``mesh=None`` they are callables on the
    plane and balls are Euclidean.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be decreasing")
    if mesh is not None and radii.min() < 3 * mesh.mesh_size:
        log.warning("radius %.3g below three mesh sizes", radii.min())
    if mesh is None:
        masses = _planar_masses(xi, weight, complex(x), radii)
        outer = _planar_masses(xi, weight, complex(x), 2 * radii)
    else:
        density = np.asarray(weight) * np.exp(np.asarray(xi))
        masses = _mesh_masses(density, x, radii, mesh)
        outer = _mesh_masses(density, x, 2 * radii, mesh)
    plateau = [i for i in range(len(radii)) if abs(masses[i] - outer[i]) < PLATEAU_TOL]
    if not plateau:
        return MassEstimate(radii, masses, outer, None, float("nan"), float("nan"))
    i = plateau[-1]  # radii decrease, so the last qualifying index is the smallest radius
    mhat = float(masses[i])
    return MassEstimate(radii, masses, outer, float(radii[i]), mhat, abs(mhat - round(mhat)))


def pohozaev_check(sigma0: float, lam: float, n: int) -> float:
    """Residual of sigma0^2 - lam^2 = 8 pi (n+1)(sigma0 - lam)."""
    if not sigma0 >= lam >= 0:
        raise ValueError("need sigma0 >= lam >= 0")
    return sigma0**2 - lam**2 - 8 * np.pi * (n + 1) * (sigma0 - lam)


# --- trace-level indicators -------------------------------------------------------------------------


@dataclass
class Verdict:
    kind: str
    slope: float
    diagnostic: str = ""


def concentration_indicator(trace, min_points: int = 5, flat: float = 0.02, rising: float = 0.1) -> Verdict:
    """Slope of d_t - s_t against log2(1/t) over the last records."""
    if isinstance(trace, ContinuationTrace):
        t, ds = trace.column("t"), trace.column("d_minus_s")
    else:
        t, ds = (np.asarray(c, dtype=float) for c in zip(*trace))
    ok = np.isfinite(ds)
    if ok.sum() < min_points:
        return Verdict("undecided", float("nan"), "d_t - s_t undefined or too few points (alpha_t = 0?)")
    x, y = np.log2(1 / t[ok])[-min_points:], ds[ok][-min_points:]
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    slope = float(coef[0])
    dof = max(len(x) - 2, 1)
    se = float(np.sqrt((res[0] if len(res) else 0.0) / dof / np.sum((x - x.mean()) ** 2)))
    if slope > rising and slope > 3 * se:
        return Verdict("concentrating", slope, f"slope {slope:.3g} +- {se:.2g}")
    if abs(slope) <= flat + 3 * se and abs(slope) <= rising:
        return Verdict("non-concentrating", slope, f"slope {slope:.3g} +- {se:.2g}")
    return Verdict("undecided", slope, f"slope {slope:.3g} +- {se:.2g}")


def growth(trace: ContinuationTrace, last: int = 5) -> float:
    """Increase of max xi over the last ``last`` schedule steps."""
    mx = trace.column("max_xi")[-last:]
    return float(mx[-1] - mx[0])


def weierstrass_mesh_points(group: FuchsianGroup) -> dict:
    """Disk images of the six Weierstrass points: the center, the corner class and the side midpoints."""
    corners = group.corners
    pts = {"center": 0j, "corner": complex(corners[0])}
    for k in range(4):
        pts[f"side{k}"] = complex(geodesic_midpoint(corners[k], corners[(k + 1) % 8]))
    return pts


# --- orthogonality ----------------------------------------------------------------------------------


@dataclass
class Assignment:
    orders: tuple  # N_x per peak
    degree: int
    residual: float
    dim: int


def random_floor(basis: BeltramiBasis, points, orders, samples: int = 64, seed: int = 0) -> float:
    """Median residual of random harmonic Beltramis against the same Q(D)."""
    rng = np.random.default_rng(seed)
    sub = discrete_qd(basis.c2, points, orders)
    vals = []
    for _ in range(samples):
        c = rng.normal(size=basis.c2.dim) + 1j * rng.normal(size=basis.c2.dim)
        vals.append(pairing_residual(basis.combine(c), basis, sub))
    return float(np.median(vals))


def orthogonality_report(beta0: HarmonicBeltrami, points, masses, basis: BeltramiBasis, genus: int = 2) -> list:
    """Residuals for every admissible assignment 0 <= N_x <= 2(m_x - 1), best first."""
    ms = [max(1, int(round(m))) for m in masses]
    out = []
    for orders in itertools.product(*(range(0, 2 * m - 1) for m in ms)):
        deg = sum(n + 1 for n in orders)
        assert deg <= 2 * sum(ms) - len(ms)
        try:
            sub = discrete_qd(basis.c2, points, orders)
        except StencilDegenerate as exc:
            log.warning("skipping assignment %s: %s", orders, exc)
            continue
        out.append(Assignment(tuple(orders), deg, pairing_residual(beta0, basis, sub), sub.shape[1]))
    out.sort(key=lambda a: (a.residual, a.orders))
    return out


# --- report ----------------------------------------------------------------------------------------


@dataclass
class PeakReport:
    point: complex
    max_xi: float
    mass: MassEstimate
    nearest_weierstrass: str
    weierstrass_distance: float


@dataclass
class BlowupReport:
    peaks: list = field(default_factory=list)
    total_mass: float = 0.0
    rho_bound: float = 0.0
    pattern_candidates: list = field(default_factory=list)
    orthogonality: list = field(default_factory=list)
    floor: float = float("nan")
    concentration_trend: np.ndarray = field(default_factory=lambda: np.zeros(0))
    concentration: Verdict | None = None
    growth: float = 0.0
    rho_final: float = 0.0
    verdict: str = ""

    @property
    def total_within_bound(self) -> bool:
        return self.total_mass <= self.rho_bound + 0.1


def analyze(
    trace: ContinuationTrace,
    mesh: SurfaceMesh,
    basis: BeltramiBasis | None = None,
    beta0: HarmonicBeltrami | None = None,
    radii=(0.8, 0.6, 0.4),
    genus: int = 2,
) -> BlowupReport:
    """Blow-up report for the smallest t of a trace."""
    rep = BlowupReport()
    rep.concentration_trend = trace.column("d_minus_s")
    rep.concentration = concentration_indicator(trace)
    rep.growth = growth(trace) if len(trace.records) >= 5 else float("nan")
    rep.rho_final = float(trace.records[-1].rho)
    rep.rho_bound = rep.rho_final / (8 * np.pi)
    state = trace.states[-1]
    target = 4 * np.pi * (genus - 1)
    try:
        xf = xi_field(state, mesh)
    except ZeroAlpha:
        rep.verdict = "trivial class: u_t = ln(1/t), no xi field"
        return rep
    wpts = weierstrass_mesh_points(mesh.group)
    peaks = detect_peaks(xf.xi, mesh)
    for p in peaks:
        est = local_mass(xf.xi, 8 * xf.alpha_hat2, p.point, radii, mesh)
        dists = {k: float(mesh.surface_distance(z, np.array([p.point]))[0]) for k, z in wpts.items()}
        name = min(dists, key=dists.get)
        rep.peaks.append(PeakReport(p.point, p.value, est, name, dists[name]))
    rep.total_mass = float(np.nansum([pk.mass.mhat for pk in rep.peaks]))
    if rep.peaks and basis is not None and beta0 is not None:
        masses = [pk.mass.mhat if np.isfinite(pk.mass.mhat) else 1.0 for pk in rep.peaks]
        pts = [pk.point for pk in rep.peaks]
        rep.orthogonality = orthogonality_report(beta0, pts, masses, basis, genus)
        if rep.orthogonality:
            best = rep.orthogonality[0]
            rep.floor = random_floor(basis, pts, best.orders)
        from .sigma import MassPattern

        ms = tuple(max(1, int(round(m))) for m in masses)
        rep.pattern_candidates = [
            MassPattern(len(ms), ms, tuple(a.orders[i] + 1 for i in range(len(ms))))
            for a in rep.orthogonality
            if all(1 <= a.orders[i] + 1 <= 2 * ms[i] - 1 for i in range(len(ms)))
        ]
    if rep.peaks and rep.growth >= GROWTH_EVIDENCE:
        names = ", ".join(f"{pk.nearest_weierstrass} (distance {pk.weierstrass_distance:.3g})" for pk in rep.peaks)
        rep.verdict = f"blow-up evidence; peaks near Weierstrass point {names}"
    elif abs(rep.rho_final - target) <= 0.08 * target and _xi_variation(trace) <= 2.0:
        rep.verdict = "compactness evidence; rho -> 4pi(g-1)"
    else:
        rep.verdict = f"undecided; max xi grew by {rep.growth:.3g} over the last 5 steps"
    return rep


def _xi_variation(trace: ContinuationTrace, last: int = 5) -> float:
    mx = trace.column("max_xi")[-last:]
    return float(mx.max() - mx.min())


def gauss_equals_liouville(state: SolverState, mesh: SurfaceMesh) -> float:
    """Largest difference between the Liouville and Gauss residual vectors."""
    return float(np.abs(liouville_residual(state, mesh) - gauss_residual(state.u, state.eta, state.beta0, state.t, mesh)).max())
