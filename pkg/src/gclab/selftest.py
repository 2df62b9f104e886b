"""Invariant suite behind ``gclab selftest`` (refinement 3 unless the config says otherwise)."""

from __future__ import annotations

import itertools
import tempfile
import time
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

GENUS3 = (0, 1, 0, -2, 0, 0, 0, 1)  # x^7 - 2x^3 + x, squarefree
GENUS4 = (1, 0, 0, 0, 0, 0, 0, 0, 0, 1)


class Suite:
    def __init__(self, name):
        self.name, self.results = name, []

    def check(self, invariant, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash counts as a failed invariant
            ok, detail = False, f"{type(exc).__name__}: {exc}"
            log.debug("invariant %s crashed", invariant, exc_info=True)
        self.results.append((invariant, bool(ok), detail))


def _hyperelliptic(s: Suite, rng):
    from .hyperelliptic import Divisor, QuadDiffAlg, curve_new, div_of_qd, q_of_d, weierstrass_points

    curves = {g: curve_new(np.array(c, dtype=complex)) for g, c in ((2, (0, -1, 0, 0, 0, 1)), (3, GENUS3), (4, GENUS4))}
    s.check("dim C2 = 3(g-1)", lambda: (all(c.dim_c2 == 3 * (g - 1) for g, c in curves.items()), "g=2,3,4"))
    s.check("2g+2 Weierstrass points", lambda: (all(len(weierstrass_points(c)) == 2 * g + 2 for g, c in curves.items()), ""))

    def rr():
        bad = 0
        for g in (2, 3):
            c = curves[g]
            for _ in range(20):
                deg = int(rng.integers(1, 2 * g - 2))
                pts = [(c.random_point(rng), 1) for _ in range(deg)]
                bad += q_of_d(c, Divisor.from_points(c, pts)).dim != 3 * (g - 1) - deg
        return bad == 0, f"{bad} failures"

    s.check("Riemann-Roch dimensions", rr)

    def zeros():
        bad = 0
        for g in (2, 3):
            c = curves[g]
            for _ in range(10):
                a = QuadDiffAlg(c, rng.normal(size=c.dim_c2) + 1j * rng.normal(size=c.dim_c2))
                bad += div_of_qd(a).degree != 4 * (g - 1)
        return bad == 0, f"{bad} failures"

    s.check("zero count 4(g-1)", zeros)


def _sigma(s: Suite, rng):
    from .hyperelliptic import curve_new, kodaira
    from .sigma import MassPattern, enumerate_patterns, genus2_conic_residual, pattern_dimension_bound

    s.check("genus-2 pattern set", lambda: (enumerate_patterns(2) == [MassPattern(1, (1,), (1,))], ""))

    def brute(g):
        out = set()
        for k in range(1, g):
            for ms in itertools.product(range(1, g), repeat=k):
                for ns in itertools.product(range(1, 2 * g), repeat=k):
                    p = MassPattern(k, ms, ns)
                    if p.admissible(g):
                        pairs = tuple(sorted(zip(ms, ns)))
                        out.add(MassPattern(k, tuple(a for a, _ in pairs), tuple(b for _, b in pairs)))
        return sorted(out)

    s.check("genus-3 enumeration", lambda: (enumerate_patterns(3) == brute(3), f"{len(brute(3))} patterns"))
    s.check("k + N - 1 <= 2g - 3", lambda: (
        all(pattern_dimension_bound(p, g) <= 2 * g - 3 for g in (2, 3, 4) for p in enumerate_patterns(g)), ""))
    c = curve_new(np.array((0, -1, 0, 0, 0, 1), dtype=complex))

    def conic():
        worst = max(genus2_conic_residual(kodaira(c, c.random_point(rng)).w) for _ in range(20))
        return worst <= 1e-10, f"max {worst:.2e}"

    s.check("kodaira image on the conic", conic)


def _fuchsian(s: Suite, level, mesh_file):
    from .cli import load_snapshot, mesh_snapshot
    from .fuchsian import bolza_group, build_mesh

    g = bolza_group()
    mesh = build_mesh(g, level)
    s.check("relator closes", lambda: (g.relator_residual < 1e-10, f"{g.relator_residual:.2e}"))
    s.check("euler characteristic -2", lambda: (mesh.euler_characteristic() == -2, str(mesh.euler_characteristic())))
    area = float(mesh.hyperbolic_areas.sum())
    s.check("area 4 pi", lambda: (abs(area / (4 * np.pi) - 1) < 5e-3, f"{area:.6f}"))

    def roundtrip():
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "mesh.txt"
            p.write_text(mesh_snapshot(mesh), encoding="utf-8")
            again = load_snapshot(p)
            return mesh_snapshot(again) == mesh_snapshot(mesh), ""

    s.check("snapshot round trip", roundtrip)
    if mesh_file is not None:
        s.check(f"mesh file {mesh_file}", lambda: (load_snapshot(mesh_file) is not None, ""))
    return mesh


def _dolbeault(s: Suite, mesh, rng):
    from .dolbeault import (
        EXPECTED_DIM,
        beltrami_norm,
        dolbeault_decompose,
        harmonic_beltrami_basis,
        holomorphic_basis,
        hodge_star_E,
        hodge_star_E_inv,
    )
    from .fuchsian import dbar

    dims = {w: holomorphic_basis(mesh, w, min_gap=1.0).dim for w in EXPECTED_DIM}
    s.check("kernel dims (1, g, 3g-3)", lambda: (dims == EXPECTED_DIM, str(dims)))
    c2 = holomorphic_basis(mesh, (-2, 0), min_gap=1.0)
    bb = harmonic_beltrami_basis(c2)
    s.check("pairing well conditioned", lambda: (bb.condition < 10, f"{bb.condition:.3g}"))

    def star():
        b = rng.normal(size=mesh.n_triangles) + 1j * rng.normal(size=mesh.n_triangles)
        err = np.abs(hodge_star_E_inv(hodge_star_E(b, mesh), mesh) - b).max()
        return err < 1e-12, f"{err:.2e}"

    s.check("star inverse", star)

    def exact():
        eta = rng.normal(size=mesh.n_dofs) + 1j * rng.normal(size=mesh.n_dofs)
        b = dbar(mesh, (1, 0)) @ eta
        h, _, res = dolbeault_decompose(b, bb)
        rel = beltrami_norm(mesh, h.field) / beltrami_norm(mesh, b)
        return rel < 1e-8 and res < 1e-8, f"harmonic part {rel:.2e}"

    s.check("exact beta has zero harmonic part", exact)
    return bb


def _donaldson(s: Suite, mesh, bb, rng):
    from .dolbeault import beltrami_norm
    from .donaldson import continuation, energy, minimize

    def trivial():
        z = np.zeros(mesh.n_triangles, dtype=complex)
        worst = 0.0
        for t in (1.0, 0.1, 0.01):
            st = minimize(z, t, mesh)
            worst = max(worst, np.abs(st.u - np.log(1 / t)).max())
            a = float(mesh.dof_areas.sum())
            closed = -np.log(1 / t) * a + a
            if abs(energy(st.u, st.eta, z, t, mesh) - closed) > 1e-8 * abs(closed):
                return False, f"energy at t={t}"
        return worst < 1e-8, f"sup error {worst:.2e}"

    s.check("[beta]=0 gives u = ln(1/t)", trivial)
    b0 = bb.combine(rng.normal(size=3) + 1j * rng.normal(size=3)).field
    b0 = b0 / beltrami_norm(mesh, b0)
    tr = continuation(b0, 0.5 ** np.arange(7), mesh)
    rho = tr.column("rho")
    s.check("rho nonincreasing in t", lambda: (np.all(np.diff(rho) >= -1e-6 * 4 * np.pi), ""))
    tot = rho + tr.column("t_int_eu")
    s.check("rho + t int e^u = area", lambda: (np.abs(tot / tr.area - 1).max() < 1e-2, f"{np.abs(tot / tr.area - 1).max():.2e}"))
    s.check("t e^d <= 1", lambda: (np.all(tr.column("t") * np.exp(tr.column("d_t")) <= 1 + 1e-6), ""))


def _blowup(s: Suite):
    from .blowup import BubbleFixture, concentration_indicator, local_mass, pohozaev_check

    def masses():
        devs = []
        for n in (0, 1, 2):
            fx = BubbleFixture(n, 1e3)
            est = local_mass(fx.xi, fx.weight, 0j, [0.8, 0.6, 0.4, 0.3])
            devs.append(abs(est.mhat - (n + 1)))
        return max(devs) <= 0.05, f"deviations {np.round(devs, 4).tolist()}"

    s.check("bubble mass quantization", masses)
    s.check("pohozaev roots", lambda: (max(abs(pohozaev_check(10.0, 10.0, 1)),
                                           abs(pohozaev_check(16 * np.pi - 1.0, 1.0, 1))) <= 1e-9, ""))
    s.check("concentration indicator", lambda: (
        concentration_indicator([(2.0 ** -k, k) for k in range(8)]).kind == "concentrating"
        and concentration_indicator([(2.0 ** -k, 0.3) for k in range(8)]).kind == "non-concentrating", ""))


def run_all(cfg=None) -> tuple:
    """(all passed, report text, seconds)."""
    level = 3 if cfg is None else cfg["mesh.refinement"]
    mesh_file = None if cfg is None else cfg.get("mesh.file")
    seed = 0 if cfg is None else cfg["seed"]
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    suites = [Suite(n) for n in ("hyperelliptic", "sigma", "mesh", "dolbeault", "donaldson", "blowup")]
    _hyperelliptic(suites[0], rng)
    _sigma(suites[1], rng)
    mesh = _fuchsian(suites[2], level, mesh_file)
    bb = _dolbeault(suites[3], mesh, rng)
    _donaldson(suites[4], mesh, bb, rng)
    _blowup(suites[5])
    lines, ok = [], True
    for su in suites:
        passed = sum(r[1] for r in su.results)
        lines.append(f"suite {su.name}: {passed}/{len(su.results)} passed")
        for name, good, detail in su.results:
            if not good:
                ok = False
                lines.append(f"  FAIL {su.name}: {name} ({detail})")
    lines.append(f"selftest {'passed' if ok else 'FAILED'}")
    return ok, "\n".join(lines) + "\n", time.perf_counter() - start
