"""Mass patterns and numerical membership tests for the variety of special classes."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .hyperelliptic import (
    CurvePoint,
    Divisor,
    DualCovector,
    HyperellipticCurve,
    ZeroCovector,
    kodaira,
    orthogonality_residual,
    projective_distance,
    q_of_d,
    weierstrass_points,
)

log = logging.getLogger(__name__)


class InadmissiblePattern(ValueError):
    pass


class SearchBudgetExceeded(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True, order=True)
class MassPattern:
    k: int
    m: tuple
    N: tuple

    @property
    def total_m(self) -> int:
        return sum(self.m)

    @property
    def total_N(self) -> int:
        return sum(self.N)

    def admissible(self, genus: int) -> bool:
        return (
            1 <= self.k <= genus - 1
            and len(self.m) == len(self.N) == self.k
            and self.total_m <= genus - 1
            and all(1 <= n <= 2 * m - 1 for m, n in zip(self.m, self.N))
            and 1 <= self.total_N <= 2 * self.total_m - self.k
        )


def enumerate_patterns(genus: int) -> list:
    """All admissible (k, m, N) up to index permutation, sorted canonically."""
    if genus < 2:
        raise ValueError("genus must be at least 2")
    out = set()
    for k in range(1, genus):
        for ms in itertools.combinations_with_replacement(range(1, genus), k):
            if sum(ms) > genus - 1:
                continue
            for ns in itertools.product(*(range(1, 2 * m) for m in ms)):
                pairs = tuple(sorted(zip(ms, ns)))
                out.add(MassPattern(k, tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)))
    patterns = sorted(out)
    for p in patterns:
        assert p.admissible(genus), p
    return patterns


def pattern_dimension_bound(pattern: MassPattern, genus: int) -> int:
    if not pattern.admissible(genus):
        raise InadmissiblePattern(f"{pattern} is not admissible for genus {genus}")
    bound = pattern.k + pattern.total_N - 1
    assert bound <= 2 * genus - 3 < 3 * genus - 4
    return bound


def genus2_conic_residual(w) -> float:
    w = np.asarray(getattr(w, "w", w), dtype=complex)
    nrm = np.vdot(w, w).real
    if nrm == 0:
        raise ZeroCovector("zero covector")
    return float(abs(w[0] * w[2] - w[1] ** 2) / nrm)


@dataclass
class SearchOptions:
    grid: int = 40
    radius: float = 3.0
    nm_iter: int = 200
    restarts: int = 3
    starts: int = 12
    threshold: float = 1e-4
    max_evals: int = 400_000
    seed: int = 0


@dataclass
class SigmaReport:
    pattern: MassPattern
    best_divisor: Divisor
    residual: float
    search_stats: dict = field(default_factory=dict)

    @property
    def member(self) -> bool:
        return self.residual <= self.search_stats.get("threshold", 1e-4)


def _canonical(w) -> np.ndarray:
    w = np.asarray(getattr(w, "w", w), dtype=complex)
    k = int(np.argmax(np.abs(w)))
    if w[k] == 0:
        raise ZeroCovector("zero covector")
    w = w / w[k]
    # rounding makes the canonical representative identical for w and lambda*w
    return np.round(w.real, 12) + 1j * np.round(w.imag, 12)


class _Search:
    def __init__(self, curve, w, pattern, opts):
        self.curve, self.w, self.pattern, self.opts = curve, w, pattern, opts
        self.evals = 0

    def divisor(self, pts) -> Divisor:
        return Divisor.from_points(self.curve, list(zip(pts, self.pattern.N)))

    def residual(self, pts) -> float:
        self.evals += 1
        if self.evals > self.opts.max_evals:
            raise SearchBudgetExceeded("evaluation budget exhausted")
        try:
            sub = q_of_d(self.curve, self.divisor(pts), min_gap=0.0)
        except Exception:  # degenerate chart near a branch point
            return np.inf
        return orthogonality_residual(self.w, sub)

    def candidates(self) -> list:
        o = self.opts
        ax = np.linspace(-o.radius, o.radius, o.grid)
        xs = (ax[:, None] + 1j * ax[None, :]).ravel()
        xs = xs[np.abs(xs) <= o.radius]
        pts = []
        for x in xs:
            pt = self.curve.point(x, 1)
            pts.append(pt)
            if pt.kind == "affine":
                pts.append(self.curve.point(x, -1))
        pts.extend(weierstrass_points(self.curve))
        if not self.curve.odd:
            pts.extend([self.curve.infinity(1), self.curve.infinity(-1)])
        return pts

    def refine(self, pts) -> tuple:
        """Nelder-Mead over the x-coordinates of affine points, sheets kept by continuation."""
        movable = [i for i, p in enumerate(pts) if p.kind == "affine"]
        best_pts, best = list(pts), self.residual(pts)
        if not movable:
            return best_pts, best

        def unpack(v, base):
            out = list(base)
            for j, i in enumerate(movable):
                out[i] = self.curve.move(base[i], complex(v[2 * j], v[2 * j + 1]))
            return out

        for _ in range(self.opts.restarts):
            base = list(best_pts)
            v0 = np.array([c for i in movable for c in (base[i].x.real, base[i].x.imag)])
            res = minimize(
                lambda v: self.residual(unpack(v, base)),
                v0,
                method="Nelder-Mead",
                options={"maxiter": self.opts.nm_iter, "xatol": 1e-13, "fatol": 1e-16,
                         "initial_simplex": v0 + np.vstack([np.zeros_like(v0), 1e-2 * np.eye(len(v0))])},
            )
            if res.fun < best:
                best_pts, best = unpack(res.x, base), float(res.fun)
            else:
                break
        return best_pts, best


def sigma_membership_residual(curve: HyperellipticCurve, w, pattern: MassPattern, opts: SearchOptions | None = None) -> SigmaReport:
    """Minimize the orthogonality residual of w over divisors sum N_j x_j."""
    opts = opts or SearchOptions()
    if not pattern.admissible(curve.genus):
        raise InadmissiblePattern(f"{pattern} is not admissible for genus {curve.genus}")
    search = _Search(curve, _canonical(w), pattern, opts)
    stats = {"grid": opts.grid, "threshold": opts.threshold, "refinements": 0}
    best_pts, best = None, np.inf
    try:
        cands = search.candidates()
        single = np.array([search.residual([c] * pattern.k) if pattern.k == 1 else 0.0 for c in cands])
        if pattern.k == 1:
            order = np.argsort(single, kind="stable")[:3]
            starts = [[cands[i]] for i in order]
        else:
            rng = np.random.default_rng(opts.seed)
            starts = [[cands[i] for i in rng.choice(len(cands), pattern.k, replace=False)] for _ in range(opts.starts)]
        for s in starts:
            pts, val = search.refine(s)
            stats["refinements"] += 1
            if val < best:
                best_pts, best = pts, val
    except SearchBudgetExceeded as exc:
        report = SigmaReport(pattern, search.divisor(best_pts) if best_pts else Divisor(curve), float(best), stats)
        stats["evaluations"] = search.evals
        raise SearchBudgetExceeded(str(exc), report) from None
    stats["evaluations"] = search.evals
    return SigmaReport(pattern, search.divisor(best_pts), float(best), stats)


@dataclass(frozen=True)
class Classification:
    kind: str
    point: CurvePoint | None
    distance: float


def weierstrass_classification(curve: HyperellipticCurve, w, tol: float = 1e-6) -> Classification:
    """Genus 2: is [w] the Kodaira image of a Weierstrass point, of another point, or generic?"""
    if curve.genus != 2:
        raise ValueError("classification is defined for genus 2")
    w = np.asarray(getattr(w, "w", w), dtype=complex)
    dists = [(projective_distance(kodaira(curve, q), w), q) for q in weierstrass_points(curve)]
    d, q = min(dists, key=lambda t: t[0])
    if d <= tol:
        return Classification("weierstrass-aligned", q, d)
    conic = genus2_conic_residual(w)
    if conic <= tol:
        pt = curve.point(w[1] / w[0]) if abs(w[0]) > 1e-14 * np.linalg.norm(w) else curve.infinity()
        return Classification("on-tau-not-weierstrass", pt, conic)
    return Classification("generic", None, conic)


def covector_from(values) -> DualCovector:
    return DualCovector(np.asarray(values, dtype=complex))
