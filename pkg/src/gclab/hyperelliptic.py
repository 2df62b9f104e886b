"""Hyperelliptic curves y^2 = p(x), their quadratic differentials and divisors.

Coefficient vectors are ascending (index j multiplies x^j). A quadratic
differential is stored in the canonical basis

    x^j dx^2 / y^2   (j = 0 .. 2g-2)   followed by   x^j dx^2 / y   (j = 0 .. g-3)

so that a general element reads (q(x) + r(x) y) dx^2 / y^2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.linalg import qr
from scipy.optimize import linear_sum_assignment

log = logging.getLogger(__name__)

MAX_ORDER = 12
MERGE_TOL = 1e-9
RANK_TOL = 1e-8
RANK_GAP = 1e3


class HyperellipticError(Exception):
    pass


class NotSquarefree(HyperellipticError, ValueError):
    pass


class DegreeTooLow(HyperellipticError, ValueError):
    pass


class ExpansionOverflow(HyperellipticError):
    pass


class ZeroDifferential(HyperellipticError, ValueError):
    pass


class RankAmbiguous(HyperellipticError):
    pass


class PivotDegenerate(HyperellipticError):
    pass


class DegreeMismatch(HyperellipticError, ValueError):
    pass


class ZeroCovector(HyperellipticError, ValueError):
    pass


# --- truncated power series -------------------------------------------------


def _ser_mul(a, b, n):
    return np.convolve(a[:n], b[:n])[:n]


def _ser_inv(a, n):
    if a[0] == 0:
        raise ExpansionOverflow("series with vanishing constant term is not invertible")
    out = np.zeros(n, dtype=complex)
    out[0] = 1.0 / a[0]
    for k in range(1, n):
        m = min(k, len(a) - 1)
        out[k] = -np.dot(a[1 : m + 1], out[k - 1 :: -1][:m]) / a[0]
    return out


def _ser_sqrt(a, n, root0=None):
    """Square root of a series, the constant term taken as ``root0``."""
    a = np.pad(np.asarray(a, dtype=complex), (0, max(0, n - len(a))))[:n]
    out = np.zeros(n, dtype=complex)
    out[0] = np.sqrt(a[0]) if root0 is None else root0
    if out[0] == 0:
        raise ExpansionOverflow("square root of a series vanishing at the origin")
    for k in range(1, n):
        acc = np.dot(out[1:k], out[k - 1 : 0 : -1])
        out[k] = (a[k] - acc) / (2 * out[0])
    return out


def _ser_in_square(a, n):
    """Substitute s^2 for the variable: sum a_k u^k -> sum a_k s^(2k)."""
    out = np.zeros(n, dtype=complex)
    m = min(len(a), (n + 1) // 2)
    out[: 2 * m : 2] = a[:m]
    return out


def _shift(n, k):
    """Series of s^k truncated at n terms, k >= 0."""
    out = np.zeros(n, dtype=complex)
    if k < n:
        out[k] = 1.0
    return out


def _chordal(a, b) -> float:
    if np.isinf(a) and np.isinf(b):
        return 0.0
    if np.isinf(a):
        return 2.0 / np.sqrt(1 + abs(b) ** 2)
    if np.isinf(b):
        return 2.0 / np.sqrt(1 + abs(a) ** 2)
    return 2 * abs(a - b) / np.sqrt((1 + abs(a) ** 2) * (1 + abs(b) ** 2))


# --- curves and points --------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    """A point on the curve together with its chart.

    ``kind`` is ``affine`` (chart x = x0 + s), ``branch`` (x = x0 + s^2) or
    ``infinity`` (x = s^-2 for odd degree, x = 1/s on sheet ``sheet`` for even
    degree).
    """

    kind: str
    x: complex = complex("inf")
    y: complex = complex("inf")
    sheet: int = 0

    @property
    def is_weierstrass(self) -> bool:
        return self.kind == "branch" or (self.kind == "infinity" and self.sheet == 0)

    def __repr__(self) -> str:
        if self.kind == "infinity":
            return "inf" if self.sheet == 0 else f"inf{'+' if self.sheet > 0 else '-'}"
        if self.kind == "branch":
            return f"branch({self.x:.6g})"
        return f"affine({self.x:.6g}, {self.y:.6g})"


@dataclass(frozen=True, eq=False)
class HyperellipticCurve:
    coeffs: np.ndarray
    genus: int
    roots: np.ndarray
    tol: float = 1e-8

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def odd(self) -> bool:
        return self.degree % 2 == 1

    @property
    def dim_c2(self) -> int:
        return 3 * (self.genus - 1)

    @property
    def n_q(self) -> int:
        return 2 * self.genus - 1

    @cached_property
    def branch_points(self) -> list:
        pts = [CurvePoint("branch", complex(r), 0j) for r in self.roots]
        if self.odd:
            pts.append(CurvePoint("infinity"))
        return pts

    def p(self, x):
        return P.polyval(x, self.coeffs)

    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.roots))))

    def point(self, x0: complex, sheet: int = 1) -> CurvePoint:
        """Point over x0; ``sheet`` picks the sign of the principal square root."""
        x0 = complex(x0)
        for r in self.roots:
            if abs(x0 - r) <= MERGE_TOL * self.scale():
                return CurvePoint("branch", complex(r), 0j)
        return CurvePoint("affine", x0, sheet * np.sqrt(complex(self.p(x0))))

    def move(self, pt: CurvePoint, x_new: complex) -> CurvePoint:
        """Point over ``x_new`` on the sheet continuing ``pt``."""
        a, b = self.point(x_new, 1), self.point(x_new, -1)
        if pt.kind != "affine" or a.kind != "affine":
            return a
        return a if abs(a.y - pt.y) <= abs(b.y - pt.y) else b

    def infinity(self, sheet: int = 1) -> CurvePoint:
        return CurvePoint("infinity") if self.odd else CurvePoint("infinity", sheet=1 if sheet >= 0 else -1)

    def involution(self, pt: CurvePoint) -> CurvePoint:
        if pt.kind == "affine":
            return CurvePoint("affine", pt.x, -pt.y)
        if pt.kind == "infinity":
            return CurvePoint("infinity", sheet=-pt.sheet)
        return pt

    def on_curve(self, pt: CurvePoint) -> bool:
        if pt.kind != "affine":
            return True
        px = self.p(pt.x)
        return abs(pt.y**2 - px) <= self.tol * (1 + abs(px))

    def random_point(self, rng, radius: float = 2.0) -> CurvePoint:
        r = radius * np.sqrt(rng.uniform())
        x0 = r * np.exp(2j * np.pi * rng.uniform())
        return self.point(x0, 1 if rng.uniform() < 0.5 else -1)

    def _v(self, pt: CurvePoint) -> complex:
        """Coordinate y / x^(g+1), finite near infinity."""
        if pt.kind == "infinity":
            if self.odd:
                return 0j
            return pt.sheet * np.sqrt(complex(self.coeffs[-1]))
        den = pt.x ** (self.genus + 1)
        if den == 0:
            return complex("inf") if pt.y != 0 else 0j
        return pt.y / den

    def point_distance(self, a: CurvePoint, b: CurvePoint) -> float:
        """Chordal-type distance combining the x-sphere and a sheet coordinate."""
        dx = _chordal(a.x, b.x)
        inside = [pt.kind != "infinity" and abs(pt.x) <= 1 for pt in (a, b)]
        if all(inside):
            dy = _chordal(a.y, b.y)
        elif not any(inside):
            dy = _chordal(self._v(a), self._v(b))
        else:
            dy = max(_chordal(a.y, b.y), _chordal(self._v(a), self._v(b)))
        return max(dx, dy)


def _polish_roots(coeffs, roots, iters: int = 3):
    dc = P.polyder(coeffs)
    out = np.array(roots, dtype=complex)
    for _ in range(iters):
        d = P.polyval(out, dc)
        ok = d != 0
        out[ok] -= P.polyval(out[ok], coeffs) / d[ok]
    return out


def curve_new(coeffs, tol: float = 1e-8) -> HyperellipticCurve:
    """Curve y^2 = p(x) with ascending coefficients, normalized to a monic p."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=complex), "b")
    deg = len(c) - 1
    if deg < 5:
        raise DegreeTooLow(f"deg p = {deg} < 5 gives genus < 2")
    c = c / c[-1]
    roots = _polish_roots(c, P.polyroots(c))
    scale = max(1.0, float(np.max(np.abs(roots))))
    sep = min(abs(a - b) for i, a in enumerate(roots) for b in roots[i + 1 :])
    if sep <= tol * scale * 1e2 or sep < 1e-6 * scale:
        raise NotSquarefree(f"p has a repeated root (separation {sep:.3g})")
    genus = (deg - 1) // 2
    return HyperellipticCurve(c, genus, roots, tol)


def weierstrass_points(curve: HyperellipticCurve) -> list:
    return list(curve.branch_points)


# --- quadratic differentials ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadDiffAlg:
    curve: HyperellipticCurve
    coeff: np.ndarray

    @property
    def q(self) -> np.ndarray:
        return self.coeff[: self.curve.n_q]

    @property
    def r(self) -> np.ndarray:
        return self.coeff[self.curve.n_q :]

    def __add__(self, other):
        return QuadDiffAlg(self.curve, self.coeff + other.coeff)

    def __sub__(self, other):
        return QuadDiffAlg(self.curve, self.coeff - other.coeff)

    def __mul__(self, s):
        return QuadDiffAlg(self.curve, self.coeff * s)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeff))


def qd(curve: HyperellipticCurve, q=(), r=()) -> QuadDiffAlg:
    c = np.zeros(curve.dim_c2, dtype=complex)
    c[: len(q)] = q
    c[curve.n_q : curve.n_q + len(r)] = r
    return QuadDiffAlg(curve, c)


def c2_basis(curve: HyperellipticCurve) -> list:
    eye = np.eye(curve.dim_c2, dtype=complex)
    return [QuadDiffAlg(curve, eye[j]) for j in range(curve.dim_c2)]


def frame_matrix(curve: HyperellipticCurve, pt: CurvePoint, order: int = MAX_ORDER) -> np.ndarray:
    """Taylor coefficients of every canonical basis element in the chart of ``pt``.

    Row j holds the coefficients a_0..a_order of the j-th basis element in the
    frame (d local_param)^2.
    """
    if order > MAX_ORDER:
        raise ExpansionOverflow(f"order {order} exceeds the configured maximum {MAX_ORDER}")
    g, n = curve.genus, order + 1
    nq, nr = curve.n_q, g - 2
    rows = np.zeros((curve.dim_c2, n), dtype=complex)
    c = curve.coeffs
    if pt.kind == "affine":
        p0 = complex(curve.p(pt.x))
        if abs(p0) <= curve.tol:
            raise ExpansionOverflow("affine chart at a branch point")
        y = _ser_sqrt(_taylor_shift(c, pt.x), n, root0=pt.y)
        inv_y = _ser_inv(y, n)
        inv_y2 = _ser_mul(inv_y, inv_y, n)
        xs = np.zeros(n, dtype=complex)
        xs[0] = pt.x
        if n > 1:
            xs[1] = 1.0
        power = _shift(n, 0)
        for j in range(max(nq, nr)):
            if j < nq:
                rows[j] = _ser_mul(power, inv_y2, n)
            if j < nr:
                rows[nq + j] = _ser_mul(power, inv_y, n)
            power = _ser_mul(power, xs, n)
        return rows
    if pt.kind == "branch":
        # x = x0 + s^2, p(x) = s^2 Q(s^2), y = s sqrt(Q), dx = 2 s ds
        quot = _taylor_shift(c, pt.x)[1:]
        qs = _ser_in_square(quot, n)
        sq = _ser_sqrt(qs, n)
        inv_q = _ser_inv(qs, n)
        xs = np.zeros(n, dtype=complex)
        xs[0] = pt.x
        if n > 2:
            xs[2] = 1.0
        power = _shift(n, 0)
        r_fac = _ser_mul(_ser_mul(_shift(n, 1), sq, n), inv_q, n)
        for j in range(max(nq, nr)):
            if j < nq:
                rows[j] = 4 * _ser_mul(power, inv_q, n)
            if j < nr:
                rows[nq + j] = 4 * _ser_mul(power, r_fac, n)
            power = _ser_mul(power, xs, n)
        return rows
    rev = c[::-1]
    if curve.odd:
        # x = s^-2, y = s^-(2g+1) sqrt(rev(s^2)), dx = -2 s^-3 ds
        rs = _ser_in_square(rev, n)
        inv_r = _ser_inv(rs, n)
        inv_sq = _ser_inv(_ser_sqrt(rs, n), n)
        for j in range(nq):
            rows[j] = 4 * _ser_mul(_shift(n, 4 * g - 4 - 2 * j), inv_r, n)
        for j in range(nr):
            rows[nq + j] = 4 * _ser_mul(_shift(n, 2 * g - 5 - 2 * j), inv_sq, n)
        return rows
    # even degree: x = 1/s, y = sheet * s^-(g+1) sqrt(rev(s)), dx = -s^-2 ds
    inv_r = _ser_inv(np.pad(rev, (0, max(0, n - len(rev))))[:n], n)
    inv_sq = _ser_inv(_ser_sqrt(rev, n), n) * pt.sheet
    for j in range(nq):
        rows[j] = _ser_mul(_shift(n, 2 * g - 2 - j), inv_r, n)
    for j in range(nr):
        rows[nq + j] = _ser_mul(_shift(n, g - 3 - j), inv_sq, n)
    return rows


def _taylor_shift(c, x0) -> np.ndarray:
    """Coefficients of p(x0 + s) in s."""
    n = len(c)
    out = np.array(c, dtype=complex)
    # repeated synthetic division (Horner shift)
    for k in range(n):
        for j in range(n - 2, k - 1, -1):
            out[j] += x0 * out[j + 1]
    return out


def local_expansion(alpha: QuadDiffAlg, pt: CurvePoint, order: int = MAX_ORDER) -> np.ndarray:
    return alpha.coeff @ frame_matrix(alpha.curve, pt, order)


def vanishing_order(coeffs, rel_tol: float = 1e-8) -> int:
    a = np.abs(np.asarray(coeffs))
    scale = a.max() if a.size else 0.0
    if scale == 0:
        return len(a)
    return int(np.argmax(a > rel_tol * scale))


# --- divisors ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Divisor:
    curve: HyperellipticCurve
    entries: tuple = field(default_factory=tuple)

    @classmethod
    def from_points(cls, curve, pairs) -> "Divisor":
        merged: list = []
        for pt, m in pairs:
            if m <= 0:
                raise ValueError("multiplicities must be positive")
            for i, (q, k) in enumerate(merged):
                if curve.point_distance(pt, q) < MERGE_TOL:
                    merged[i] = (q, k + m)
                    break
            else:
                merged.append((pt, int(m)))
        return cls(curve, tuple(merged))

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.entries)

    @property
    def points(self) -> list:
        return [pt for pt, _ in self.entries]

    def expanded(self) -> list:
        return [pt for pt, m in self.entries for _ in range(m)]

    def __add__(self, other: "Divisor") -> "Divisor":
        return Divisor.from_points(self.curve, list(self.entries) + list(other.entries))

    def __le__(self, other: "Divisor") -> bool:
        for pt, m in self.entries:
            match = [k for q, k in other.entries if self.curve.point_distance(pt, q) < MERGE_TOL]
            if not match or match[0] < m:
                return False
        return True

    def __repr__(self) -> str:
        return " + ".join(f"{m}*{pt!r}" for pt, m in self.entries) or "0"


def divisor_distance(d1: Divisor, d2: Divisor) -> float:
    """Bottleneck matching distance between two divisors of equal degree."""
    if d1.degree != d2.degree:
        raise DegreeMismatch(f"degrees {d1.degree} and {d2.degree} differ")
    a, b = d1.expanded(), d2.expanded()
    if not a:
        return 0.0
    cost = np.array([[d1.curve.point_distance(p, q) for q in b] for p in a])
    levels = np.unique(cost)
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        blocked = (cost > levels[mid]).astype(float)
        r, c = linear_sum_assignment(blocked)
        if blocked[r, c].sum() == 0:
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


def _clusters(roots, radius):
    """Group roots within ``radius``; returns (mean, multiplicity) pairs."""
    left = list(roots)
    out = []
    while left:
        seed = left.pop(0)
        group = [seed]
        changed = True
        while changed:
            changed = False
            for z in list(left):
                if min(abs(z - g) for g in group) < radius:
                    group.append(z)
                    left.remove(z)
                    changed = True
        out.append((complex(np.mean(group)), len(group)))
    return out


def div_of_qd(alpha: QuadDiffAlg) -> Divisor:
    """Zero divisor of a nonzero quadratic differential; degree 4(g-1)."""
    curve = alpha.curve
    if alpha.norm() == 0:
        raise ZeroDifferential("alpha = 0 has no divisor")
    q, r = np.trim_zeros(alpha.q, "b"), np.trim_zeros(alpha.r, "b")
    # with r = 0 both sheets vanish together, so roots of q suffice (and stay simple-ish)
    poly = q if not r.size else P.polysub(P.polymul(q, q), P.polymul(P.polymul(r, r), curve.coeffs))
    poly = np.asarray(poly, dtype=complex)
    cut = 1e-13 * np.max(np.abs(poly))
    while len(poly) > 1 and abs(poly[-1]) <= cut:
        poly = poly[:-1]
    scale = curve.scale()
    entries = []
    if len(poly) > 1:
        roots = P.polyroots(poly)
        radius = 1e-6 * max(scale, float(np.max(np.abs(roots))))
        for x0, mult in _clusters(roots, radius):
            x0 = _polish_cluster(poly, x0, mult)
            if np.min(np.abs(curve.roots - x0)) < 1e-4 * scale:
                continue
            if r.size:
                entries.extend(_sheet_split(alpha, x0, mult))
            else:
                entries.extend((curve.point(x0, s), mult) for s in (1, -1))
    for pt in curve.branch_points + ([] if curve.odd else [curve.infinity(1), curve.infinity(-1)]):
        v = vanishing_order(local_expansion(alpha, pt, MAX_ORDER))
        if v > MAX_ORDER - 1:
            raise ExpansionOverflow("vanishing order beyond the expansion order")
        if v:
            entries.append((pt, v))
    div = Divisor.from_points(curve, entries)
    expected = 4 * (curve.genus - 1)
    if div.degree != expected:
        raise HyperellipticError(f"zero count {div.degree} differs from {expected}")
    return div


def _polish_cluster(poly, x0, mult, iters: int = 4):
    d = np.asarray(poly, dtype=complex)
    for _ in range(mult - 1):
        d = P.polyder(d)
    dd = P.polyder(d)
    for _ in range(iters):
        den = P.polyval(x0, dd)
        if den == 0:
            break
        step = P.polyval(x0, d) / den
        if not np.isfinite(step) or abs(step) > 1e-3 * (1 + abs(x0)):
            break
        x0 = x0 - step
    return x0


def _sheet_split(alpha, x0, mult):
    """Distribute a root of the norm polynomial over the two sheets above x0."""
    curve = alpha.curve
    pts = [curve.point(x0, 1), curve.point(x0, -1)]
    lead = [abs(local_expansion(alpha, pt, max(mult, 1))[0]) for pt in pts]
    scale = max(np.abs(alpha.coeff).max(), 1e-300) * max(1.0, abs(x0)) ** (2 * curve.genus)
    big = [v > 1e-5 * scale for v in lead]
    if big[0] and not big[1]:
        return [(pts[1], mult)]
    if big[1] and not big[0]:
        return [(pts[0], mult)]
    if mult % 2:
        k = 0 if lead[0] < lead[1] else 1
        return [(pts[k], mult)]
    return [(pts[0], mult // 2), (pts[1], mult // 2)]


# --- subspaces Q(D) --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SubspaceQD:
    basis_matrix: np.ndarray
    dim: int
    gap: float = float("inf")
    singular_values: np.ndarray = field(default=None, repr=False)

    def contains(self, alpha, tol: float = 1e-10) -> bool:
        c = getattr(alpha, "coeff", alpha)
        res = c - self.basis_matrix @ (self.basis_matrix.conj().T @ c)
        return np.linalg.norm(res) <= tol * max(np.linalg.norm(c), 1e-300)


def condition_matrix(curve: HyperellipticCurve, div: Divisor) -> np.ndarray:
    """Rows: Taylor coefficients 0..m-1 of the basis at each point of D, row-normalized."""
    rows = []
    for pt, m in div.entries:
        fm = frame_matrix(curve, pt, max(m - 1, 0))
        rows.append(fm[:, :m].T)
    if not rows:
        return np.zeros((0, curve.dim_c2), dtype=complex)
    c = np.vstack(rows)
    norms = np.linalg.norm(c, axis=1, keepdims=True)
    return c / np.where(norms == 0, 1.0, norms)


def q_of_d(curve: HyperellipticCurve, div: Divisor, rel_tol: float = RANK_TOL, min_gap: float = RANK_GAP) -> SubspaceQD:
    n = curve.dim_c2
    if div.degree == 0:
        return SubspaceQD(np.eye(n, dtype=complex), n, float("inf"), np.zeros(0))
    c = condition_matrix(curve, div)
    _, s, vh = np.linalg.svd(c, full_matrices=True)
    rel = np.zeros(n)
    rel[: len(s)] = s / s[0] if s[0] > 0 else 0.0
    rank = int(np.sum(rel > rel_tol))
    below = rel[rank] if rank < n else 0.0
    gap = rel[rank - 1] / max(below, rel_tol) if rank else float("inf")
    if gap < min_gap:
        raise RankAmbiguous(f"singular-value gap {gap:.3g} at rank {rank} is below {min_gap:g}")
    basis = vh[rank:].conj().T
    return SubspaceQD(basis, n - rank, float(gap), rel)


# --- covectors -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DualCovector:
    w: np.ndarray
    projective: bool = True

    def normalized(self) -> "DualCovector":
        w = np.asarray(self.w, dtype=complex)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            raise ZeroCovector("zero covector")
        w = w / nrm
        k = int(np.argmax(np.abs(w) > 1e-12))
        return DualCovector(w * (abs(w[k]) / w[k]), self.projective)


def kodaira(curve: HyperellipticCurve, pt: CurvePoint) -> DualCovector:
    """Evaluation of the canonical basis at ``pt`` in its chart; annihilates Q(1*pt)."""
    return DualCovector(frame_matrix(curve, pt, 0)[:, 0]).normalized()


def projective_distance(a, b) -> float:
    a = np.asarray(getattr(a, "w", a), dtype=complex)
    b = np.asarray(getattr(b, "w", b), dtype=complex)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    # sine of the angle between the lines, without cancellation
    return float(np.linalg.norm(a - np.vdot(b, a) * b))


def orthogonality_residual(w, sub: SubspaceQD) -> float:
    w = np.asarray(getattr(w, "w", w), dtype=complex)
    nw = np.linalg.norm(w)
    if nw == 0:
        raise ZeroCovector("zero covector")
    if sub.dim == 0:
        return 0.0
    return float(np.linalg.norm(sub.basis_matrix.T @ w) / nw)


# --- approximation and special elements ----------------------------------------------


def approximate_in_qd(d_seq, div: Divisor, alpha: QuadDiffAlg, cond_max: float = 1e10) -> list:
    """Transport alpha in Q(D) to elements of Q(D_k) with a pivot block fixed at D."""
    curve = alpha.curve
    c0 = condition_matrix(curve, div)
    deg = c0.shape[0]
    if np.linalg.norm(c0 @ alpha.coeff) > 1e-8 * max(alpha.norm(), 1e-300) * max(1, np.abs(c0).max()):
        raise ValueError("alpha does not lie in Q(D)")
    _, _, perm = qr(c0, pivoting=True)
    piv, free = np.sort(perm[:deg]), np.sort(perm[deg:])
    if np.linalg.cond(c0[:, piv]) > cond_max:
        raise PivotDegenerate("pivot block at D is singular")
    out = []
    for dk in d_seq:
        if dk.degree != deg:
            raise DegreeMismatch("D_k and D must have equal degree")
        ck = condition_matrix(curve, dk)
        block = ck[:, piv]
        if np.linalg.cond(block) > cond_max:
            raise PivotDegenerate("pivot block at D_k is singular; re-pivot")
        coeff = np.array(alpha.coeff, dtype=complex)
        coeff[piv] = np.linalg.solve(block, -ck[:, free] @ coeff[free])
        out.append(QuadDiffAlg(curve, coeff))
    return out


def alpha_special(curve: HyperellipticCurve, div: Divisor, pt: CurvePoint) -> QuadDiffAlg:
    """An element of Q(D - pt) outside Q(D); exists because the dimension drops by one."""
    entries = []
    for q, m in div.entries:
        if curve.point_distance(q, pt) < MERGE_TOL:
            m -= 1
        if m:
            entries.append((q, m))
    smaller = q_of_d(curve, Divisor.from_points(curve, entries))
    full = q_of_d(curve, div)
    if smaller.dim - full.dim != 1:
        raise HyperellipticError(f"dimension drop {smaller.dim - full.dim} is not 1")
    proj = smaller.basis_matrix - full.basis_matrix @ (full.basis_matrix.conj().T @ smaller.basis_matrix)
    u, _, _ = np.linalg.svd(proj, full_matrices=False)
    return QuadDiffAlg(curve, u[:, 0])


def extract_cofactor(coeffs, zeros, mults):
    """Divide a polynomial by prod (z - z_j)^n_j; returns (cofactor, remainder norm)."""
    div = np.array([1.0 + 0j])
    for z, n in zip(zeros, mults):
        for _ in range(n):
            div = P.polymul(div, [-z, 1.0])
    quo, rem = P.polydiv(np.asarray(coeffs, dtype=complex), div)
    return quo, float(np.linalg.norm(rem))
