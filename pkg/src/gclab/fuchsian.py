"""Bolza surface as a quotient of the Poincare disk.

The regular hyperbolic octagon with interior angles pi/4 is glued by four
hyperbolic translations pairing opposite sides. The module builds the
triangulated fundamental domain, records the automorphic identifications
of boundary vertices, and assembles the P1 operators used downstream.

Weight convention: a field q has weight (a, b) when
q(g z) = g'(z)**a * conj(g'(z))**b * q(z) for every deck transformation g.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

GENUS = 2
SUPPORTED_DBAR_WEIGHTS = ((0, 0), (-1, 0), (-2, 0), (1, 0))


class FuchsianError(Exception):
    pass


class ConstructionFailed(FuchsianError):
    pass


class IdentificationMismatch(FuchsianError):
    pass


class OutsideDisk(FuchsianError, ValueError):
    pass


class DegenerateTriangle(FuchsianError):
    pass


class UnsupportedWeight(FuchsianError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Disk geometry


def poincare_factor(z):
    """Conformal factor e^{2u_X} = 4 / (1 - |z|^2)^2 of the Poincare metric."""
    z = np.asarray(z)
    r2 = np.abs(z) ** 2
    if np.any(r2 >= 1.0):
        raise OutsideDisk("point outside the open unit disk")
    out = 4.0 / (1.0 - r2) ** 2
    return out if out.ndim else float(out)


def hyperbolic_distance(z, w):
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    num = np.abs(z - w)
    den = np.abs(1.0 - np.conj(w) * z)
    return 2.0 * np.arctanh(np.clip(num / den, 0.0, 1.0 - 1e-16))


def _to_origin(a, z):
    # disk automorphism sending a to 0
    return (z - a) / (1.0 - np.conj(a) * z)


def _from_origin(a, z):
    return (z + a) / (1.0 + np.conj(a) * z)


def geodesic_midpoint(a: complex, b: complex) -> complex:
    b0 = _to_origin(a, b)
    r = abs(b0)
    if r == 0.0:
        return complex(a)
    m0 = b0 / r * np.tanh(np.arctanh(r) / 2.0)
    return complex(_from_origin(a, m0))


def geodesic_triangle_area(z1, z2, z3):
    """Hyperbolic area (angle defect) of geodesic triangles, vectorized."""
    z = [np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex), np.asarray(z3, dtype=complex)]
    total = np.zeros(np.broadcast(*z).shape)
    for i in range(3):
        a, b, c = z[i], z[(i + 1) % 3], z[(i + 2) % 3]
        # geodesics through the origin are straight after moving the vertex there
        tb = _to_origin(a, b)
        tc = _to_origin(a, c)
        total += np.abs(np.angle(tc / tb))
    return np.pi - total


@dataclass(frozen=True)
class MobiusTransform:
    """Disk automorphism in SU(1,1) form [[a, b], [conj(b), conj(a)]]."""

    matrix: np.ndarray

    @classmethod
    def from_ab(cls, a: complex, b: complex) -> "MobiusTransform":
        m = np.array([[a, b], [np.conj(b), np.conj(a)]], dtype=complex)
        return cls(m / np.sqrt(np.linalg.det(m)))

    def __call__(self, z):
        m = self.matrix
        return (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])

    def derivative(self, z):
        m = self.matrix
        return 1.0 / (m[1, 0] * z + m[1, 1]) ** 2

    def __matmul__(self, other: "MobiusTransform") -> "MobiusTransform":
        return MobiusTransform(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusTransform":
        return MobiusTransform(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class FuchsianGroup:
    generators: tuple  # g_0..g_{2g-1}, g_k pairs side k+4 onto side k
    pairing_table: tuple  # (source side, target side) per generator
    corners: np.ndarray  # polygon vertices, corner k at angle -pi/8 + k pi/4
    relator_residual: float
    angle_sum: float

    @property
    def genus(self) -> int:
        return len(self.generators) // 2

    def side_endpoints(self, k: int) -> tuple:
        return self.corners[k % 8], self.corners[(k + 1) % 8]

    def hyperbolic_area(self) -> float:
        # fan of eight geodesic triangles from the center
        c = self.corners
        return float(np.sum(geodesic_triangle_area(np.zeros(8), c, np.roll(c, -1))))

    @cached_property
    def neighbourhood(self) -> tuple:
        """Identity, generators, inverses and their pairwise products."""
        base = [MobiusTransform(np.eye(2, dtype=complex))]
        gens = list(self.generators) + [g.inverse() for g in self.generators]
        base += gens
        base += [a @ b for a in gens for b in gens]
        return tuple(base) + self._corner_tiles(gens)

    def _corner_tiles(self, gens) -> tuple:
        # tiles meeting the domain only at a corner need words of length up to 4
        corners = self.corners

        def key(g):
            return tuple(np.round(g(np.array([0j])), 9))

        def touches(g):
            img = g(corners)
            return np.min(np.abs(img[:, None] - corners[None, :])) < 1e-9

        ident = MobiusTransform(np.eye(2, dtype=complex))
        seen, frontier, out = {key(ident)}, [ident], []
        while frontier:
            nxt = []
            for g in frontier:
                for s in gens:
                    h = g @ s
                    k = key(h)
                    if k in seen or not touches(h):
                        continue
                    seen.add(k)
                    nxt.append(h)
                    out.append(h)
            frontier = nxt
        return tuple(out)


def _relator(gens) -> MobiusTransform:
    g0, g1, g2, g3 = gens
    word = [g0, g1.inverse(), g2, g3.inverse(), g0.inverse(), g1, g2.inverse(), g3]
    out = MobiusTransform(np.eye(2, dtype=complex))
    for w in word:
        out = out @ w
    return out


def bolza_group(tol: float = 1e-10) -> FuchsianGroup:
    """Side pairings of the regular octagon with angles pi/4."""
    n = 8
    half = np.pi / n
    # regular n-gon with interior angle 2*pi/n
    cosh_in = np.cos(half) / np.sin(half)
    cosh_circ = (np.cos(half) / np.sin(half)) ** 2
    r_vertex = np.tanh(np.arccosh(cosh_circ) / 2.0)
    corners = r_vertex * np.exp(1j * (-half + np.arange(n) * 2 * half))

    ch, sh = cosh_in, np.sqrt(cosh_in**2 - 1.0)
    translation = MobiusTransform(np.array([[ch, sh], [sh, ch]], dtype=complex))
    gens = []
    for k in range(4):
        rot = np.exp(1j * k * np.pi / 8)
        r = MobiusTransform(np.array([[rot, 0], [0, np.conj(rot)]], dtype=complex))
        gens.append(r @ translation @ r.inverse())

    rel = _relator(gens).matrix
    residual = float(min(np.abs(rel - np.eye(2)).max(), np.abs(rel + np.eye(2)).max()))

    angles = []
    for k in range(n):
        a, b, c = corners[k], corners[(k - 1) % n], corners[(k + 1) % n]
        angles.append(abs(np.angle(_to_origin(a, c) / _to_origin(a, b))))
    angle_sum = float(np.sum(angles))

    group = FuchsianGroup(
        generators=tuple(gens),
        pairing_table=tuple((k + 4, k) for k in range(4)),
        corners=corners,
        relator_residual=residual,
        angle_sum=angle_sum,
    )
    if residual > tol or abs(angle_sum - 2 * np.pi) > tol:
        raise ConstructionFailed(f"relator residual {residual:.3e}, angle sum {angle_sum:.15f}")
    for k, g in enumerate(gens):
        s0, s1 = group.side_endpoints(k + 4)
        images = sorted(np.round([g(s0), g(s1)], 12), key=lambda z: (z.real, z.imag))
        targets = sorted(np.round(list(group.side_endpoints(k)), 12), key=lambda z: (z.real, z.imag))
        if np.abs(np.array(images) - np.array(targets)).max() > 1e-9:
            raise ConstructionFailed(f"generator {k} does not pair sides {k + 4} and {k}")
    return group


# ---------------------------------------------------------------------------
# Mesh


@dataclass(eq=False)
class SurfaceMesh:
    group: FuchsianGroup
    vertices: np.ndarray
    triangles: np.ndarray
    dof_of_vertex: np.ndarray
    rep_vertex: np.ndarray
    vertex_transform: np.ndarray  # index into transforms, -1 for representatives
    transforms: list
    refinement_level: int
    side_of_vertex: list = field(repr=False, default_factory=list)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_dofs(self) -> int:
        return len(self.rep_vertex)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def edge_identifications(self) -> list:
        return [
            (int(v), int(self.rep_vertex[self.dof_of_vertex[v]]), int(self.vertex_transform[v]))
            for v in range(self.n_vertices)
            if self.vertex_transform[v] >= 0
        ]

    @cached_property
    def gamma_prime(self) -> np.ndarray:
        """Derivative of the identifying transform at each vertex (1 for representatives)."""
        out = np.ones(self.n_vertices, dtype=complex)
        for v, _, k in self.edge_identifications:
            out[v] = self.transforms[k].derivative(self.vertices[v])
        return out

    @cached_property
    def dof_points(self) -> np.ndarray:
        return self.vertices[self.rep_vertex]

    @cached_property
    def euclid_areas(self) -> np.ndarray:
        z = self.vertices[self.triangles]
        d1 = z[:, 1] - z[:, 0]
        d2 = z[:, 2] - z[:, 0]
        return 0.5 * (d1.real * d2.imag - d1.imag * d2.real)

    @cached_property
    def hyperbolic_areas(self) -> np.ndarray:
        z = self.vertices[self.triangles]
        return geodesic_triangle_area(z[:, 0], z[:, 1], z[:, 2])

    @cached_property
    def triangle_conformal(self) -> np.ndarray:
        """Per-triangle conformal factor: hyperbolic over Euclidean area."""
        return self.hyperbolic_areas / self.euclid_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.hyperbolic_areas / 3.0, 3))
        return w

    @cached_property
    def dof_areas(self) -> np.ndarray:
        """Lumped hyperbolic area per degree of freedom; sums to 4*pi(g-1)."""
        return np.bincount(self.dof_of_vertex, weights=self.vertex_areas, minlength=self.n_dofs)

    @cached_property
    def tri_dofs(self) -> np.ndarray:
        return self.dof_of_vertex[self.triangles]

    @cached_property
    def mesh_size(self) -> float:
        """Largest hyperbolic edge length."""
        z = self.vertices[self.triangles]
        lengths = [hyperbolic_distance(z[:, i], z[:, (i + 1) % 3]) for i in range(3)]
        return float(np.max(lengths))

    @property
    def total_area(self) -> float:
        return float(self.hyperbolic_areas.sum())

    def folding(self, weight=(0, 0)) -> sp.csr_matrix:
        """Prolongation from dof values to vertex values of a weight-(a, b) field."""
        a, b = weight
        gp = self.gamma_prime
        factor = 1.0 / (gp**a * np.conj(gp) ** b)
        if a == 0 and b == 0:
            factor = factor.real
        return sp.csr_matrix(
            (factor, (np.arange(self.n_vertices), self.dof_of_vertex)),
            shape=(self.n_vertices, self.n_dofs),
        )

    def unfold(self, values, weight=(0, 0)) -> np.ndarray:
        return self.folding(weight) @ np.asarray(values)

    def euler_characteristic(self) -> int:
        tri = self.tri_dofs
        edges = set()
        for i in range(3):
            a, b = tri[:, i], tri[:, (i + 1) % 3]
            # identified boundary edges collapse; key edges by their (dof, dof) pair and
            # by the midpoint class so that the two spokes into the corner class stay distinct
            for e in zip(np.minimum(a, b), np.maximum(a, b), self._edge_class(self.triangles[:, i], self.triangles[:, (i + 1) % 3])):
                edges.add(e)
        return self.n_dofs - len(edges) + self.n_triangles

    def _edge_class(self, va, vb):
        # boundary edges on paired sides share a class; interior edges are their own class
        out = []
        for a, b in zip(va, vb):
            mid = 0.5 * (self.vertices[a] + self.vertices[b])
            sa, sb = self.side_of_vertex[a], self.side_of_vertex[b]
            common = sa & sb
            if common:
                side = min(common)
                if side >= 4:
                    g = self.group.generators[side - 4]
                    mid = 0.5 * (g(self.vertices[a]) + g(self.vertices[b]))
                out.append(("b", round(mid.real, 9), round(mid.imag, 9)))
            else:
                out.append(("i", min(a, b), max(a, b)))
        return out

    def nearest_dof(self, z: complex) -> int:
        d = hyperbolic_distance(self.vertices, z)
        return int(self.dof_of_vertex[int(np.argmin(d))])

    def surface_distance(self, z: complex, points=None) -> np.ndarray:
        """Distance on the surface from z to each vertex, via nearby deck translates."""
        pts = self.vertices if points is None else np.asarray(points)
        best = np.full(pts.shape, np.inf)
        for g in self.group.neighbourhood:
            best = np.minimum(best, hyperbolic_distance(g(pts), z))
        return best

    @cached_property
    def dof_neighbours(self) -> list:
        nb = [set() for _ in range(self.n_dofs)]
        for tri in self.tri_dofs:
            for i in range(3):
                for j in range(3):
                    if i != j:
                        nb[tri[i]].add(int(tri[j]))
        return [sorted(s) for s in nb]

    @cached_property
    def vertex_neighbours(self) -> list:
        nb = [set() for _ in range(self.n_vertices)]
        for tri in self.triangles:
            for i in range(3):
                for j in range(3):
                    if i != j:
                        nb[tri[i]].add(int(tri[j]))
        return [sorted(s) for s in nb]


# norm constants in |f|^2 e^{2(a+b)u_X} * c: sections carry the 1/2, quadratic differentials the 4
NORM_CONSTANT = {(1, 0): 0.5, (-2, 0): 4.0}


def pointwise_norm2(values, conformal, weight):
    """Squared pointwise norm of a weight-(a, b) field given e^{2u_X} at the samples."""
    a, b = weight
    return NORM_CONSTANT.get(tuple(weight), 1.0) * np.abs(values) ** 2 * conformal ** (a + b)


@dataclass(frozen=True, eq=False)
class AutomorphicField:
    """Field data on a mesh: one value per dof, or per triangle for dbar images."""

    mesh: "SurfaceMesh"
    values: np.ndarray
    weight: tuple

    @property
    def on_triangles(self) -> bool:
        return len(self.values) == self.mesh.n_triangles and self.mesh.n_triangles != self.mesh.n_dofs

    def norm2_density(self) -> np.ndarray:
        if self.on_triangles:
            return pointwise_norm2(self.values, self.mesh.triangle_conformal, self.weight)
        return pointwise_norm2(self.values, poincare_factor(self.mesh.dof_points), self.weight)

    def l2_norm(self) -> float:
        return float(np.sqrt(integrate(self.mesh, self.norm2_density(), rule="geodesic")))


def build_mesh(group: FuchsianGroup, refinement: int = 3, tol: float = 1e-9) -> SurfaceMesh:
    """Fan triangulation of the octagon refined by geodesic quadrisection."""
    if not 0 <= refinement <= 8:
        raise ValueError("refinement must be in 0..8")
    corners = group.corners
    verts = [0j] + [complex(c) for c in corners]
    # sides containing each vertex; corner k lies on sides k-1 and k
    sides = [frozenset()] + [frozenset({(k - 1) % 8, k}) for k in range(8)]
    tris = [(0, 1 + k, 1 + (k + 1) % 8) for k in range(8)]

    for _ in range(refinement):
        midpoint = {}
        new_tris = []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                midpoint[key] = len(verts)
                verts.append(geodesic_midpoint(verts[a], verts[b]))
                sides.append(sides[a] & sides[b])
            return midpoint[key]

        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        tris = new_tris

    vertices = np.array(verts, dtype=complex)
    triangles = np.array(tris, dtype=np.int64)
    z = vertices[triangles]
    d1, d2 = z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]
    area = 0.5 * (d1.real * d2.imag - d1.imag * d2.real)
    if np.any(area <= 0):
        raise DegenerateTriangle("non-positive triangle area after refinement")

    n_v = len(vertices)
    transforms = [g for g in group.generators]
    vertex_transform = np.full(n_v, -1, dtype=np.int64)
    rep_of = np.arange(n_v)

    # corner class: every corner maps to corner 0 through a chain of pairings
    corner_ids = list(range(1, 9))
    corner_map = {1: MobiusTransform(np.eye(2, dtype=complex))}
    pairings = []
    for k, g in enumerate(group.generators):
        pairings.append(g)
        pairings.append(g.inverse())
    frontier = [1]
    while frontier:
        v = frontier.pop()
        for g in pairings:
            w = g(vertices[v])
            hit = [c for c in corner_ids if abs(vertices[c] - w) < tol]
            if hit and hit[0] not in corner_map:
                # g maps v -> c, corner_map[v] maps v -> corner 0; compose for c
                corner_map[hit[0]] = corner_map[v] @ g.inverse()
                frontier.append(hit[0])
    if len(corner_map) != 8:
        raise IdentificationMismatch("octagon corners do not form a single vertex class")
    for c in corner_ids[1:]:
        transforms.append(corner_map[c])
        vertex_transform[c] = len(transforms) - 1
        rep_of[c] = 1

    # boundary vertices on sides 4..7 are images of vertices on sides 0..3
    on_side = {k: [v for v in range(n_v) if k in sides[v] and v not in corner_ids] for k in range(8)}
    for k in range(4):
        g = group.generators[k]
        targets = np.array(on_side[k], dtype=np.int64)
        for v in on_side[k + 4]:
            img = g(vertices[v])
            dist = np.abs(vertices[targets] - img)
            j = int(np.argmin(dist))
            if dist[j] > tol:
                raise IdentificationMismatch(f"vertex {v} on side {k + 4}: mismatch {dist[j]:.3e}")
            rep_of[v] = targets[j]
            vertex_transform[v] = k

    reps = np.unique(rep_of)
    dof_index = {int(r): i for i, r in enumerate(reps)}
    dof_of_vertex = np.array([dof_index[int(r)] for r in rep_of], dtype=np.int64)

    mesh = SurfaceMesh(
        group=group,
        vertices=vertices,
        triangles=triangles,
        dof_of_vertex=dof_of_vertex,
        rep_vertex=reps.astype(np.int64),
        vertex_transform=vertex_transform,
        transforms=transforms,
        refinement_level=refinement,
        side_of_vertex=sides,
    )
    logger.debug("mesh r=%d: %d vertices, %d dofs, %d triangles", refinement, n_v, mesh.n_dofs, len(triangles))
    return mesh


# ---------------------------------------------------------------------------
# Operators


def _p1_gradients(mesh: SurfaceMesh) -> np.ndarray:
    """Complex gradients (d/dx + i d/dy) of the three P1 basis functions per triangle."""
    z = mesh.vertices[mesh.triangles]
    area = mesh.euclid_areas
    if np.any(area <= 0):
        raise DegenerateTriangle("triangle with non-positive area")
    grads = np.empty_like(z)
    for i in range(3):
        opposite = z[:, (i + 2) % 3] - z[:, (i + 1) % 3]
        grads[:, i] = 1j * opposite / (2.0 * area)
    return grads


def stiffness(mesh: SurfaceMesh) -> sp.csr_matrix:
    """P1 Dirichlet form with Euclidean disk gradients, folded onto dofs.

    Conformal invariance of the Dirichlet energy in two dimensions makes the
    Euclidean form equal to the hyperbolic one.
    """
    g = _p1_gradients(mesh)
    area = mesh.euclid_areas
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(mesh.tri_dofs[:, i])
            cols.append(mesh.tri_dofs[:, j])
            vals.append(area * (g[:, i] * np.conj(g[:, j])).real)
    n = mesh.n_dofs
    k = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return ((k + k.T) * 0.5).tocsr()


def mass(mesh: SurfaceMesh, lumped: bool = False) -> sp.csr_matrix:
    """Mass matrix for the density e^{2u_X}.

    The consistent form uses the 3-point edge-midpoint rule per triangle; the
    lumped form is diagonal with one third of each geodesic triangle area per
    vertex, so its total is exactly the hyperbolic area of the surface.
    """
    n = mesh.n_dofs
    if lumped:
        return sp.diags(mesh.dof_areas).tocsr()
    z = mesh.vertices[mesh.triangles]
    area = mesh.euclid_areas
    rows, cols, vals = [], [], []
    # barycentric coordinates of the edge midpoints
    for q in range(3):
        bary = np.full(3, 0.5)
        bary[q] = 0.0
        zq = (bary[None, :] * z).sum(axis=1)
        w = area / 3.0 * poincare_factor(zq)
        for i in range(3):
            for j in range(3):
                if bary[i] and bary[j]:
                    rows.append(mesh.tri_dofs[:, i])
                    cols.append(mesh.tri_dofs[:, j])
                    vals.append(w * bary[i] * bary[j])
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return ((m + m.T) * 0.5).tocsr()


def dbar(mesh: SurfaceMesh, weight=(0, 0)) -> sp.csr_matrix:
    """d/dz-bar of the P1 interpolant, one value per triangle.

    Maps dof values of a weight-(a, b) field to per-triangle values of the
    weight-(a, b - 1) form; boundary values are unfolded with automorphy
    factors evaluated at the identified vertex.
    """
    weight = tuple(weight)
    if weight not in SUPPORTED_DBAR_WEIGHTS:
        raise UnsupportedWeight(f"weight {weight} not supported")
    g = _p1_gradients(mesh)
    dzbar = 0.5 * g  # d/dzbar = (d/dx + i d/dy) / 2
    n_t = mesh.n_triangles
    d_vert = sp.csr_matrix(
        (dzbar.ravel(), (np.repeat(np.arange(n_t), 3), mesh.triangles.ravel())),
        shape=(n_t, mesh.n_vertices),
    )
    return (d_vert @ mesh.folding(weight)).tocsr()


def centroid_values(mesh: SurfaceMesh, values, weight=(0, 0)) -> np.ndarray:
    """Value of the P1 interpolant at each triangle centroid."""
    vert = mesh.unfold(values, weight)
    return vert[mesh.triangles].mean(axis=1)


def integrate(mesh: SurfaceMesh, density, rule: str = "vertex"):
    """Integral over the surface against the hyperbolic area form.

    ``density`` is sampled per dof (length n_dofs) or per triangle (length
    n_triangles). For dof data the ``vertex`` rule is the Euclidean-area
    quadrature sum_T area(T) * mean(density * e^{2u_X}) and the ``geodesic``
    rule uses the lumped geodesic areas. Triangle data is constant per
    triangle, and area(T) times the exact mean of e^{2u_X} over T is the
    geodesic area, so both rules agree there.
    """
    density = np.asarray(density)
    if density.shape[0] == mesh.n_triangles and mesh.n_triangles != mesh.n_dofs:
        return np.sum(mesh.hyperbolic_areas * density)
    if density.shape[0] != mesh.n_dofs:
        raise ValueError("density must be sampled per dof or per triangle")
    if rule == "vertex":
        dens = density[mesh.dof_of_vertex] * poincare_factor(mesh.vertices)
        return np.sum(mesh.euclid_areas * dens[mesh.triangles].mean(axis=1))
    return np.sum(mesh.dof_areas * density)
