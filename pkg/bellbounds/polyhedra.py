"""Polyhedra on the unit sphere with exact rational vertices.

Float generators (geodesic icosahedra, pentakis dodecahedron, octahedron)
produce candidate directions; :func:`rationalize` moves each onto a rational
point of the sphere; :func:`faces_and_eta` builds the convex hull exactly and
returns the squared shrinking factor eta_sq = min over faces of beta_f^2.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from bellbounds.errors import DomainError, InfeasibleError, ShapeError

logger = logging.getLogger(__name__)

MERGE_TOL = 1e-9
# Float slack below which orientation is decided in exact arithmetic.
FILTER_TOL = 1e-11
MAX_DENOMINATOR = 1 << 62


class RationalPoint(NamedTuple):
    x: Fraction
    y: Fraction
    z: Fraction

    def __neg__(self) -> "RationalPoint":
        return RationalPoint(-self.x, -self.y, -self.z)

    def on_sphere(self) -> bool:
        return self.x * self.x + self.y * self.y + self.z * self.z == 1

    def as_float(self) -> np.ndarray:
        return np.array([float(self.x), float(self.y), float(self.z)])


# ── Float generators ──────────────────────────────────────────────────

_T = (1.0 + math.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTICES = [
    (-1, _T, 0), (1, _T, 0), (-1, -_T, 0), (1, -_T, 0),
    (0, -1, _T), (0, 1, _T), (0, -1, -_T), (0, 1, -_T),
    (_T, 0, -1), (_T, 0, 1), (-_T, 0, -1), (-_T, 0, 1),
]

_ICOSAHEDRON_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def _normalize(points: np.ndarray) -> np.ndarray:
    return points / np.linalg.norm(points, axis=-1, keepdims=True)


def _merge(points: np.ndarray, tol: float = MERGE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Merge points closer than tol; returns (unique points, index map)."""
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(points).query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    roots = np.array([find(i) for i in range(len(points))])
    unique_roots, first = np.unique(roots, return_index=True)
    order = np.argsort(first)
    renumber = {root: k for k, root in enumerate(unique_roots[order])}
    mapping = np.array([renumber[r] for r in roots])
    return points[np.sort(first)], mapping


def icosahedron_mesh() -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    return _normalize(np.array(_ICOSAHEDRON_VERTICES, dtype=float)), list(_ICOSAHEDRON_FACES)


def _subdivide(vertices: np.ndarray, faces, k: int):
    """Split every triangle k-fold along each edge and project onto the sphere."""
    points = []
    triangles = []
    for a, b, c in faces:
        pa, pb, pc = vertices[a], vertices[b], vertices[c]
        local = {}
        for i in range(k + 1):
            for j in range(k + 1 - i):
                local[i, j] = len(points)
                points.append(pa + (i / k) * (pb - pa) + (j / k) * (pc - pa))
        for i in range(k):
            for j in range(k - i):
                triangles.append((local[i, j], local[i + 1, j], local[i, j + 1]))
                if i + j + 2 <= k:
                    triangles.append((local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]))
    merged, mapping = _merge(_normalize(np.array(points)))
    return merged, [tuple(int(mapping[v]) for v in tri) for tri in triangles]


def geodesic_icosahedron(subdivision_schedule: Sequence[int] = ()) -> np.ndarray:
    """Vertices of an icosahedron refined by each k in the schedule (k-fold edges)."""
    vertices, faces = icosahedron_mesh()
    for k in subdivision_schedule:
        if k < 1:
            raise DomainError(f"subdivision factors must be >= 1, got {k}")
        if k > 1:
            vertices, faces = _subdivide(vertices, faces, k)
    logger.debug("Geodesic icosahedron %s: %d vertices", list(subdivision_schedule), len(vertices))
    return vertices


def pentakis_dodecahedron() -> np.ndarray:
    """Icosahedron vertices plus projected face centroids: 32 vertices, 16 input pairs."""
    vertices, faces = icosahedron_mesh()
    centroids = _normalize(np.array([vertices[list(f)].mean(axis=0) for f in faces]))
    return np.vstack([vertices, centroids])


def octahedron() -> np.ndarray:
    eye = np.eye(3)
    return np.vstack([eye, -eye])


# Input count m -> float vertex generator.
NAMED_SOLIDS = {
    3: octahedron,
    6: lambda: geodesic_icosahedron([]),
    16: pentakis_dodecahedron,
    46: lambda: geodesic_icosahedron([3]),
    406: lambda: geodesic_icosahedron([3, 3]),
}


def float_representatives(points: np.ndarray, tol: float = MERGE_TOL) -> np.ndarray:
    """One direction per antipodal pair, first-seen order."""
    points = np.asarray(points, dtype=float)
    taken = np.zeros(len(points), dtype=bool)
    kept = []
    for i, p in enumerate(points):
        if taken[i]:
            continue
        kept.append(i)
        taken |= np.linalg.norm(points - p, axis=1) < tol
        taken |= np.linalg.norm(points + p, axis=1) < tol
    return points[kept]


# ── Rational points on the sphere ─────────────────────────────────────


def _from_tangents(tp: Fraction, tt: Fraction) -> RationalPoint:
    sin_phi = 2 * tp / (1 + tp * tp)
    cos_phi = (1 - tp * tp) / (1 + tp * tp)
    cos_theta = (1 - tt * tt) / (1 + tt * tt)
    sin_theta = 2 * tt / (1 + tt * tt)
    return RationalPoint(sin_phi * cos_theta, sin_phi * sin_theta, cos_phi)


def rationalize(p, tol: float = 1e-6) -> RationalPoint:
    """Closest-found rational point on the unit sphere within tol of p.

    The half-angle tangents of the polar and azimuthal angles are replaced by
    best rational approximations with a growing denominator cap; the rational
    parametrization keeps the point exactly on the sphere. Inputs are first
    reflected into the chart where both tangents lie in [-1, 1].
    """
    if tol <= 0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    x, y, z = (float(c) for c in p)
    if abs(math.sqrt(x * x + y * y + z * z) - 1.0) > 1e-9:
        raise DomainError(f"point {p!r} is not on the unit sphere")

    flip_z = z < 0
    flip_xy = x < 0 or (x == 0 and y < 0)
    if flip_z:
        z = -z
    if flip_xy:
        x, y = -x, -y

    rho = math.hypot(x, y)
    if rho == 0.0:
        q = RationalPoint(Fraction(0), Fraction(0), Fraction(1))
    else:
        t_phi = Fraction(math.tan(math.atan2(rho, z) / 2))
        t_theta = Fraction(math.tan(math.atan2(y, x) / 2))
        target = np.array([x, y, z])
        cap = 1
        while True:
            q = _from_tangents(t_phi.limit_denominator(cap), t_theta.limit_denominator(cap))
            if np.linalg.norm(q.as_float() - target) <= tol:
                break
            cap *= 2
            if cap > MAX_DENOMINATOR:
                raise DomainError(f"could not rationalize {p!r} within {tol}")

    qx, qy, qz = q
    if flip_xy:
        qx, qy = -qx, -qy
    if flip_z:
        qz = -qz
    return RationalPoint(qx, qy, qz)


def rationalize_solid(points: np.ndarray, tol: float = 1e-6) -> list[RationalPoint]:
    """Rationalize one point per antipodal pair and add the exact antipodes."""
    reps = [rationalize(p, tol) for p in float_representatives(points)]
    return reps + [-q for q in reps]


# ── Exact convex hull ─────────────────────────────────────────────────


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _primitive(v) -> tuple[int, int, int]:
    """Scale a rational vector to the coprime integer vector with the same direction."""
    lcm = 1
    for c in v:
        lcm = lcm * c.denominator // math.gcd(lcm, c.denominator)
    ints = [int(c * lcm) for c in v]
    g = math.gcd(*ints)
    return tuple(i // g for i in ints)


@dataclass
class _Plane:
    vertices: tuple[int, int, int]
    normal: tuple[int, int, int]
    level: Fraction
    unit: np.ndarray
    offset: float


def _plane(points, a, b, c, interior) -> _Plane:
    pa, pb, pc = points[a], points[b], points[c]
    normal = _primitive(_cross(_sub(pb, pa), _sub(pc, pa)))
    level = _dot(normal, pa)
    if _dot(normal, interior) > level:
        b, c = c, b
        normal = tuple(-n for n in normal)
        level = -level
    length = math.sqrt(sum(n * n for n in normal))
    unit = np.array(normal, dtype=float) / length
    return _Plane((a, b, c), normal, level, unit, float(level) / length)


def _orientation(points, a, b, c, d) -> Fraction:
    pa = points[a]
    return _dot(_cross(_sub(points[b], pa), _sub(points[c], pa)), _sub(points[d], pa))


def _exact_hull(points: list[RationalPoint]) -> list[_Plane]:
    """Incremental hull; float slack decides visibility unless it is within FILTER_TOL."""
    n = len(points)
    floats = np.array([p.as_float() for p in points])
    a, b = 0, 1
    c = next((i for i in range(2, n) if any(_cross(_sub(points[b], points[a]), _sub(points[i], points[a])))), None)
    d = None
    if c is not None:
        d = next((i for i in range(2, n) if i != c and _orientation(points, a, b, c, i) != 0), None)
    if d is None:
        raise DomainError("vertices are coplanar; the hull has no interior")

    seed = (a, b, c, d)
    interior = tuple(sum(points[i][k] for i in seed) / 4 for k in range(3))
    planes: dict[int, _Plane] = {}
    edges: dict[tuple[int, int], int] = {}
    next_id = 0

    def add(i, j, k):
        nonlocal next_id
        pl = _plane(points, i, j, k, interior)
        planes[next_id] = pl
        u, v, w = pl.vertices
        for e in ((u, v), (v, w), (w, u)):
            edges[e] = next_id
        next_id += 1

    for tri in ((a, b, c), (a, b, d), (a, c, d), (b, c, d)):
        add(*tri)

    for q in range(n):
        if q in seed:
            continue
        ids = list(planes)
        units = np.array([planes[f].unit for f in ids])
        offsets = np.array([planes[f].offset for f in ids])
        slack = units @ floats[q] - offsets
        visible = set()
        for f, s in zip(ids, slack):
            if s > FILTER_TOL:
                visible.add(f)
            elif s > -FILTER_TOL:
                pl = planes[f]
                if _dot(pl.normal, points[q]) > pl.level:
                    visible.add(f)
        if not visible:
            logger.debug("Vertex %d lies on the current hull; skipped", q)
            continue
        horizon = []
        for f in visible:
            u, v, w = planes[f].vertices
            for e in ((u, v), (v, w), (w, u)):
                if edges.get((e[1], e[0])) not in visible:
                    horizon.append(e)
        for f in visible:
            u, v, w = planes.pop(f).vertices
            for e in ((u, v), (v, w), (w, u)):
                if edges.get(e) == f:
                    del edges[e]
        for u, v in horizon:
            add(u, v, q)
    return [planes[f] for f in sorted(planes)]


# ── Polyhedra ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Face:
    normal: tuple[float, float, float]
    offset: float
    normal_int: tuple[int, int, int]
    level: Fraction
    offset_sq: Fraction
    vertices: tuple[int, ...]


@dataclass(frozen=True)
class RationalPolyhedron:
    vertices: tuple[RationalPoint, ...]
    faces: tuple[Face, ...]
    eta_sq: Fraction
    triangles: tuple[tuple[int, int, int], ...] = field(repr=False)
    triangle_faces: tuple[int, ...] = field(repr=False)

    @property
    def eta(self) -> float:
        return math.sqrt(self.eta_sq)

    @property
    def inputs(self) -> int:
        return len(self.vertices) // 2

    def representatives(self) -> list[RationalPoint]:
        return representatives(self.vertices)

    def antipode_index(self) -> np.ndarray:
        position = {p: i for i, p in enumerate(self.vertices)}
        return np.array([position[-p] for p in self.vertices])


def representatives(vertices: Sequence[RationalPoint]) -> list[RationalPoint]:
    """One vertex per antipodal pair, in first-seen order."""
    seen = set()
    reps = []
    for p in vertices:
        if p in seen:
            continue
        seen.add(p)
        seen.add(-p)
        reps.append(p)
    return reps


def _close_antipodes(vertices: Sequence[RationalPoint]) -> list[RationalPoint]:
    unique = list(dict.fromkeys(vertices))
    present = set(unique)
    missing = [-p for p in unique if -p not in present]
    if missing:
        logger.warning("Vertex set is not antipodal; added %d antipodes", len(missing))
    return unique + missing


def faces_and_eta(vertices: Sequence[RationalPoint]) -> RationalPolyhedron:
    points = [RationalPoint(*(Fraction(c) for c in p)) for p in vertices]
    for p in points:
        if not p.on_sphere():
            raise DomainError(f"vertex {p} is not exactly on the unit sphere")
    points = _close_antipodes(points)
    if len(points) < 4:
        raise DomainError("need at least 4 affinely independent vertices")

    planes = _exact_hull(points)
    grouped: dict[tuple, list[_Plane]] = {}
    for pl in planes:
        grouped.setdefault((pl.normal, pl.level), []).append(pl)

    faces = []
    triangles = []
    triangle_faces = []
    for (normal, level), members in grouped.items():
        norm_sq = sum(n * n for n in normal)
        verts = sorted({v for pl in members for v in pl.vertices})
        faces.append(Face(
            normal=tuple(float(u) for u in members[0].unit),
            offset=members[0].offset,
            normal_int=normal,
            level=level,
            offset_sq=level * level / norm_sq,
            vertices=tuple(verts),
        ))
        for pl in members:
            triangles.append(pl.vertices)
            triangle_faces.append(len(faces) - 1)

    eta_sq = min(f.offset_sq for f in faces)
    if any(f.level <= 0 for f in faces):
        raise DomainError("origin is not interior to the hull")

    floats = np.array([p.as_float() for p in points])
    float_eta_sq = float(np.min(ConvexHull(floats).equations[:, 3] ** 2))
    if abs(float(eta_sq) - float_eta_sq) > 1e-9:
        raise InfeasibleError(
            f"exact eta^2 {float(eta_sq):.12f} disagrees with float hull {float_eta_sq:.12f}"
        )
    logger.info("Hull of %d vertices: %d faces, eta^2 = %.10f", len(points), len(faces), float(eta_sq))
    return RationalPolyhedron(
        vertices=tuple(points),
        faces=tuple(faces),
        eta_sq=eta_sq,
        triangles=tuple(triangles),
        triangle_faces=tuple(triangle_faces),
    )


def hull_violations(poly: RationalPolyhedron) -> int:
    """Count (vertex, face) pairs with <a_f, r> > beta_f, checked exactly near the boundary."""
    floats = np.array([p.as_float() for p in poly.vertices])
    count = 0
    for face in poly.faces:
        slack = floats @ np.array(face.normal) - face.offset
        for i in np.nonzero(slack > -FILTER_TOL)[0]:
            if _dot(face.normal_int, poly.vertices[i]) > face.level:
                count += 1
    return count


def shrink_weights(poly: RationalPolyhedron, direction) -> np.ndarray:
    """Convex weights p over the vertices with sum_x p_x a_x = eta * direction.

    The ray along direction leaves the hull through one face at distance t >= eta;
    the exit point is a barycentric mix of a face triangle, scaled by eta / t, and
    the remaining weight is split evenly over an antipodal pair.
    """
    u = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise DomainError("direction must be a unit vector")
    normals = np.array([f.normal for f in poly.faces])
    offsets = np.array([f.offset for f in poly.faces])
    cosines = normals @ u
    with np.errstate(divide="ignore"):
        exits = np.where(cosines > 1e-15, offsets / np.where(cosines > 1e-15, cosines, 1.0), np.inf)
    face = int(np.argmin(exits))
    if not np.isfinite(exits[face]):
        raise InfeasibleError("direction lies outside every face cone")
    t = exits[face]
    hit = t * u

    floats = np.array([p.as_float() for p in poly.vertices])
    best = None
    for tri, owner in zip(poly.triangles, poly.triangle_faces):
        if owner != face:
            continue
        bary = np.linalg.solve(floats[list(tri)].T, hit)
        if best is None or bary.min() > best[1].min():
            best = (tri, bary)
    if best is None or best[1].min() < -1e-9:
        raise InfeasibleError("exit point not found in any triangle of the exit face")

    tri, bary = best
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum()
    ratio = poly.eta / t
    weights = np.zeros(len(poly.vertices))
    weights[list(tri)] += ratio * bary
    rest = 1.0 - ratio
    if rest > 0:
        weights[0] += rest / 2
        weights[poly.antipode_index()[0]] += rest / 2
    return weights


# ── Planar polygons ───────────────────────────────────────────────────


@dataclass(frozen=True)
class PlanarPolygon:
    """Rational points on the XY great circle, closed under antipodes."""

    vertices: tuple[RationalPoint, ...]
    eta_sq: Fraction

    @property
    def eta(self) -> float:
        return math.sqrt(self.eta_sq)

    def representatives(self) -> list[RationalPoint]:
        return representatives(self.vertices)


def planar_polygon(vertices: Sequence[RationalPoint]) -> PlanarPolygon:
    """Exact squared inradius of a planar polygon: min over neighbours of (1 + u.v) / 2."""
    points = [RationalPoint(*(Fraction(c) for c in p)) for p in vertices]
    for p in points:
        if p.z != 0 or not p.on_sphere():
            raise DomainError(f"polygon vertex {p} is not a rational point of the XY circle")
    points = _close_antipodes(points)
    if len(points) < 4:
        raise DomainError("a planar polygon needs at least two antipodal pairs")
    ordered = sorted(points, key=lambda p: math.atan2(float(p.y), float(p.x)))
    eta_sq = min(
        (1 + _dot(u, v)) / 2 for u, v in zip(ordered, ordered[1:] + ordered[:1])
    )
    return PlanarPolygon(tuple(points), eta_sq)


def polygon_eta_sq(vertices: Sequence[RationalPoint]) -> Fraction:
    return planar_polygon(vertices).eta_sq


# ── Vertex files ──────────────────────────────────────────────────────


def _format(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def write_polyhedron(path, vertices: Sequence[RationalPoint]):
    with open(path, "w", encoding="utf-8") as f:
        for p in vertices:
            f.write(" ".join(_format(Fraction(c)) for c in p) + "\n")
    logger.info("Wrote %d vertices to %s", len(vertices), path)


def read_polyhedron(path) -> list[RationalPoint]:
    vertices = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise ShapeError(f"{path}:{lineno}: expected 3 coordinates, got {len(tokens)}")
            try:
                vertices.append(RationalPoint(*(Fraction(t) for t in tokens)))
            except (ValueError, ZeroDivisionError) as e:
                raise ShapeError(f"{path}:{lineno}: {e}") from e
    return vertices
