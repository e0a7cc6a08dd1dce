"""Collision polygons and zone-based distance to them.

The collision polygon of a traffic vehicle is the Minkowski sum of the ego
footprint (centred at the origin) and the traffic-vehicle footprint, so the
ego centroid lies inside it exactly when the two rectangles overlap.

Distances are measured from the polygon vertex closest to the query point.
With ``q = p - O`` and ``h1``/``h2`` the signed distances to the lines of the
edges before/after ``O`` (in CCW order), the plane is split into

* ``CONE``: the normal cone at ``O``, distance ``|q|``;
* ``I``/``II``: outside at least one incident line, distance ``h1``/``h2``,
  whichever is larger;
* ``III``/``IV``: inside both lines, separated by the bisector of the
  interior angle; distance ``h2``/``h1`` (negative penetration depth).
"""

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .vehicle_model import PX, PY, STATE_DIM

DoubleArray = npt.NDArray[np.float64]

COLLINEAR_TOL = 1e-9  # [m^2] cross-product threshold for merging collinear vertices


class Zone(enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    CONE = "CONE"


@dataclass(frozen=True)
class OrientedRectangle:
    center: tuple[float, float]
    heading: float
    length: float
    width: float

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"rectangle dimensions must be positive, got {self.length}x{self.width}")

    def corners(self) -> DoubleArray:
        """Corners in CCW order, starting rear-right."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center, dtype=float)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _drop_collinear(v: list) -> list:
    """Remove vertices whose turn is below ``COLLINEAR_TOL`` (cyclic, flattest first)."""
    v = list(v)
    while len(v) > 3:
        n = len(v)
        cross = [_cross(v[i - 1], v[i], v[(i + 1) % n]) for i in range(n)]
        i = min(range(n), key=cross.__getitem__)
        if cross[i] > COLLINEAR_TOL:
            break
        del v[i]  # the neighbours' turns change, so re-evaluate
    return v


def _lex_first(v: list) -> DoubleArray:
    i = min(range(len(v)), key=lambda j: (v[j][0], v[j][1]))
    return np.array(v[i:] + v[:i], dtype=float)


def convex_hull(points: npt.ArrayLike) -> DoubleArray:
    """Andrew's monotone chain; CCW from the lexicographically smallest vertex, collinear points dropped.

    The chain pops on exact non-left turns only.  Popping on a tolerance
    can discard genuine corners when several points are almost vertically
    aligned, so near-collinear vertices are removed afterwards instead.
    """
    pts = sorted(map(tuple, np.asarray(points, dtype=float)))
    if len(pts) < 3:
        raise ValueError("need at least three points for a hull")
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise ValueError("points are collinear")
    return _lex_first(_drop_collinear(hull))


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: DoubleArray

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least three 2-D vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @functools.cached_property
    def _normals(self) -> DoubleArray:
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        nrm = np.column_stack([d[:, 1], -d[:, 0]])
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        nrm.flags.writeable = False
        return nrm

    def edge_normals(self) -> DoubleArray:
        """Outward unit normal of edge i (from vertex i to vertex i+1)."""
        return self._normals

    def is_ccw_convex(self) -> bool:
        v = self.vertices
        a, b, c = v, np.roll(v, -1, axis=0), np.roll(v, -2, axis=0)
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        return bool(np.all(cross > COLLINEAR_TOL))

    def contains(self, p: npt.ArrayLike) -> bool:
        return bool(np.all(self.half_plane_values(p) < 0))

    def half_plane_values(self, p: npt.ArrayLike) -> DoubleArray:
        """Signed distance of ``p`` to every edge line (positive outside)."""
        return np.einsum("ij,ij->i", np.asarray(p, dtype=float) - self.vertices, self.edge_normals())


def minkowski_sum(ego: OrientedRectangle, tv: OrientedRectangle) -> ConvexPolygon:
    """Collision polygon: TV footprint grown by the ego footprint about the ego centroid.

    The result is positioned around the TV centroid; aligned headings give 4
    vertices, otherwise 8.
    """
    a = (ego.corners() - np.asarray(ego.center, dtype=float)).tolist()
    b = tv.corners().tolist()

    def edge_angles(c):
        return [math.atan2(c[(i + 1) % 4][1] - c[i][1], c[(i + 1) % 4][0] - c[i][0]) % (2 * math.pi)
                for i in range(4)]

    # merge the two CCW edge sequences by direction, starting where each
    # rectangle's lowest-angle edge begins
    ang_a, ang_b = edge_angles(a), edge_angles(b)
    ia, ib = ang_a.index(min(ang_a)), ang_b.index(min(ang_b))
    verts = []
    ja = jb = 0
    while ja < 4 or jb < 4:
        pa, pb = a[(ia + ja) % 4], b[(ib + jb) % 4]
        verts.append((pa[0] + pb[0], pa[1] + pb[1]))
        if jb == 4 or (ja < 4 and ang_a[(ia + ja) % 4] <= ang_b[(ib + jb) % 4]):
            ja += 1
        else:
            jb += 1
    return ConvexPolygon(_lex_first(_drop_collinear(verts)))


@dataclass(frozen=True)
class ZoneResult:
    index: int
    closest_vertex: DoubleArray
    tau1: DoubleArray  # outward normal of the edge ending at the vertex
    tau2: DoubleArray  # outward normal of the edge starting at the vertex
    t_prev: DoubleArray  # unit direction of the edge ending at the vertex
    t_next: DoubleArray  # unit direction of the edge starting at the vertex
    distance_to_vertex: float


def _vertex_frame(poly: ConvexPolygon, i: int, p: DoubleArray) -> ZoneResult:
    v = poly.vertices
    n = poly.n
    prev_v, vert, next_v = v[(i - 1) % n], v[i], v[(i + 1) % n]
    t_prev = (vert - prev_v) / np.linalg.norm(vert - prev_v)
    t_next = (next_v - vert) / np.linalg.norm(next_v - vert)
    return ZoneResult(
        index=i,
        closest_vertex=vert.copy(),
        tau1=np.array([t_prev[1], -t_prev[0]]),
        tau2=np.array([t_next[1], -t_next[0]]),
        t_prev=t_prev,
        t_next=t_next,
        distance_to_vertex=float(np.linalg.norm(p - vert)),
    )


def closest_vertex(poly: ConvexPolygon, p: npt.ArrayLike) -> ZoneResult:
    """Vertex nearest ``p`` (lowest index on ties) with its incident edge frames."""
    p = np.asarray(p, dtype=float)
    d2 = np.sum((poly.vertices - p) ** 2, axis=1)
    return _vertex_frame(poly, int(np.argmin(d2)), p)


def anchor_vertex(poly: ConvexPolygon, p: npt.ArrayLike) -> ZoneResult:
    """Vertex frame used for distance evaluation.

    Outside the polygon this is :func:`closest_vertex`.  Inside, the nearest
    vertex is not always incident to the nearest edge, so the closer endpoint
    of the deepest supporting edge is used instead; the zone distance is then
    the exact penetration depth.
    """
    p = np.asarray(p, dtype=float)
    h = poly.half_plane_values(p)
    if np.any(h >= 0):
        return closest_vertex(poly, p)
    e = int(np.argmax(h))
    a, b = e, (e + 1) % poly.n
    da = np.sum((poly.vertices[a] - p) ** 2)
    db = np.sum((poly.vertices[b] - p) ** 2)
    if db < da or (db == da and b < a):
        a = b
    return _vertex_frame(poly, a, p)


def classify_zone(zr: ZoneResult, p: npt.ArrayLike) -> Zone:
    q = np.asarray(p, dtype=float) - zr.closest_vertex
    h1 = float(q @ zr.tau1)
    h2 = float(q @ zr.tau2)
    if h1 >= 0 or h2 >= 0:
        if q @ zr.t_prev >= 0 and q @ zr.t_next <= 0:
            return Zone.CONE
        return Zone.I if h1 >= h2 else Zone.II
    return Zone.III if h2 >= h1 else Zone.IV


def _bisector(zr: ZoneResult) -> DoubleArray:
    # Interior-angle bisector at the vertex: between -t_prev and t_next, pointing inward.
    b = zr.t_next - zr.t_prev
    nb = np.linalg.norm(b)
    if nb == 0:
        return -0.5 * (zr.tau1 + zr.tau2)
    return b / nb


def zone_distance(zr: ZoneResult, zone: Zone, p: npt.ArrayLike) -> tuple[float, DoubleArray]:
    """Distance of ``p`` for a fixed vertex frame and zone, with its gradient in ``p``."""
    q = np.asarray(p, dtype=float) - zr.closest_vertex
    if zone in (Zone.I, Zone.IV):
        return float(q @ zr.tau1), zr.tau1.copy()
    if zone in (Zone.II, Zone.III):
        return float(q @ zr.tau2), zr.tau2.copy()
    r = float(math.hypot(q[0], q[1]))
    if r == 0.0:
        return 0.0, -_bisector(zr)
    return r, q / r


def signed_distance(poly: ConvexPolygon, p: npt.ArrayLike) -> tuple[float, DoubleArray]:
    """Distance from ``p`` to ``poly`` (negative inside) and its gradient."""
    zr = anchor_vertex(poly, p)
    return zone_distance(zr, classify_zone(zr, p), p)


def _position_hessian(zr: ZoneResult, zone: Zone, p: npt.ArrayLike) -> DoubleArray:
    """Hessian of the zone distance in ``p``; nonzero only in the cone."""
    if zone is not Zone.CONE:
        return np.zeros((2, 2))
    q = np.asarray(p, dtype=float) - zr.closest_vertex
    r = math.hypot(q[0], q[1])
    if r == 0.0:
        return np.zeros((2, 2))
    qh = q / r
    return (np.eye(2) - np.outer(qh, qh)) / r


@dataclass(frozen=True)
class MdrConstraint:
    g: float
    gx: DoubleArray
    gxx: DoubleArray
    zone: Zone
    distance: float


def mdr_constraint(x: npt.ArrayLike, poly: ConvexPolygon, d_min: float) -> MdrConstraint:
    """Constraint ``d_min - d(p, poly) < 0`` in the full state."""
    x = np.asarray(x, dtype=float)
    p = x[[PX, PY]]
    zr = anchor_vertex(poly, p)
    zone = classify_zone(zr, p)
    d, grad = zone_distance(zr, zone, p)
    gx = np.zeros(STATE_DIM)
    gx[[PX, PY]] = -grad
    gxx = np.zeros((STATE_DIM, STATE_DIM))
    gxx[np.ix_([PX, PY], [PX, PY])] = -_position_hessian(zr, zone, p)
    return MdrConstraint(g=d_min - d, gx=gx, gxx=gxx, zone=zone, distance=d)


def rectangles_overlap(a: OrientedRectangle, b: OrientedRectangle) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts as no overlap)."""
    ca, cb = a.corners(), b.corners()
    for rect in (a, b):
        c, s = math.cos(rect.heading), math.sin(rect.heading)
        for axis in (np.array([c, s]), np.array([-s, c])):
            pa, pb = ca @ axis, cb @ axis
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True
