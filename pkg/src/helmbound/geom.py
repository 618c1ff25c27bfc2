"""Polygonal domains, star-shapedness predicates and triangular meshes.

The computational domain is  Omega = outer \\ closure(obstacle)  with the
truncation boundary Gamma_I (outer polygon) and the Dirichlet boundary Gamma_D
(obstacle polygon).  Optional interface polygons (coefficient discontinuities)
are respected by the mesh so that every triangle lies in a single material.

Polygons are ``(N, 2)`` float arrays of vertices in counter-clockwise order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay

GAMMA_D = "GammaD"
GAMMA_I = "GammaI"
STAR_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid polygon or domain description."""


class MeshError(RuntimeError):
    """The mesher could not produce a valid triangulation."""


# ---------------------------------------------------------------------------
# polygon helpers


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def validate_polygon(poly, name: str = "polygon") -> np.ndarray:
    """Return the polygon as a CCW float array; raise on degenerate input."""
    p = np.asarray(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise GeometryError(f"{name}: need an (N>=3, 2) vertex array")
    if not np.all(np.isfinite(p)):
        raise GeometryError(f"{name}: non-finite vertex")
    lengths = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    if np.any(lengths <= 1e-14 * max(1.0, float(np.abs(p).max()))):
        raise GeometryError(f"{name}: repeated vertex / zero-length edge")
    if not shapely.LinearRing(p).is_simple:
        raise GeometryError(f"{name}: polygon is not simple")
    area = signed_area(p)
    if area == 0:
        raise GeometryError(f"{name}: zero area")
    return p if area > 0 else p[::-1].copy()


def edge_normals(poly: np.ndarray) -> tuple:
    """Outward unit normals and lengths of the edges ``v_i -> v_{i+1}`` of a CCW polygon."""
    d = np.roll(poly, -1, axis=0) - poly
    L = np.linalg.norm(d, axis=1)
    nu = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]
    return nu, L


def regular_polygon(n_vertices: int = 256, radius: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    """Inscribed regular polygon approximating a circle."""
    t = 2 * np.pi * np.arange(n_vertices) / n_vertices
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


def square(half_width: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    s = float(half_width)
    c = np.asarray(center, dtype=float)
    return np.array([[-s, -s], [s, -s], [s, s], [-s, s]]) + c


def star_shaped_wrt_point(polygon, x0=(0.0, 0.0), tol: float = STAR_TOL) -> tuple:
    """Star-shapedness w.r.t. ``x0`` via the sign of (x - x0).nu on every edge.

    The quantity is constant along each edge, so the vertex values suffice.
    Returns ``(holds, min over edges)``.
    """
    p = validate_polygon(polygon)
    nu, _ = edge_normals(p)
    m = float(np.min(np.sum((p - np.asarray(x0, dtype=float)) * nu, axis=1)))
    return bool(m >= -tol), m


def star_shaped_wrt_ball(polygon, x0=(0.0, 0.0), tol: float = STAR_TOL) -> tuple:
    """Star-shapedness w.r.t. the ball B(x0, a L), L = max boundary distance to x0.

    Returns ``(holds, a)`` with the largest admissible ``a``; ``(False, 0)``
    when the polygon is not star-shaped with respect to any ball around x0.
    """
    p = validate_polygon(polygon)
    _, m = star_shaped_wrt_point(p, x0, tol)
    if m <= tol:
        return False, 0.0
    L = float(np.max(np.linalg.norm(p - np.asarray(x0, dtype=float), axis=1)))
    return True, m / L


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Truncated domain: outer polygon minus an optional obstacle polygon.

    ``interfaces`` lists extra closed polygons (coefficient jumps) that the
    mesh must conform to; they must not cross the other boundaries.
    """

    outer: np.ndarray
    obstacle: np.ndarray | None = None
    interfaces: tuple = ()
    dimension: int = 2

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise GeometryError("dimension must be 2 or 3")
        outer = validate_polygon(self.outer, "outer")
        object.__setattr__(self, "outer", outer)
        P = shapely.Polygon(outer)
        if self.obstacle is not None:
            obs = validate_polygon(self.obstacle, "obstacle")
            object.__setattr__(self, "obstacle", obs)
            O = shapely.Polygon(obs)
            if not P.contains(O) or O.distance(P.exterior) <= 0:
                raise GeometryError("obstacle closure must lie strictly inside the outer polygon")
        ifaces = tuple(validate_polygon(q, "interface") for q in self.interfaces)
        object.__setattr__(self, "interfaces", ifaces)
        for q in ifaces:
            Q = shapely.Polygon(q)
            if not P.contains(Q) or Q.exterior.distance(P.exterior) <= 0:
                raise GeometryError("interfaces must lie strictly inside the outer polygon")
            if self.obstacle is not None and Q.exterior.intersects(shapely.Polygon(self.obstacle).exterior):
                raise GeometryError("interface crosses the obstacle boundary")

    @property
    def origin_inside(self) -> bool:
        """Whether the origin lies in the outer polygon (and in the obstacle, if any)."""
        o = shapely.Point(0.0, 0.0)
        inside_outer = shapely.Polygon(self.outer).contains(o)
        if self.obstacle is None:
            return bool(inside_outer)
        return bool(shapely.Polygon(self.obstacle).contains(o))

    def region(self):
        holes = [self.obstacle] if self.obstacle is not None else None
        return shapely.Polygon(self.outer, holes)

    def area(self) -> float:
        a = signed_area(self.outer)
        if self.obstacle is not None:
            a -= signed_area(self.obstacle)
        return a

    def diameter(self) -> float:
        v = self.outer
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Closed-set membership test for points ``(..., 2)``."""
        flat = np.asarray(x, dtype=float).reshape(-1, 2)
        ins = shapely.intersects_xy(self.region(), flat[:, 0], flat[:, 1])
        return ins.reshape(np.shape(x)[:-1])


@dataclass(frozen=True)
class GeometricParams:
    L_D: float
    L_I: float
    a_D: float
    a_I: float
    obstacle_star_shaped: bool = True
    outer_star_shaped: bool = True


def geometric_params(domain: DomainSpec) -> GeometricParams:
    """Radii and star-shape fractions (w.r.t. balls at the origin) of both boundaries."""
    L_I = float(np.max(np.linalg.norm(domain.outer, axis=1)))
    ok_I, a_I = star_shaped_wrt_ball(domain.outer)
    if domain.obstacle is None:
        return GeometricParams(0.0, L_I, 0.0, a_I, True, ok_I)
    L_D = float(np.max(np.linalg.norm(domain.obstacle, axis=1)))
    ok_D, _ = star_shaped_wrt_point(domain.obstacle)
    _, a_D = star_shaped_wrt_ball(domain.obstacle)
    return GeometricParams(L_D, L_I, a_D, a_I, ok_D, ok_I)


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 triangulation with tagged boundary edges."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple = field(default_factory=tuple)

    @property
    def h_max(self) -> float:
        e = self.edges()
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def tagged(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return self.boundary_edges[mask] if len(mask) else np.zeros((0, 2), dtype=int)

    def boundary_nodes(self, tag: str) -> np.ndarray:
        return np.unique(self.tagged(tag).ravel())


def _discretize_ring(poly: np.ndarray, h: float) -> np.ndarray:
    pts = []
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        m = max(1, int(math.ceil(np.linalg.norm(b - a) / h - 1e-9)))
        t = np.arange(m) / m
        pts.append(a + np.outer(t, b - a))
    return np.concatenate(pts)


def _lattice(bounds, h: float) -> np.ndarray:
    xmin, ymin, xmax, ymax = bounds
    dy = h * math.sqrt(3) / 2
    rows = []
    ny = int(math.floor((ymax - ymin) / dy))
    for j in range(1, ny + 1):
        y = ymin + j * dy
        off = 0.5 * h if j % 2 else 0.0
        xs = np.arange(xmin + off + h, xmax, h)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    return np.concatenate(rows) if rows else np.zeros((0, 2))


def _rings(domain: DomainSpec) -> list:
    rings = [(domain.outer, GAMMA_I)]
    if domain.obstacle is not None:
        rings.append((domain.obstacle, GAMMA_D))
    rings.extend((q, "interface") for q in domain.interfaces)
    return rings


def _check_gaps(rings: list, h: float) -> None:
    geoms = [shapely.LinearRing(r) for r, _ in rings]
    for i in range(len(geoms)):
        for j in range(i + 1, len(geoms)):
            gap = geoms[i].distance(geoms[j])
            if gap < 0.5 * h:
                raise MeshError(f"h = {h:g} is too coarse to resolve a boundary gap of {gap:g} "
                                f"(need h <= {2 * gap:g})")


def _triangulate(points: np.ndarray, domain_region) -> np.ndarray:
    tri = Delaunay(points)
    t = tri.simplices
    c = points[t].mean(axis=1)
    keep = shapely.contains_xy(domain_region, c[:, 0], c[:, 1])
    t = t[keep]
    p = points[t]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    t = np.where((area < 0)[:, None], t[:, [0, 2, 1]], t)
    return t[np.abs(area) > 0]


def _edge_set(t: np.ndarray) -> set:
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    return set(map(tuple, e.tolist()))


def build_mesh(domain: DomainSpec, h_target: float, max_passes: int = 60) -> Mesh:
    """Conforming Delaunay triangulation of the domain with edge lengths about ``h_target``.

    Boundary and interface polygons are split into segments of length <= h,
    the interior is filled with a triangular lattice kept away from the
    segments, and the Delaunay triangulation is repaired by splitting every
    constraint segment that is missing (or encroached) and every edge longer
    than 1.4 h.  All steps are deterministic.
    """
    if domain.dimension != 2:
        raise MeshError("mesh generation is implemented for d = 2 only")
    h = float(h_target)
    if not (h > 0 and math.isfinite(h)):
        raise MeshError(f"h_target must be positive, got {h_target}")
    rings = _rings(domain)
    _check_gaps(rings, h)
    scale = max(1.0, float(np.abs(domain.outer).max()))

    # constraint segments, stored per ring as ordered vertex lists
    ring_pts = [_discretize_ring(r, h) for r, _ in rings]
    boundary = shapely.MultiLineString([np.vstack([r, r[:1]]) for r, _ in rings])
    region = domain.region()
    lat = _lattice(region.bounds, h)
    if len(lat):
        inside = shapely.contains_xy(region, lat[:, 0], lat[:, 1])
        lat = lat[inside]
        dist = shapely.distance(shapely.points(lat), boundary)
        lat = lat[dist >= 0.55 * h]

    for _ in range(max_passes):
        bpts = np.concatenate(ring_pts)
        points = np.concatenate([bpts, lat])
        offsets = np.cumsum([0] + [len(r) for r in ring_pts])
        segs = []
        for k, r in enumerate(ring_pts):
            idx = np.arange(len(r)) + offsets[k]
            segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        segs_all = np.concatenate(segs)
        t = _triangulate(points, region)
        edges = _edge_set(t)
        missing = [tuple(sorted(s)) not in edges for s in segs_all.tolist()]
        changed = False
        if any(missing):
            changed = True
            miss = np.array(missing)
            start = 0
            for k, r in enumerate(ring_pts):
                m = miss[start:start + len(r)]
                start += len(r)
                if m.any():
                    new = []
                    for i in range(len(r)):
                        new.append(r[i])
                        if m[i]:
                            new.append(0.5 * (r[i] + r[(i + 1) % len(r)]))
                    ring_pts[k] = np.array(new)
        else:
            # length refinement
            e = np.array(sorted(edges))
            L = np.linalg.norm(points[e[:, 0]] - points[e[:, 1]], axis=1)
            long_edges = e[L > 1.4 * h]
            if len(long_edges):
                seg_lookup = {tuple(sorted(s)) for s in segs_all.tolist()}
                interior_new = []
                for a, b in long_edges.tolist():
                    if (a, b) not in seg_lookup:
                        interior_new.append(0.5 * (points[a] + points[b]))
                # constraint segments are at most h long already; only interior splits here
                if interior_new:
                    mids = np.array(interior_new)
                    lat = np.concatenate([lat, mids])
                    changed = True
        if not changed:
            break
    else:
        raise MeshError(f"mesh refinement did not converge in {max_passes} passes")

    # drop unused vertices and renumber
    used = np.unique(t)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = points[used]
    tris = remap[t]
    mesh = _with_boundary_tags(verts, tris, domain, scale)
    if mesh.h_max > 1.5 * h + 1e-12:
        raise MeshError(f"longest edge {mesh.h_max:g} exceeds 1.5 h")
    return mesh


def _with_boundary_tags(verts: np.ndarray, tris: np.ndarray, domain: DomainSpec, scale: float) -> Mesh:
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bedges = uniq[counts == 1]
    mid = 0.5 * (verts[bedges[:, 0]] + verts[bedges[:, 1]])
    d_out = shapely.distance(shapely.points(mid), shapely.LinearRing(domain.outer))
    tol = 1e-9 * scale
    tags = np.where(d_out <= tol, GAMMA_I, "")
    if domain.obstacle is not None:
        d_obs = shapely.distance(shapely.points(mid), shapely.LinearRing(domain.obstacle))
        tags = np.where((tags == "") & (d_obs <= tol), GAMMA_D, tags)
    if np.any(tags == ""):
        raise MeshError("boundary edge not on the outer or obstacle polygon (nonconforming mesh)")
    # orient boundary edges consistently with their triangle (CCW around Omega)
    tri_edges = {}
    for tri in tris.tolist():
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            tri_edges[(min(a, b), max(a, b))] = (a, b)
    oriented = np.array([tri_edges[tuple(be)] for be in bedges.tolist()], dtype=np.int64).reshape(-1, 2)
    return Mesh(verts, tris.astype(np.int64), oriented, tuple(tags.tolist()))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle into four via edge midpoints; tags inherited."""
    t = mesh.triangles
    v = mesh.vertices
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T
    nv = len(v)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    m01, m12, m20 = nv + inv[:, 0], nv + inv[:, 1], nv + inv[:, 2]
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    tris = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    lookup = {tuple(k): i for i, k in enumerate(uniq.tolist())}
    new_edges, new_tags = [], []
    for (p, q), tag in zip(mesh.boundary_edges.tolist(), mesh.edge_tags):
        m = nv + lookup[(min(p, q), max(p, q))]
        new_edges += [(p, m), (m, q)]
        new_tags += [tag, tag]
    return Mesh(np.concatenate([v, mids]), tris, np.array(new_edges, dtype=np.int64), tuple(new_tags))


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text export; floats are written with ``repr`` for a bit-exact round trip."""
    lines = [f"vertices {len(mesh.vertices)} triangles {len(mesh.triangles)} edges {len(mesh.boundary_edges)}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{i} {j} {tag}" for (i, j), tag in zip(mesh.boundary_edges.tolist(), mesh.edge_tags)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        rows = fh.read().splitlines()
    head = rows[0].split()
    if len(head) != 6 or head[0::2] != ["vertices", "triangles", "edges"]:
        raise MeshError(f"{path}: bad header {rows[0]!r}")
    nv, nt, ne = int(head[1]), int(head[3]), int(head[5])
    body = rows[1:]
    if len(body) < nv + nt + ne:
        raise MeshError(f"{path}: truncated file")
    verts = np.array([[float(s) for s in r.split()] for r in body[:nv]]).reshape(-1, 2)
    tris = np.array([[int(s) for s in r.split()] for r in body[nv:nv + nt]], dtype=np.int64).reshape(-1, 3)
    edges, tags = [], []
    for r in body[nv + nt:nv + nt + ne]:
        i, j, tag = r.split()
        if tag not in (GAMMA_D, GAMMA_I):
            raise MeshError(f"{path}: unknown boundary tag {tag!r}")
        edges.append((int(i), int(j)))
        tags.append(tag)
    return Mesh(verts, tris, np.array(edges, dtype=np.int64).reshape(-1, 2), tuple(tags))
