"""Interior resampling, Delaunay triangulation, trimming, lifting and export."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neuralnet import Network, forward
from .splinefit import BSplineCurve, evaluate

log = logging.getLogger(__name__)

INCIRCLE_EPS = 1e-10


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Polygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise MeshError("a polygon needs at least 3 2D vertices")
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    @property
    def area(self) -> float:
        """Signed area, positive for counterclockwise loops."""
        x, y = self.vertices.T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def perimeter(self) -> float:
        return float(np.sum(np.linalg.norm(np.roll(self.vertices, -1, axis=0) - self.vertices,
                                           axis=1)))

    def edges(self):
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def is_simple(self) -> bool:
        """True when no two non-adjacent edges intersect."""
        p, q = self.edges()
        n = len(p)
        for i in range(n):
            j = np.arange(i + 2, n)
            if i == 0:
                j = j[j != n - 1]
            if len(j) and np.any(_segments_cross(p[i], q[i], p[j], q[j])):
                return False
        return True


@dataclass(frozen=True)
class TriMesh2:
    vertices: np.ndarray
    triangles: np.ndarray


@dataclass(frozen=True)
class TriMesh3:
    vertices: np.ndarray
    triangles: np.ndarray


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - \
        (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def _segments_cross(p1, p2, q1, q2):
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def sample_polygon(curve: BSplineCurve, n_samples: int | None = None) -> Polygon:
    """Closed polygon through ``n_samples`` uniform parameter steps of a closed curve.

    The default resolution is 8 samples per independent control point (at least 16).
    """
    if not curve.closed:
        raise MeshError("polygon sampling needs a closed curve")
    if n_samples is None:
        n_samples = max(16, 8 * curve.n_coefficients)
    if n_samples < 16:
        raise MeshError("n_samples must be >= 16")
    a, b = curve.domain
    pts = evaluate(curve, a + (b - a) * np.arange(n_samples) / n_samples)
    poly = Polygon(pts[:, :2])
    extent = np.ptp(poly.vertices, axis=0)
    if abs(poly.area) <= 1e-12 * max(float(extent @ extent), 1e-300):
        raise MeshError("boundary curve encloses no area")
    if not poly.is_simple():
        log.warning("boundary polygon self-intersects")
    return poly


def points_in_polygon(points, poly: Polygon, tol: float = 1e-12) -> np.ndarray:
    """Even-odd containment; points within ``tol`` x polygon size of an edge count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p, q = poly.edges()
    scale = float(np.max(np.ptp(poly.vertices, axis=0)))
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    px, py = pts[:, 0:1], pts[:, 1:2]
    for start in range(0, len(p), 256):
        x1, y1 = p[start:start + 256, 0], p[start:start + 256, 1]
        x2, y2 = q[start:start + 256, 0], q[start:start + 256, 1]
        straddle = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= (np.count_nonzero(straddle & (px < xint), axis=1) % 2).astype(bool)
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.clip(np.where(seg2 > 0, ((px - x1) * dx + (py - y1) * dy) / seg2, 0.0), 0, 1)
        dist = np.hypot(px - (x1 + t * dx), py - (y1 + t * dy))
        on_edge |= np.any(dist <= tol * scale, axis=1)
    return inside | on_edge


def point_in_polygon(p, poly: Polygon) -> bool:
    return bool(points_in_polygon(np.asarray(p, dtype=float)[None, :], poly)[0])


def interior_grid(poly: Polygon, spacing: float) -> np.ndarray:
    """Nodes of a square grid with pitch ``spacing`` anchored at the bounding-box corner
    that fall inside the polygon."""
    if not spacing > 0:
        raise MeshError("grid spacing must be > 0")
    lo = poly.vertices.min(axis=0)
    extent = np.ptp(poly.vertices, axis=0)
    if spacing > extent.min():
        raise MeshError(f"grid spacing {spacing} exceeds the polygon bounding box {extent}")
    nx, ny = (np.floor(extent / spacing + 1e-9).astype(int) + 1).tolist()
    gx, gy = np.meshgrid(lo[0] + spacing * np.arange(nx), lo[1] + spacing * np.arange(ny),
                         indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    return nodes[points_in_polygon(nodes, poly)]


def resample_interior(poly: Polygon, spacing: float) -> np.ndarray:
    """Interior grid nodes followed by the polygon vertices.

    Grid nodes that coincide with a polygon vertex are dropped so every
    returned point is distinct.
    """
    nodes = interior_grid(poly, spacing)
    verts = poly.vertices
    if len(nodes):
        d = np.min(np.linalg.norm(nodes[:, None, :] - verts[None, :, :], axis=2), axis=1)
        nodes = nodes[d > 1e-9 * spacing]
    return np.concatenate([nodes, verts])


def median_nn_spacing(points) -> float:
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=float)
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(d[:, 1]))


def _incircle(a, b, c, d) -> float:
    """Positive when ``d`` is inside the circumcircle of counterclockwise ``abc``."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    return ((adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
            - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
            + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady))


def incircle_many(pts, tris, d) -> np.ndarray:
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    ad, bd, cd = a - d, b - d, c - d
    la, lb, lc = (ad * ad).sum(1), (bd * bd).sum(1), (cd * cd).sum(1)
    return (la * (bd[:, 0] * cd[:, 1] - cd[:, 0] * bd[:, 1])
            - lb * (ad[:, 0] * cd[:, 1] - cd[:, 0] * ad[:, 1])
            + lc * (ad[:, 0] * bd[:, 1] - bd[:, 0] * ad[:, 1]))


class _Triangulation:
    """Bowyer-Watson state over normalised coordinates.

    Hull edges are closed off by ghost triangles ``(u, v, g)`` sharing one
    ghost vertex ``g``; a ghost triangle's circumcircle degenerates to the
    open half-plane left of ``u -> v`` plus the open segment ``uv``. This
    keeps the hull exact where a finite super triangle would lose thin hull
    triangles.
    """

    def __init__(self, pts: np.ndarray, seed: tuple[int, int, int]):
        n = len(pts)
        self.ghost = n
        self.pts = np.concatenate([pts, [[0.0, 0.0]]])
        self.tris = np.zeros((max(16, 8 * n), 3), dtype=np.intp)
        self.alive = np.zeros(len(self.tris), dtype=bool)
        self.count = 0
        self.edge_owner: dict[tuple[int, int], int] = {}
        a, b, c = seed
        if _cross(pts[a], pts[b], pts[c]) < 0:
            b, c = c, b
        g = self.ghost
        for t in ((a, b, c), (b, a, g), (c, b, g), (a, c, g)):
            self._add(*t)

    def _add(self, a, b, c):
        if self.count == len(self.tris):
            self.tris = np.concatenate([self.tris, np.zeros_like(self.tris)])
            self.alive = np.concatenate([self.alive, np.zeros_like(self.alive)])
        t = self.count
        self.tris[t] = (a, b, c)
        self.alive[t] = True
        self.count += 1
        for e in ((a, b), (b, c), (c, a)):
            self.edge_owner[e] = t

    def _remove(self, t):
        a, b, c = self.tris[t].tolist()
        self.alive[t] = False
        for e in ((a, b), (b, c), (c, a)):
            if self.edge_owner.get(e) == t:
                del self.edge_owner[e]

    def _hull_edge(self, t):
        """Real edge ``(u, v)`` of ghost triangle ``t``, or None for a real triangle."""
        a, b, c = self.tris[t].tolist()
        g = self.ghost
        if g == c:
            return a, b
        if g == a:
            return b, c
        if g == b:
            return c, a
        return None

    def _in_circle(self, t, p) -> bool:
        P = self.pts
        edge = self._hull_edge(t)
        if edge is None:
            x, y, z = self.tris[t].tolist()
            return _incircle(P[x], P[y], P[z], p) > INCIRCLE_EPS
        u, v = P[edge[0]], P[edge[1]]
        side = _cross(u, v, p)
        if side > 1e-14:
            return True
        if side < -1e-14:
            return False
        return float((p - u) @ (v - u)) > 0 and float((p - v) @ (u - v)) > 0

    def locate(self, p) -> int:
        live = np.flatnonzero(self.alive[:self.count])
        tri = self.tris[live]
        real = np.all(tri != self.ghost, axis=1)
        P = self.pts
        rt = tri[real]
        o = np.stack([_cross(P[rt[:, 0]], P[rt[:, 1]], p),
                      _cross(P[rt[:, 1]], P[rt[:, 2]], p),
                      _cross(P[rt[:, 2]], P[rt[:, 0]], p)], axis=1).min(axis=1)
        best = int(np.argmax(o))
        if o[best] >= -1e-14:
            return int(live[real][best])
        ghosts = live[~real]
        side = [_cross(P[u], P[v], p) for u, v in map(self._hull_edge, ghosts)]
        return int(ghosts[int(np.argmax(side))])

    def insert(self, i: int) -> bool:
        P = self.pts
        p = P[i]
        g = self.ghost
        start = self.locate(p)
        near = [v for v in self.tris[start].tolist() if v != g]
        if min(np.hypot(*(P[v] - p)) for v in near) < 1e-12:
            return False
        cavity = {start}
        stack = [start]
        while stack:
            t = stack.pop()
            a, b, c = self.tris[t].tolist()
            for u, v in ((a, b), (b, c), (c, a)):
                nb = self.edge_owner.get((v, u))
                if nb is None or nb in cavity:
                    continue
                if self._in_circle(nb, p):
                    cavity.add(nb)
                    stack.append(nb)
        # grow the cavity until every real boundary edge sees p strictly on its left
        while True:
            boundary = self._boundary(cavity)
            bad = [(u, v) for u, v in boundary
                   if g not in (u, v) and _cross(P[u], P[v], p) <= 1e-14]
            if not bad:
                break
            grown = False
            for u, v in bad:
                nb = self.edge_owner.get((v, u))
                if nb is not None and nb not in cavity:
                    cavity.add(nb)
                    grown = True
            if not grown:
                raise MeshError("triangulation cavity is degenerate")
        for t in cavity:
            self._remove(t)
        for u, v in boundary:
            self._add(u, v, i)
        return True

    def _boundary(self, cavity):
        edges = []
        for t in sorted(cavity):
            a, b, c = self.tris[t].tolist()
            for u, v in ((a, b), (b, c), (c, a)):
                if self.edge_owner.get((v, u)) not in cavity:
                    edges.append((u, v))
        return edges

    def triangles(self) -> np.ndarray:
        tri = self.tris[:self.count][self.alive[:self.count]]
        return tri[np.all(tri != self.ghost, axis=1)]


def _seed_triangle(pts: np.ndarray) -> tuple[int, int, int]:
    """Three well-spread, non-collinear points to start the triangulation."""
    a = int(np.argmin(pts[:, 0] + pts[:, 1]))
    b = int(np.argmax(np.linalg.norm(pts - pts[a], axis=1)))
    c = int(np.argmax(np.abs(_cross(pts[a], pts[b], pts))))
    return a, b, c


def delaunay(points) -> TriMesh2:
    """Bowyer-Watson Delaunay triangulation; triangles are counterclockwise.

    Coordinates are normalised to the unit box internally, so the incircle
    tolerance is relative to the data scale. Points closer than ``1e-12``
    (relative) to an existing vertex are left out of the triangulation.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise MeshError("delaunay needs at least 3 2D points")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = float(np.max(hi - lo))
    if not scale > 0:
        raise MeshError("all points coincide")
    norm = (pts - (lo + hi) / 2) / scale
    centred = norm - norm.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-12 * sv[0]:
        raise MeshError("all points are collinear")
    seed = _seed_triangle(norm)
    tri = _Triangulation(norm, seed)
    skipped = sum(not tri.insert(i) for i in range(len(pts)) if i not in seed)
    if skipped:
        log.warning("skipped %d duplicate points in triangulation", skipped)
    return TriMesh2(pts, tri.triangles())


def triangle_centroids(vertices, triangles) -> np.ndarray:
    return np.asarray(vertices)[np.asarray(triangles)].mean(axis=1)


def compact(vertices, triangles):
    used, inverse = np.unique(np.asarray(triangles).ravel(), return_inverse=True)
    return np.asarray(vertices)[used], inverse.reshape(-1, 3)


def trim(mesh: TriMesh2, poly: Polygon) -> TriMesh2:
    """Keep triangles whose centroid lies inside ``poly``; unused vertices are dropped."""
    keep = points_in_polygon(triangle_centroids(mesh.vertices, mesh.triangles), poly)
    if not np.any(keep):
        raise MeshError("trimming removed every triangle; boundary and points disagree")
    verts, tris = compact(mesh.vertices, mesh.triangles[keep])
    return TriMesh2(verts, tris)


def lift(mesh: TriMesh2, net: Network) -> TriMesh3:
    """Map every vertex through the network; connectivity is copied unchanged."""
    return TriMesh3(forward(net, mesh.vertices), mesh.triangles.copy())


def euler_characteristic(triangles) -> int:
    tris = np.asarray(triangles)
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(e, axis=0))
    return len(np.unique(tris)) - n_edges + len(tris)


def export_obj(mesh: TriMesh3, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for x, y, z in np.asarray(mesh.vertices, float).tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (np.asarray(mesh.triangles) + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


def export_ply(mesh: TriMesh3, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    verts = np.asarray(mesh.vertices, float)
    tris = np.asarray(mesh.triangles)
    with open(path, "w", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(verts)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {len(tris)}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for x, y, z in verts.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in tris.tolist():
            fh.write(f"3 {a} {b} {c}\n")


def load_obj(path) -> TriMesh3:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(f.split("/")[0]) - 1 for f in parts[1:4]])
    return TriMesh3(np.array(verts, float).reshape(-1, 3), np.array(faces, int).reshape(-1, 3))
