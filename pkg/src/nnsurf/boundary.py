"""Boundary interpolant selection by multi-depth corner paths.

At each depth the remaining points are split into equal angular sectors
around their centroid and the farthest point of each sector becomes a
corner. Consecutive corners are joined by the cheapest path through a
k-NN graph of the points in their (padded) bounding rectangle, the joined
paths form a closed ring, and the ring is stripped before the next depth.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from .embedding import knn_graph

log = logging.getLogger(__name__)


class BoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class PathWeights:
    """Edge cost ``c1 * |p - q| + c2 * |q - centroid|``."""

    c1: float = 1.0
    c2: float = 0.05

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0 or not self.c1 + self.c2 > 0:
            raise ValueError("path weights must be >= 0 and not both zero")


@dataclass(frozen=True)
class BoundaryRing:
    depth: int
    indices: tuple[int, ...]

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class RingSample:
    rings: list[BoundaryRing]
    exhausted: bool = False

    @property
    def indices(self) -> np.ndarray:
        """All ring indices, outermost depth first."""
        if not self.rings:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.asarray(r.indices, dtype=int) for r in self.rings])


def centroid(cloud) -> np.ndarray:
    pts = np.asarray(cloud, dtype=float)
    if len(pts) == 0:
        raise ValueError("centroid of an empty cloud")
    return pts.mean(axis=0)


def polar(cloud, center):
    d = np.asarray(cloud, dtype=float) - center
    return np.hypot(d[:, 0], d[:, 1]), np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * math.pi)


def sector_of(angle, m: int):
    # nudge absorbs round-off for points lying on a sector edge
    return np.floor(angle / (2 * math.pi / m) + 1e-9).astype(int) % m


def select_corners(cloud, m: int = 8, center=None) -> np.ndarray:
    """Farthest point from the centroid in each of ``m`` equal angular sectors.

    Sectors start at angle 0 and run counterclockwise; empty sectors are
    skipped. Returns point indices ordered by angle.
    """
    if m < 3:
        raise ValueError("need at least 3 sectors")
    pts = np.asarray(cloud, dtype=float)
    center = centroid(pts) if center is None else np.asarray(center, dtype=float)
    radius, angle = polar(pts, center)
    scale = max(radius.max(initial=0.0), 1e-300)
    valid = radius > 1e-12 * scale
    sector = sector_of(angle, m)
    corners = []
    for s in range(m):
        idx = np.flatnonzero(valid & (sector == s))
        if len(idx):
            # argmax keeps the lowest index among equal radii
            corners.append(int(idx[np.argmax(radius[idx])]))
    corners = list(dict.fromkeys(corners))
    if len(corners) < 3:
        raise BoundaryError(f"only {len(corners)} non-empty sectors; need at least 3 corners")
    return np.array(sorted(corners, key=lambda i: (angle[i], i)), dtype=int)


def region_indices(cloud, a: int, b: int, margin: float = 0.1) -> np.ndarray:
    """Points inside the bounding rectangle of ``a`` and ``b`` padded by ``margin`` x diagonal."""
    pts = np.asarray(cloud, dtype=float)
    lo = np.minimum(pts[a], pts[b])
    hi = np.maximum(pts[a], pts[b])
    pad = margin * float(np.hypot(*(hi - lo)))
    inside = np.all((pts >= lo - pad) & (pts <= hi + pad), axis=1)
    return np.flatnonzero(inside)


def path_cost(cloud, path, weights: PathWeights, center) -> float:
    pts = np.asarray(cloud, dtype=float)
    p = pts[np.asarray(path)]
    steps = np.linalg.norm(np.diff(p, axis=0), axis=1)
    dc = np.linalg.norm(p[1:] - center, axis=1)
    return float(np.sum(weights.c1 * steps + weights.c2 * dc))


def corner_path(cloud, a: int, b: int, weights: PathWeights = PathWeights(), k: int = 12,
                center=None, margin: float = 0.1) -> list[int]:
    """Cheapest path from corner ``a`` to corner ``b`` inside their padded rectangle.

    Stepping from ``p`` to neighbour ``q`` costs ``c1 |p - q| + c2 |q - c|``
    with ``c`` the cloud centroid. Returns indices into ``cloud``.
    """
    if a == b:
        raise ValueError("corner path endpoints must differ")
    pts = np.asarray(cloud, dtype=float)
    center = centroid(pts) if center is None else np.asarray(center, dtype=float)
    region = region_indices(pts, a, b, margin)
    local = pts[region]
    g = knn_graph(local, min(k, len(local) - 1))
    dc = np.linalg.norm(local - center, axis=1)
    cost = weights.c1 * g.weight + weights.c2 * dc[g.dst]
    adj: list[list[tuple[int, float]]] = [[] for _ in range(len(local))]
    for s, d, c in zip(g.src.tolist(), g.dst.tolist(), cost.tolist()):
        adj[s].append((d, c))
    start = int(np.searchsorted(region, a))
    goal = int(np.searchsorted(region, b))
    dist = {start: 0.0}
    prev = {}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == goal:
            break
        done.add(u)
        for v, c in adj[u]:
            nd = d + c
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if goal not in dist:
        raise BoundaryError(f"corners {a} and {b} are not connected inside their region; "
                            "increase k or the rectangle margin")
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return [int(region[i]) for i in reversed(path)]


def ring_from_corners(cloud, corners, weights: PathWeights, k: int, center, margin=0.1):
    ring: list[int] = []
    for c0, c1 in zip(corners, np.roll(corners, -1)):
        ring.extend(corner_path(cloud, int(c0), int(c1), weights, k, center, margin))
    return list(dict.fromkeys(ring))


def sample_rings(cloud, depth: int = 2, m: int = 8, weights: PathWeights = PathWeights(),
                 k: int = 12, margin: float = 0.1) -> RingSample:
    """Peel ``depth`` boundary rings off a 2D cloud, outermost first.

    If the cloud runs out before ``depth`` rings are found, the rings so far
    are returned with ``exhausted`` set.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pts = np.asarray(cloud, dtype=float)
    remaining = np.arange(len(pts))
    rings: list[BoundaryRing] = []
    for d in range(1, depth + 1):
        if len(remaining) < max(m, 4):
            log.warning("cloud exhausted after %d of %d rings", len(rings), depth)
            return RingSample(rings, exhausted=True)
        sub = pts[remaining]
        center = centroid(sub)
        try:
            corners = select_corners(sub, m, center)
            local = ring_from_corners(sub, corners, weights, k, center, margin)
        except BoundaryError as exc:
            log.warning("ring %d failed (%s); stopping", d, exc)
            return RingSample(rings, exhausted=True)
        if len(local) < 3:
            return RingSample(rings, exhausted=True)
        rings.append(BoundaryRing(d, tuple(int(i) for i in remaining[local])))
        remaining = np.delete(remaining, local)
    return RingSample(rings)


def save_rings_csv(sample: RingSample, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("depth,order,index\n")
        for ring in sample.rings:
            for order, idx in enumerate(ring.indices):
                fh.write(f"{ring.depth},{order},{idx}\n")
