"""k-NN graphs, geodesic distances and the Isomap 2D embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.csgraph import shortest_path as _csgraph_shortest_path

from .pointcloud import as_cloud

DUPLICATE_WEIGHT = 1e-12
FLOYD_WARSHALL_MAX_N = 512


class DisconnectedGraphError(ValueError):
    """Raised when the neighbour graph splits into several components."""

    def __init__(self, n_components, suggested_k=None):
        msg = f"neighbour graph has {n_components} connected components"
        if suggested_k is not None:
            msg += f"; the smallest k giving a connected graph is {suggested_k}"
        else:
            msg += "; increase k"
        super().__init__(msg)
        self.n_components = n_components
        self.suggested_k = suggested_k


@dataclass(frozen=True)
class NeighborGraph:
    """Symmetric weighted graph stored as directed edge arrays (both directions present)."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    @property
    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def to_sparse(self) -> csr_matrix:
        return csr_matrix((self.weight, (self.src, self.dst)), shape=(self.n, self.n))

    def n_components(self) -> int:
        return connected_components(self.to_sparse(), directed=False)[0]


@dataclass(frozen=True)
class Embedding2D:
    coords: np.ndarray
    stress: float
    eigenvalues: np.ndarray

    def __len__(self):
        return len(self.coords)


def _knn_indices(dist: np.ndarray, k: int) -> np.ndarray:
    # stable sort: equal distances keep ascending index order
    order = np.argsort(dist, axis=1, kind="stable")
    n = len(dist)
    out = np.empty((n, k), dtype=np.intp)
    for i in range(n):
        row = order[i]
        out[i] = row[row != i][:k]
    return out


def pairwise_distances(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def knn_graph(cloud, k: int, dist: np.ndarray | None = None) -> NeighborGraph:
    """Union-symmetrised k-nearest-neighbour graph with Euclidean weights.

    Works for any dimension. Coincident points are joined by an edge of
    weight ``DUPLICATE_WEIGHT`` so every weight stays positive.
    """
    pts = np.asarray(cloud, dtype=float)
    n = len(pts)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}, got {k}")
    if dist is None:
        dist = pairwise_distances(pts)
    nbrs = _knn_indices(dist, k)
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    # union symmetrisation, deduplicated
    pairs = np.unique(np.concatenate([np.column_stack([rows, cols]),
                                      np.column_stack([cols, rows])]), axis=0)
    w = dist[pairs[:, 0], pairs[:, 1]]
    w = np.where(w > 0, w, DUPLICATE_WEIGHT)
    return NeighborGraph(n, pairs[:, 0].copy(), pairs[:, 1].copy(), w)


def smallest_connecting_k(cloud, k_max: int | None = None) -> int | None:
    """Binary search for the smallest k whose k-NN graph is connected."""
    pts = np.asarray(cloud, dtype=float)
    n = len(pts)
    dist = pairwise_distances(pts)
    hi = n - 1 if k_max is None else min(k_max, n - 1)
    if knn_graph(pts, hi, dist).n_components() > 1:
        return None
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if knn_graph(pts, mid, dist).n_components() == 1:
            hi = mid
        else:
            lo = mid + 1
    return lo


def shortest_paths(g: NeighborGraph, method: str = "dijkstra") -> np.ndarray:
    """All-pairs geodesic distances over ``g``.

    ``method`` is ``"dijkstra"`` (heap based, one run per source) or
    ``"floyd-warshall"`` (only for ``n <= 512``). The result is symmetrised
    with an entrywise minimum to remove last-bit asymmetries.
    """
    ncomp = g.n_components()
    if ncomp > 1:
        raise DisconnectedGraphError(ncomp)
    if method == "dijkstra":
        code = "D"
    elif method == "floyd-warshall":
        if g.n > FLOYD_WARSHALL_MAX_N:
            raise ValueError(f"floyd-warshall limited to n <= {FLOYD_WARSHALL_MAX_N}")
        code = "FW"
    else:
        raise ValueError(f"unknown shortest path method {method!r}")
    d = _csgraph_shortest_path(g.to_sparse(), method=code, directed=True)
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


def double_center(d: np.ndarray) -> np.ndarray:
    """Inner-product matrix ``-1/2 J D^2 J`` of a distance matrix."""
    d2 = np.asarray(d, dtype=float) ** 2
    row = d2.mean(axis=1, keepdims=True)
    col = d2.mean(axis=0, keepdims=True)
    return -0.5 * (d2 - row - col + d2.mean())


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        tol = 1e-10 * np.abs(col).max()
        first = np.flatnonzero(np.abs(col) > tol)
        if len(first) and col[first[0]] < 0:
            vecs[:, j] = -col
    return vecs


def classical_mds(d, dim: int = 2) -> Embedding2D:
    """Classical MDS of a distance matrix.

    Returns coordinates ``v * sqrt(lambda)`` of the ``dim`` largest
    eigenpairs of the double-centred matrix and the stress
    ``||tau(D) - tau(D_Y)||_F`` of the result.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError("distance matrix entries must be finite and >= 0")
    b = double_center(d)
    b = 0.5 * (b + b.T)
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = 1e-12 * max(abs(evals[0]), 1.0)
    n_pos = int(np.sum(evals[:dim] > tol))
    if n_pos < dim:
        raise ValueError(f"distance matrix has only {n_pos} positive eigenvalues, need {dim} "
                         "(degenerate geometry)")
    vecs = _fix_signs(evecs[:, :dim])
    coords = vecs * np.sqrt(evals[:dim])
    stress = float(np.linalg.norm(b - double_center(pairwise_distances(coords))))
    return Embedding2D(coords, stress, evals[:dim].copy())


def isomap(cloud, k: int = 12, method: str = "dijkstra") -> Embedding2D:
    """Embed a 3D cloud in the plane by MDS on k-NN geodesic distances."""
    pts = as_cloud(cloud)
    g = knn_graph(pts, k)
    ncomp = g.n_components()
    if ncomp > 1:
        raise DisconnectedGraphError(ncomp, smallest_connecting_k(pts))
    return classical_mds(shortest_paths(g, method), 2)
