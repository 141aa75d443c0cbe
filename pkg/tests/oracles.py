"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def brute_force_geodesics(n, edges):
    """All-pairs minimum over every simple path, found by exhaustive DFS.

    ``edges`` is an iterable of undirected ``(i, j, w)``. Path sums are
    accumulated from the source outward; the result takes the minimum of
    both directions so it matches a symmetrised shortest-path matrix bit for bit.
    """
    adj = {i: [] for i in range(n)}
    for i, j, w in edges:
        adj[i].append((j, w))
        adj[j].append((i, w))
    best = np.full((n, n), math.inf)
    for s in range(n):
        best[s, s] = 0.0
        stack = [(s, 0.0, frozenset([s]))]
        while stack:
            u, cost, seen = stack.pop()
            for v, w in adj[u]:
                if v in seen:
                    continue
                c = cost + w
                if c < best[s, v]:
                    best[s, v] = c
                stack.append((v, c, seen | {v}))
    return np.minimum(best, best.T)


def simple_paths(adj, a, b):
    """Every simple path from ``a`` to ``b`` in a dict-of-lists graph."""
    out = []
    stack = [[a]]
    while stack:
        path = stack.pop()
        for v in adj[path[-1]]:
            if v in path:
                continue
            if v == b:
                out.append(path + [v])
            else:
                stack.append(path + [v])
    return out


def distance_matrix(points):
    pts = np.asarray(points, float)
    n = len(pts)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d[i, j] = math.sqrt(sum((a - b) ** 2 for a, b in zip(pts[i], pts[j])))
    return d


def mlp_forward(weights, biases, acts, x):
    """Straight-line evaluation of a fully connected net, one scalar at a time."""
    funcs = {"tanh": math.tanh, "linear": lambda z: z,
             "sigmoid": lambda z: 1.0 / (1.0 + math.exp(-z))}
    a = list(x)
    for W, b, act in zip(weights, biases, acts):
        a = [funcs[act](sum(W[r][c] * a[c] for c in range(len(a))) + b[r])
             for r in range(len(b))]
    return a


def bernstein(i, n, t):
    return math.comb(n, i) * t**i * (1 - t) ** (n - i)


def de_casteljau(ctrl, t):
    pts = [np.asarray(c, float) for c in ctrl]
    while len(pts) > 1:
        pts = [(1 - t) * p + t * q for p, q in zip(pts, pts[1:])]
    return pts[0]


def winding_number(p, poly):
    """Winding number of closed polygon ``poly`` around ``p`` by summed angles."""
    total = 0.0
    n = len(poly)
    for i in range(n):
        a = np.asarray(poly[i]) - p
        b = np.asarray(poly[(i + 1) % n]) - p
        total += math.atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1])
    return round(total / (2 * math.pi))


def in_circumcircle(a, b, c, d):
    """True when ``d`` is strictly inside the circle through a, b, c (explicit centre)."""
    ax, ay = a
    bx, by = b
    cx, cy = c
    den = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
          + (cx * cx + cy * cy) * (ay - by)) / den
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
          + (cx * cx + cy * cy) * (bx - ax)) / den
    r = math.hypot(ax - ux, ay - uy)
    return math.hypot(d[0] - ux, d[1] - uy) < r * (1 - 1e-9)


def all_pairs(n):
    return itertools.combinations(range(n), 2)
