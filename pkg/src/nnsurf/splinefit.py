"""B-spline evaluation and penalised least-squares fitting with knot insertion.

Open curves use clamped knot vectors (``degree + 1`` repeated end knots).
Closed curves are periodic: the full knot vector is the list of break
points extended by ``degree`` knots on each side, and the first ``degree``
control points are repeated at the end.

Smoothing fits grow the knot set until the weighted residual ``delta``
falls under the bound ``s = lam * Var(y)`` (per coordinate axis). Each new
knot goes into the span carrying the largest residual, at the position
minimising ``delta + p * P(t)``, where ``P`` is the reciprocal-gap knot
penalty. The choice of ``lam`` stays a manual, data-dependent setting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

DEFAULT_LAMBDA = 2.4
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class RankDeficientError(ValueError):
    """The data sites leave some basis function without support."""


# ---------------------------------------------------------------------------
# basis functions

def basis(i: int, k: int, knots, x: float) -> float:
    """Value of the ``i``-th degree-``k`` B-spline at ``x`` by the Cox-de Boor recursion.

    Spans are half-open ``[t_j, t_{j+1})`` except that the last non-empty
    span also owns the right end of the knot range.
    """
    t = np.asarray(knots, dtype=float)
    last = len(t) - 1
    while last > 0 and t[last - 1] == t[last]:
        last -= 1

    def rec(i, k):
        if k == 0:
            if t[i] <= x < t[i + 1]:
                return 1.0
            return 1.0 if (x == t[-1] and i + 1 == last and t[i] < t[i + 1]) else 0.0
        left = right = 0.0
        if t[i + k] != t[i]:
            left = (x - t[i]) / (t[i + k] - t[i]) * rec(i, k - 1)
        if t[i + k + 1] != t[i + 1]:
            right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * rec(i + 1, k - 1)
        return left + right

    return rec(i, k)


def find_spans(knots, k: int, x) -> np.ndarray:
    """Index ``s`` with ``t_s <= x < t_{s+1}`` restricted to ``k <= s < n``."""
    t = np.asarray(knots, dtype=float)
    n = len(t) - k - 1
    s = np.searchsorted(t, np.asarray(x, dtype=float), side="right") - 1
    return np.clip(s, k, n - 1)


def basis_funs(knots, k: int, x):
    """Non-zero basis values at each ``x``.

    Returns ``(spans, values)`` where ``values[r, j]`` is ``B_{spans[r]-k+j}(x_r)``.
    """
    t = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    spans = find_spans(t, k, x)
    vals = np.zeros((len(x), k + 1))
    vals[:, 0] = 1.0
    left = np.zeros((len(x), k + 1))
    right = np.zeros((len(x), k + 1))
    for j in range(1, k + 1):
        left[:, j] = x - t[spans + 1 - j]
        right[:, j] = t[spans + j] - x
        saved = np.zeros(len(x))
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.divide(vals[:, r], denom, out=np.zeros(len(x)), where=denom != 0)
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return spans, vals


def design_matrix(knots, k: int, x) -> np.ndarray:
    t = np.asarray(knots, dtype=float)
    n = len(t) - k - 1
    spans, vals = basis_funs(t, k, x)
    out = np.zeros((len(vals), n))
    rows = np.arange(len(vals))
    for j in range(k + 1):
        out[rows, spans - k + j] = vals[:, j]
    return out


# ---------------------------------------------------------------------------
# knot vectors

def clamped_knots(a: float, b: float, interior, k: int = 3) -> np.ndarray:
    interior = np.sort(np.asarray(interior, dtype=float))
    if len(interior) and (interior[0] <= a or interior[-1] >= b):
        raise ValueError("interior knots must lie strictly inside (a, b)")
    return np.concatenate([np.full(k + 1, a), interior, np.full(k + 1, b)])


def periodic_knots(breaks, k: int = 3, period: float = 1.0) -> np.ndarray:
    """Periodic knot vector for break points ``breaks[0] < ... < breaks[-1] < breaks[0] + period``."""
    u = np.asarray(breaks, dtype=float)
    n = len(u)
    if n < k:
        raise ValueError(f"a periodic degree-{k} spline needs at least {k} spans")
    ext = np.concatenate([u, [u[0] + period]])
    return np.concatenate([u[n - k:] - period, ext, ext[1:k + 1] + period]) if k else ext


def distinct_knots(knots) -> np.ndarray:
    return np.unique(np.asarray(knots, dtype=float))


def knot_penalty(knots) -> float:
    """Sum of reciprocal gaps between consecutive knots.

    ``knots`` is the strictly increasing list ``[a, interior..., b]``.
    """
    t = np.asarray(knots, dtype=float)
    gaps = np.diff(t)
    if len(gaps) == 0 or np.any(gaps <= 0):
        raise ValueError("knot penalty needs a strictly increasing knot sequence")
    return float(np.sum(1.0 / gaps))


# ---------------------------------------------------------------------------
# curves

@dataclass(frozen=True)
class BSplineCurve:
    degree: int
    knots: np.ndarray
    control: np.ndarray
    closed: bool = False

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        control = np.asarray(self.control, dtype=float)
        if control.ndim == 1:
            control = control[:, None]
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control", control)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knot vector must be non-decreasing")
        if len(control) != len(knots) - self.degree - 1:
            raise ValueError(f"{len(control)} control points do not match {len(knots)} knots "
                             f"at degree {self.degree}")
        if not np.all(np.isfinite(control)):
            raise ValueError("control points must be finite")

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    @property
    def n_coefficients(self) -> int:
        """Independent control points (wrapped copies excluded for closed curves)."""
        return len(self.control) - (self.degree if self.closed else 0)

    @property
    def interior_knots(self) -> np.ndarray:
        a, b = self.domain
        t = self.knots[self.degree:len(self.knots) - self.degree]
        return t[(t > a) & (t < b)]

    def __call__(self, t):
        return evaluate(self, t)

    def to_dict(self) -> dict:
        return {"degree": self.degree, "knots": self.knots.tolist(),
                "control": self.control.tolist(), "closed": self.closed}

    @classmethod
    def from_dict(cls, doc: dict) -> "BSplineCurve":
        return cls(int(doc["degree"]), np.array(doc["knots"], float),
                   np.array(doc["control"], float), bool(doc["closed"]))


def save_curve(curve: BSplineCurve, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(curve.to_dict(), fh, indent=1)
        fh.write("\n")


def load_curve(path) -> BSplineCurve:
    with open(path) as fh:
        return BSplineCurve.from_dict(json.load(fh))


def save_polyline_csv(curve: BSplineCurve, path, n: int = 200) -> None:
    a, b = curve.domain
    t = np.linspace(a, b, n, endpoint=not curve.closed)
    pts = evaluate(curve, t)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join("xyz"[:pts.shape[1]]) + "\n")
        for row in pts.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")


def evaluate(curve: BSplineCurve, t):
    """Curve points at parameter(s) ``t``; closed curves wrap ``t`` into the domain."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, b = curve.domain
    if curve.closed:
        t = a + np.mod(t - a, b - a)
    else:
        tol = 1e-12 * max(1.0, abs(a), abs(b))
        if np.any(t < a - tol) or np.any(t > b + tol):
            raise ValueError(f"parameter outside curve domain [{a}, {b}]")
        t = np.clip(t, a, b)
    spans, vals = basis_funs(curve.knots, curve.degree, t)
    idx = spans[:, None] - curve.degree + np.arange(curve.degree + 1)
    out = np.einsum("rj,rjd->rd", vals, curve.control[idx])
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# least squares

@dataclass(frozen=True)
class FitInput:
    """Data sites ``x``, values ``y`` (``(m,)`` or ``(m, d)``) and positive weights."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        w = np.ones(len(x)) if self.w is None else np.asarray(self.w, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if len(y) != len(x) or len(w) != len(x):
            raise ValueError("x, y and w must have equal length")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("data must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return len(self.x)


def _check_support(a_rows: np.ndarray):
    empty = np.flatnonzero(~np.any(a_rows != 0, axis=0))
    if len(empty):
        raise RankDeficientError(f"basis function(s) {empty.tolist()} have no data site in "
                                 "their support")


def _residuals(inp: FitInput, design: np.ndarray, coef: np.ndarray) -> np.ndarray:
    return inp.w[:, None] * (inp.y - design @ coef)


def lsq_fit_fixed_knots(inp: FitInput, knots, degree: int = 3):
    """Weighted least-squares coefficients for a clamped knot vector.

    Solves the banded normal equations by Cholesky. Returns
    ``(coefficients, delta)`` with ``coefficients`` of shape ``(n, d)`` and
    ``delta = sum_r (w_r y_r - w_r s(x_r))^2`` summed over axes.
    """
    t = np.asarray(knots, dtype=float)
    k = degree
    n = len(t) - k - 1
    if inp.m < n:
        raise RankDeficientError(f"{inp.m} observations cannot determine {n} coefficients")
    spans, vals = basis_funs(t, k, inp.x)
    wv = vals * inp.w[:, None]
    # upper banded storage: ab[k + i - j, j] = N[i, j] for i <= j
    ab = np.zeros((k + 1, n))
    rhs = np.zeros((n, inp.y.shape[1]))
    wy = inp.w[:, None] * inp.y
    first = spans - k
    for a in range(k + 1):
        np.add.at(rhs, first + a, wv[:, a:a + 1] * wy)
        for b in range(a, k + 1):
            np.add.at(ab[k + a - b], first + b, wv[:, a] * wv[:, b])
    if np.any(ab[k] <= 0):
        raise RankDeficientError(f"basis function(s) {np.flatnonzero(ab[k] <= 0).tolist()} "
                                 "have no data site in their support")
    try:
        coef = solveh_banded(ab, rhs)
    except LinAlgError as exc:
        raise RankDeficientError(f"normal equations are singular: {exc}") from None
    design = design_matrix(t, k, inp.x)
    res = _residuals(inp, design, coef)
    return coef, float(np.sum(res * res))


def _periodic_design(breaks, k, period, x):
    t = periodic_knots(breaks, k, period)
    full = design_matrix(t, k, x)
    n = len(breaks)
    folded = np.zeros((len(x), n))
    for j in range(full.shape[1]):
        folded[:, j % n] += full[:, j]
    return t, folded


def lsq_fit_periodic(inp: FitInput, breaks, degree: int = 3, period: float = 1.0):
    """Least squares for a periodic spline with the given break points.

    Returns ``(knots, control, delta)`` where ``control`` already carries
    the wrapped copies.
    """
    n = len(breaks)
    if inp.m < n:
        raise RankDeficientError(f"{inp.m} observations cannot determine {n} coefficients")
    x = breaks[0] + np.mod(inp.x - breaks[0], period)
    t, a = _periodic_design(breaks, degree, period, x)
    _check_support(a)
    aw = a * inp.w[:, None]
    normal = aw.T @ aw
    try:
        chol = np.linalg.cholesky(normal)
    except np.linalg.LinAlgError:
        raise RankDeficientError("periodic normal equations are singular") from None
    rhs = aw.T @ (inp.w[:, None] * inp.y)
    coef = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    res = _residuals(inp, a, coef)
    control = coef[np.arange(n + degree) % n]
    return t, control, float(np.sum(res * res))


# ---------------------------------------------------------------------------
# smoothing fit

def smoothing_bound(y, lam: float) -> np.ndarray:
    """Per-axis residual bound ``lam * sum (y - mean)^2 / |y|``."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    dev = y - y.mean(axis=0)
    return lam * np.sum(dev * dev, axis=0) / len(y)


@dataclass
class FitReport:
    delta: float
    penalty: float
    objective: float
    p: float
    s: np.ndarray
    delta_axes: np.ndarray
    n_interior: int
    converged: bool
    history: list[float] = field(default_factory=list)

    @property
    def warning(self) -> bool:
        return not self.converged


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6,
                   max_iter: int = 60) -> float:
    """Minimiser of a unimodal ``f`` on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return c if fc <= fd else d


class _Fitter:
    """Shared state for open and periodic smoothing fits."""

    def __init__(self, inp: FitInput, degree: int, closed: bool, domain):
        self.inp, self.k, self.closed = inp, degree, closed
        self.a, self.b = domain
        self.period = self.b - self.a

    def breakpoints(self, interior):
        return np.concatenate([[self.a], np.sort(interior), [self.b]])

    def fit(self, interior):
        """Return ``(knots, control, residual rows)`` or raise RankDeficientError."""
        interior = np.sort(np.asarray(interior, dtype=float))
        if self.closed:
            knots, control, _ = lsq_fit_periodic(
                self.inp, np.concatenate([[self.a], interior]), self.k, self.period)
        else:
            knots = clamped_knots(self.a, self.b, interior, self.k)
            control, _ = lsq_fit_fixed_knots(self.inp, knots, self.k)
        curve = BSplineCurve(self.k, knots, control, self.closed)
        res = self.inp.w[:, None] * (self.inp.y - evaluate(curve, self.inp.x))
        return curve, res


def fit_smoothing(inp: FitInput, lam: float = DEFAULT_LAMBDA, p_heuristic=None, degree: int = 3,
                  closed: bool = False, domain=None, max_interior: int | None = None,
                  initial_interior=None):
    """Smoothing spline fit with variance-scaled residual bound and knot insertion.

    Parameters
    ----------
    inp : FitInput
        Data. For open fits ``x`` must be strictly increasing.
    lam : float
        Bound multiplier; axis ``j`` must reach ``delta_j <= lam * Var(y_j)``.
    p_heuristic : None, float or callable
        Penalty weight in ``delta + p * P``. ``None`` uses ``delta0 / P0`` of
        the starting knot set; a callable receives ``(delta0, P0)``.
    closed : bool
        Fit a periodic curve over ``domain`` (default ``[0, 1)``).
    max_interior : int, optional
        Knot budget, default ``max(4, m // 3)``.
    initial_interior : array_like, optional
        Starting interior knots. Default none for open fits and ``degree``
        uniform knots for closed fits (a periodic cubic needs four spans).

    Returns
    -------
    curve : BSplineCurve
        One curve carrying all axes of ``y`` as control point columns.
    report : FitReport
    """
    if not lam >= 0:
        raise ValueError("lam must be >= 0")
    k = degree
    if domain is None:
        domain = (0.0, 1.0) if closed else (float(inp.x[0]), float(inp.x[-1]))
    if not closed and np.any(np.diff(inp.x) <= 0):
        raise ValueError("open fits need strictly increasing x")
    fitter = _Fitter(inp, k, closed, domain)
    a, b = domain
    if initial_interior is None:
        initial_interior = a + (b - a) * np.arange(1, k + 1) / (k + 1) if closed else []
    interior = np.sort(np.asarray(initial_interior, dtype=float))
    budget = max(4, inp.m // 3) if max_interior is None else max_interior
    budget = max(budget, len(interior))

    s = smoothing_bound(inp.y, lam)
    curve, res = fitter.fit(interior)
    delta_axes = np.sum(res * res, axis=0)
    pen = knot_penalty(fitter.breakpoints(interior))
    delta0 = float(delta_axes.sum())
    if p_heuristic is None:
        p = delta0 / pen
    elif callable(p_heuristic):
        p = float(p_heuristic(delta0, pen))
    else:
        p = float(p_heuristic)
    history = [delta0]

    while np.any(delta_axes > s) and len(interior) < budget:
        step = _insert_knot(fitter, interior, res, p)
        if step is None:
            break
        interior, curve, res = step
        delta_axes = np.sum(res * res, axis=0)
        history.append(float(delta_axes.sum()))

    pen = knot_penalty(fitter.breakpoints(interior))
    delta = float(delta_axes.sum())
    report = FitReport(delta=delta, penalty=pen, objective=delta + p * pen, p=p, s=s,
                       delta_axes=delta_axes, n_interior=len(interior),
                       converged=bool(np.all(delta_axes <= s)), history=history)
    return curve, report


def _insert_knot(fitter: _Fitter, interior, res, p):
    x = fitter.inp.x
    if fitter.closed:
        x = fitter.a + np.mod(x - fitter.a, fitter.period)
    edges = fitter.breakpoints(interior)
    span_of = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    contrib = np.zeros(len(edges) - 1)
    np.add.at(contrib, span_of, np.sum(res * res, axis=1))
    for span in np.argsort(-contrib, kind="stable"):
        if contrib[span] <= 0:
            return None
        sites = np.unique(x[span_of == span])
        sites = sites[(sites > edges[span]) & (sites < edges[span + 1])]
        if len(sites) < 2:
            continue
        lo, hi = sites[0], sites[-1]

        def objective(tk):
            cand = np.append(interior, tk)
            try:
                _, r = fitter.fit(cand)
            except RankDeficientError:
                return math.inf
            return float(np.sum(r * r)) + p * knot_penalty(fitter.breakpoints(cand))

        tk = golden_section(objective, lo, hi, tol=1e-6 * fitter.period)
        cand = np.sort(np.append(interior, tk))
        try:
            curve, r = fitter.fit(cand)
        except RankDeficientError:
            continue
        return cand, curve, r
    return None


def chord_parameters(points) -> np.ndarray:
    """Cumulative chord length of a closed loop, normalised to ``[0, 1)``."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    total = seg.sum()
    if not total > 0:
        raise ValueError("degenerate ring: zero total chord length")
    return np.concatenate([[0.0], np.cumsum(seg[:-1])]) / total


def fit_closed_boundary(ring, lam: float = DEFAULT_LAMBDA, degree: int = 3, **kwargs):
    """Closed cubic smoothing spline through an ordered ring of 2D points.

    Returns ``(curve, report)``; the curve is periodic on ``[0, 1)``.
    """
    pts = np.asarray(ring, dtype=float)
    if pts.ndim != 2 or len(np.unique(pts, axis=0)) < 4:
        raise ValueError("a closed boundary fit needs at least 4 distinct points")
    x = chord_parameters(pts)
    keep = np.concatenate([[True], np.diff(x) > 0])
    return fit_smoothing(FitInput(x[keep], pts[keep]), lam, degree=degree, closed=True, **kwargs)
