"""Point-cloud containers, XYZ I/O, synthetic surfaces and noise.

Clouds are plain ``(n, 3)`` float arrays; row ``i`` of any derived
embedding refers to row ``i`` of the cloud. Generators return the cloud
together with a :class:`GroundTruth` holding the exact parametric samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

MIN_POINTS = 4


class GroundTruthSample(NamedTuple):
    params: tuple[float, float]
    point: tuple[float, float, float]


@dataclass(frozen=True)
class GroundTruth:
    """Parametric coordinates and exact surface points, index-aligned with a cloud."""

    params: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        if len(self.params) != len(self.points):
            raise ValueError("params and points must have equal length")

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i) -> GroundTruthSample:
        return GroundTruthSample(tuple(self.params[i]), tuple(self.points[i]))


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def as_cloud(points, dim: int = 3) -> np.ndarray:
    """Validate and return ``points`` as a float ``(n, dim)`` array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected an (n, {dim}) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


def torus_point(R, r, theta, gamma):
    ct = np.cos(theta)
    return np.stack(
        [(R + r * ct) * np.cos(gamma), (R + r * ct) * np.sin(gamma), r * np.sin(theta)],
        axis=-1,
    )


def gen_torus(R=2.0, r=1.0, theta_range=(0.0, math.pi / 2), gamma_range=(0.0, math.pi / 2),
              n_theta=10, n_gamma=10):
    """Regular ``n_theta x n_gamma`` grid on a torus patch.

    ``theta`` is the tube angle and ``gamma`` the angle around the main axis,
    both ranges inclusive of their end points.
    """
    if not (R > r > 0):
        raise ValueError(f"torus radii need R > r > 0, got R={R}, r={r}")
    for name, (lo, hi) in (("theta_range", theta_range), ("gamma_range", gamma_range)):
        if not hi > lo:
            raise ValueError(f"{name} is empty: {lo}..{hi}")
    if n_theta < 2 or n_gamma < 2:
        raise ValueError("n_theta and n_gamma must be >= 2")
    th, ga = np.meshgrid(np.linspace(*theta_range, n_theta),
                         np.linspace(*gamma_range, n_gamma), indexing="ij")
    params = np.column_stack([th.ravel(), ga.ravel()])
    pts = torus_point(R, r, params[:, 0], params[:, 1])
    return pts, GroundTruth(params, pts.copy())


def scurve_point(t, v):
    t = np.asarray(t, dtype=float)
    return np.stack([np.sin(t), np.broadcast_to(v, t.shape), np.sign(t) * (np.cos(t) - 1.0)], axis=-1)


def gen_scurve(n=400, seed=0):
    """``n`` random samples on the S-curve.

    Parameterisation: ``(sin t, v, sign(t) (cos t - 1))`` with
    ``t`` uniform on ``[-3pi/2, 3pi/2]`` and ``v`` uniform on ``[0, 2]``.
    """
    if n < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points, got {n}")
    rng = np.random.default_rng(seed)
    t = 3.0 * math.pi * (rng.random(n) - 0.5)
    v = 2.0 * rng.random(n)
    params = np.column_stack([t, v])
    pts = scurve_point(t, v)
    return pts, GroundTruth(params, pts.copy())


CONE_HALF_ANGLE = math.radians(30.0)


def cone_point(phi, h):
    rad = np.asarray(h) * math.tan(CONE_HALF_ANGLE)
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), np.broadcast_to(h, np.shape(rad))], axis=-1)


def gen_cone(n_side=6, phi_range=(0.0, math.pi)):
    """``n_side**2`` grid samples on a cone patch (half-angle 30 deg, height 1).

    Apex at the origin, axis along +z. Heights run from ``1/n_side`` to 1 so
    the apex itself is never sampled.
    """
    if n_side < 3:
        raise ValueError(f"n_side must be >= 3, got {n_side}")
    h, phi = np.meshgrid(np.linspace(1.0 / n_side, 1.0, n_side),
                         np.linspace(*phi_range, n_side), indexing="ij")
    params = np.column_stack([phi.ravel(), h.ravel()])
    pts = cone_point(params[:, 0], params[:, 1])
    return pts, GroundTruth(params, pts.copy())


def add_noise(cloud, spec: NoiseSpec) -> np.ndarray:
    """Isotropic Gaussian jitter of standard deviation ``spec.sigma``."""
    cloud = as_cloud(cloud)
    if spec.sigma == 0:
        return cloud.copy()
    rng = np.random.default_rng(spec.seed)
    return cloud + rng.normal(0.0, spec.sigma, size=cloud.shape)


class XYZParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def load_xyz(path) -> np.ndarray:
    """Read whitespace separated ``x y z`` lines; blanks and ``#`` comments are skipped."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise XYZParseError(path, lineno, f"expected 3 values, got {len(fields)}")
            try:
                xyz = [float(f) for f in fields]
            except ValueError as exc:
                raise XYZParseError(path, lineno, str(exc)) from None
            if not all(math.isfinite(c) for c in xyz):
                raise XYZParseError(path, lineno, "non-finite coordinate")
            rows.append(xyz)
    return np.array(rows, dtype=float).reshape(-1, 3)


def save_xyz(cloud, path) -> None:
    cloud = as_cloud(cloud)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for x, y, z in cloud.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
