import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnsurf.pointcloud import (GroundTruth, NoiseSpec, XYZParseError, add_noise, gen_cone,
                               gen_scurve, gen_torus, load_xyz, save_xyz)


def test_torus_zero_angles():
    pts, _ = gen_torus(theta_range=(0, 1), gamma_range=(0, 1), n_theta=2, n_gamma=2)
    assert np.allclose(pts[0], [3.0, 0.0, 0.0])


def test_torus_quarter_tube():
    pts, truth = gen_torus(theta_range=(0, math.pi / 2), gamma_range=(0, 1), n_theta=2,
                           n_gamma=2)
    i = int(np.flatnonzero(np.isclose(truth.params[:, 0], math.pi / 2)
                           & np.isclose(truth.params[:, 1], 0))[0])
    assert np.allclose(pts[i], [2.0, 0.0, 1.0], atol=1e-15)


def test_torus_default_grid_has_100_points():
    pts, truth = gen_torus()
    assert pts.shape == (100, 3)
    assert len(truth) == 100
    assert truth.params[:, 0].min() == 0 and truth.params[:, 0].max() == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("kw", [dict(R=1, r=1), dict(R=1, r=2), dict(r=0),
                                dict(theta_range=(1, 1)), dict(n_theta=1)])
def test_torus_rejects_bad_arguments(kw):
    with pytest.raises(ValueError):
        gen_torus(**kw)


def test_torus_ground_truth_matches_formula():
    pts, truth = gen_torus()
    th, ga = truth.params.T
    expect = np.column_stack([(2 + np.cos(th)) * np.cos(ga), (2 + np.cos(th)) * np.sin(ga),
                              np.sin(th)])
    assert np.array_equal(pts, truth.points)
    assert np.max(np.abs(pts - expect)) < 1e-14


@pytest.mark.parametrize("n", [4, 400])
def test_scurve_sizes(n):
    pts, truth = gen_scurve(n)
    assert pts.shape == (n, 3) and np.all(np.isfinite(pts)) and len(truth) == n


def test_scurve_rejects_tiny():
    with pytest.raises(ValueError):
        gen_scurve(3)


@given(st.integers(4, 300), st.integers(0, 2**32))
def test_scurve_points_on_surface(n, seed):
    pts, truth = gen_scurve(n, seed)
    t, v = truth.params.T
    assert np.all(np.abs(t) <= 1.5 * math.pi) and np.all((v >= 0) & (v <= 2))
    oracle = np.column_stack([np.sin(t), v, np.sign(t) * (np.cos(t) - 1)])
    assert np.max(np.abs(pts - oracle)) <= 1e-12


@pytest.mark.parametrize("n_side,count", [(6, 36), (12, 144)])
def test_cone_sizes(n_side, count):
    pts, truth = gen_cone(n_side)
    assert pts.shape == (count, 3) and len(truth) == count


def test_cone_apex_adjacent_has_smallest_radius():
    pts, truth = gen_cone(6)
    radius = np.hypot(pts[:, 0], pts[:, 1])
    lowest = truth.params[:, 1] == truth.params[:, 1].min()
    assert np.all(radius[lowest] <= radius.min() + 1e-15)
    assert np.allclose(radius, pts[:, 2] * math.tan(math.radians(30)))


def test_cone_rejects_small():
    with pytest.raises(ValueError):
        gen_cone(2)


def test_generators_are_deterministic():
    assert np.array_equal(gen_scurve(50, 7)[0], gen_scurve(50, 7)[0])
    assert np.array_equal(gen_torus()[0], gen_torus()[0])


def test_noise_zero_sigma_identity():
    pts, _ = gen_torus()
    assert np.array_equal(add_noise(pts, NoiseSpec(0.0, 3)), pts)


def test_noise_deterministic_per_seed():
    pts, _ = gen_torus()
    a = add_noise(pts, NoiseSpec(0.1, 5))
    assert np.array_equal(a, add_noise(pts, NoiseSpec(0.1, 5)))
    assert not np.array_equal(a, add_noise(pts, NoiseSpec(0.1, 6)))


def test_noise_standard_deviation():
    cloud = np.zeros((10_000, 3))
    noisy = add_noise(cloud, NoiseSpec(0.05, 1))
    assert np.all(np.abs(noisy.std(axis=0) / 0.05 - 1) < 0.05)


def test_noise_unbiased():
    n = 10_000
    cloud = np.tile([1.0, -2.0, 0.5], (n, 1))
    disp = add_noise(cloud, NoiseSpec(0.2, 11)) - cloud
    assert np.all(np.abs(disp.mean(axis=0)) < 3 * 0.2 / math.sqrt(n))


def test_noise_spec_rejects_negative():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


def test_load_simple(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 2 3")
    assert np.array_equal(load_xyz(p), [[0, 0, 0], [1, 2, 3]])


def test_load_skips_comments_and_blanks(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("# header\n\n1 2 3  # trailing\n   \n4 5 6\n")
    assert load_xyz(p).shape == (2, 3)


def test_load_reports_line_number(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("1 2 3\n# c\n1 2\n")
    with pytest.raises(XYZParseError) as err:
        load_xyz(p)
    assert err.value.lineno == 3 and ":3:" in str(err.value)


def test_load_rejects_text(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("1 2 x\n")
    with pytest.raises(XYZParseError):
        load_xyz(p)


def test_torus_round_trip(tmp_path):
    pts, _ = gen_torus()
    save_xyz(pts, tmp_path / "t.xyz")
    assert np.max(np.abs(load_xyz(tmp_path / "t.xyz") - pts)) < 1e-9


@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 3), min_size=1,
                max_size=30))
def test_round_trip_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("xyz") / "c.xyz"
    save_xyz(np.array(rows), path)
    assert np.array_equal(load_xyz(path), np.array(rows))


def test_ground_truth_pairing_and_indexing():
    pts, truth = gen_scurve(10, 0)
    sample = truth[3]
    assert sample.point == tuple(pts[3]) and len(sample.params) == 2
    with pytest.raises(ValueError):
        GroundTruth(np.zeros((2, 2)), np.zeros((3, 3)))
