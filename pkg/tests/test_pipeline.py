import csv
import dataclasses
import json

import numpy as np
import pytest

from nnsurf import neuralnet, pipeline, pointcloud
from nnsurf.embedding import Embedding2D, isomap
from nnsurf.meshgen import euler_characteristic, load_obj
from nnsurf.neuralnet import Network, Topology, TrainConfig
from nnsurf.pipeline import (CSV_COLUMNS, ConfigError, DatasetSpec, PipelineConfig, StageError,
                             benchmark, config_from_dict, evaluate_vs_truth, load_config,
                             load_suite, rebuild_mesh_from_disk, run, write_csv)

PLANE = np.array([0.3, -0.5, 1.0])


def torus_cfg(tmp_path=None, **kw):
    return PipelineConfig(dataset=DatasetSpec("torus"), out=str(tmp_path) if tmp_path else None,
                          **kw)


def affine_net(a, c):
    """Linear net computing ``a @ (x, y) + c`` exactly."""
    topo = Topology((2,), "linear", "linear")
    return Network(topo, (np.eye(2), np.asarray(a, float)), (np.zeros(2), np.asarray(c, float)))


def constant_net(value):
    topo = Topology((1,), "linear", "linear")
    return Network(topo, (np.zeros((1, 2)), np.zeros((3, 1))),
                   (np.zeros(1), np.asarray(value, float)))


# evaluation

def test_evaluate_exact_net_is_zero():
    xy = np.random.default_rng(0).uniform(-1, 1, (30, 2))
    a = np.array([[1.0, 0.0], [0.0, 1.0], [0.3, -0.5]])
    truth = xy @ a.T + [0, 0, 2]
    assert evaluate_vs_truth(affine_net(a, [0, 0, 2]), xy, truth) == pytest.approx(0, abs=1e-28)


def test_evaluate_constant_net_gives_variance():
    rng = np.random.default_rng(1)
    truth = rng.normal(size=(20_000, 3))
    xy = rng.normal(size=(20_000, 2))
    err = evaluate_vs_truth(constant_net(truth.mean(axis=0)), xy, truth)
    assert err == pytest.approx(np.var(truth, axis=0).mean(), rel=1e-12)
    assert err == pytest.approx(1.0, rel=0.03)


def test_evaluate_matches_mse():
    rng = np.random.default_rng(2)
    net = neuralnet.init_network(Topology((4, 3)), 0)
    xy, truth = rng.normal(size=(50, 2)), rng.normal(size=(50, 3))
    emb = Embedding2D(xy, np.arange(50), 0.0)
    assert evaluate_vs_truth(net, emb, truth) == neuralnet.mse(net, xy, truth)


def test_evaluate_length_mismatch():
    with pytest.raises(ValueError, match="truth"):
        evaluate_vs_truth(constant_net([0, 0, 0]), np.zeros((4, 2)), np.zeros((5, 3)))


# full runs

def test_planar_cloud_end_to_end(tmp_path):
    rng = np.random.default_rng(0)
    uv = rng.uniform(-1, 1, (200, 2))
    cloud = np.column_stack([uv, -(PLANE[0] * uv[:, 0] + PLANE[1] * uv[:, 1])])
    pointcloud.save_xyz(cloud, tmp_path / "plane.xyz")
    cfg = PipelineConfig(dataset=DatasetSpec("xyz", path=str(tmp_path / "plane.xyz")),
                         train=TrainConfig(hidden_activation="linear"), out=None)
    art = run(cfg, write=False)
    dist = np.abs(art.mesh3.vertices @ PLANE) / np.linalg.norm(PLANE)
    assert dist.max() < 1e-2
    assert euler_characteristic(art.mesh3.triangles) == 1


def test_torus_defaults_complete(tmp_path):
    art = run(torus_cfg(tmp_path))
    m = art.metrics
    assert m.points == 100 and np.isfinite(m.mse) and m.mse >= 0
    assert 1 <= m.layers <= 3
    assert euler_characteristic(art.mesh3.triangles) == 1
    for name in ("cloud.xyz", "embedding.csv", "network.json", "train_report.json", "rings.csv",
                 "curve.json", "curve_polyline.csv", "mesh.obj", "mesh.ply", "metrics.json",
                 "timing.json"):
        assert (tmp_path / name).is_file(), name
    assert json.loads((tmp_path / "metrics.json").read_text())["mse"] == m.mse


def test_run_is_byte_deterministic(tmp_path):
    run(torus_cfg(tmp_path / "a", seed=5))
    run(torus_cfg(tmp_path / "b", seed=5))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        if name != "timing.json":
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_mesh_rebuilds_from_disk(tmp_path):
    cfg = torus_cfg(tmp_path, seed=1)
    art = run(cfg)
    rebuilt = rebuild_mesh_from_disk(cfg, tmp_path)
    assert np.array_equal(rebuilt.triangles, art.mesh3.triangles)
    assert np.allclose(rebuilt.vertices, art.mesh3.vertices, rtol=0, atol=1e-12)
    disk = load_obj(tmp_path / "mesh.obj")
    assert np.array_equal(disk.vertices, art.mesh3.vertices)


def test_seed_changes_scurve_sample():
    cfg = PipelineConfig(dataset=DatasetSpec("scurve", params={"n": 50}))
    a, _ = pipeline.load_dataset(cfg)
    b, _ = pipeline.load_dataset(cfg.with_seed(1))
    assert not np.array_equal(a, b)
    assert np.array_equal(a, pipeline.load_dataset(cfg)[0])


def test_noise_raises_ground_truth_error():
    clean, noisy = [], []
    for s in range(5):
        base = torus_cfg(seed=s, surface=False)
        clean.append(run(base, write=False).metrics.mse)
        noisy.append(run(dataclasses.replace(
            base, dataset=DatasetSpec("torus", noise=0.1)), write=False).metrics.mse)
    assert np.mean(clean) <= np.mean(noisy)


# stage errors

def test_disconnected_graph_reports_stage_and_hint():
    cloud = np.concatenate([np.random.default_rng(0).normal(size=(30, 3)),
                            100 + np.random.default_rng(1).normal(size=(30, 3))])
    with pytest.raises(StageError) as info:
        with pipeline._Stage("embed"):
            isomap(cloud, 5)
    assert info.value.stage == "embed" and "embedding.k" in info.value.hint


def test_missing_xyz_is_load_stage_error(tmp_path):
    cfg = PipelineConfig(dataset=DatasetSpec("xyz", path=str(tmp_path / "nope.xyz")))
    with pytest.raises(StageError) as info:
        run(cfg, write=False)
    assert info.value.stage == "load"
    assert "dataset.path" in str(info.value)


# configuration

def test_config_defaults_and_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 7\n[dataset]\nshape = "scurve"\nnoise = 0.05\n'
                    '[dataset.params]\nn = 300\n[network]\nepochs = 50\n'
                    '[boundary]\ndepth = 3\n[spline]\nlambda = 1.5\n')
    cfg = load_config(path)
    assert cfg.seed == 7 and cfg.dataset.shape == "scurve" and cfg.dataset.params == {"n": 300}
    assert cfg.train.epochs == 50 and cfg.train.early_stop_patience == 3
    assert cfg.boundary.depth == 3 and cfg.lam == 1.5
    assert cfg.k == 12 and cfg.train.max_layers == 3 and cfg.train.max_neurons == 6


def test_config_round_trip():
    cfg = config_from_dict({"seed": 3, "dataset": {"shape": "cone"}, "boundary": {"c2": 0.2}})
    assert config_from_dict(pipeline.config_to_dict(cfg)) == cfg


def test_relative_xyz_path(tmp_path):
    (tmp_path / "c.toml").write_text('[dataset]\nshape = "xyz"\npath = "pts.xyz"\n')
    assert load_config(tmp_path / "c.toml").dataset.path == str(tmp_path / "pts.xyz")


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"dataset": {"colour": "red"}},
    {"dataset": {"shape": "sphere"}},
    {"dataset": {"shape": "xyz"}},
    {"dataset": {"noise": -1}},
    {"embedding": {"method": "lle"}},
    {"embedding": {"k": 0}},
    {"boundary": {"c1": 0, "c2": 0}},
    {"spline": {"lambda": 0}},
    {"network": {"learning_rate": -1}},
    {"mesh": {"spacing": 0}},
])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_bad_toml(tmp_path):
    (tmp_path / "c.toml").write_text("seed = = 1")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(tmp_path / "c.toml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_seed_fan_out_is_stable():
    s = PipelineConfig(seed=11).seeds()
    assert s == PipelineConfig(seed=11).seeds()
    assert len(set(s.values())) == 3 and s != PipelineConfig(seed=12).seeds()


# benchmark

def test_benchmark_rows_and_csv(tmp_path):
    cfgs = [torus_cfg(seed=0, surface=False),
            PipelineConfig(dataset=DatasetSpec("torus", params={"n_theta": 1}, name="empty"),
                           surface=False),
            PipelineConfig(dataset=DatasetSpec("cone", name="cone"), surface=False)]
    rows = benchmark(cfgs)
    assert [r.dataset for r in rows] == ["torus", "empty", "cone"]
    assert [r.failed for r in rows] == [False, True, False]
    assert np.isnan(rows[1].mse) and rows[1].error
    write_csv(rows, tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == CSV_COLUMNS
    assert ",".join(table[0]) == "dataset,method,points,mse,layers,neurons,epochs,seconds"
    assert len(table) == 4 and float(table[1][3]) == rows[0].mse
    text = pipeline.format_table(rows)
    assert "FAILED" in text and "# empty:" in text


def test_benchmark_parallel_matches_serial():
    cfgs = [torus_cfg(seed=s, surface=False) for s in range(3)]
    serial = benchmark(cfgs, workers=1)
    parallel = benchmark(cfgs, workers=2)
    assert [r.mse for r in serial] == [r.mse for r in parallel]


def test_benchmark_needs_configs():
    with pytest.raises(ValueError):
        benchmark([])


def test_suite_parsing(tmp_path):
    (tmp_path / "s.toml").write_text(
        'workers = 2\n[[run]]\nseed = 1\n[run.dataset]\nshape = "torus"\n'
        '[[run]]\nsurface = true\n[run.dataset]\nshape = "cone"\n')
    cfgs, workers = load_suite(tmp_path / "s.toml")
    assert workers == 2 and len(cfgs) == 2
    assert cfgs[0].seed == 1 and not cfgs[0].surface and cfgs[1].surface
    (tmp_path / "e.toml").write_text("workers = 1\n")
    with pytest.raises(ConfigError):
        load_suite(tmp_path / "e.toml")


def test_metrics_row_rejects_negative_mse():
    with pytest.raises(ValueError):
        pipeline.MetricsRow("x", "isomap", 1, -1.0, 1, "1", 1, 0.0)
