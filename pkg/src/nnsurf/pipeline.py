"""End-to-end reconstruction runs, TOML configuration and the benchmark harness.

A run goes embed -> train -> boundary rings -> closed spline -> interior
resampling -> Delaunay -> trim -> lift, writing every intermediate result
to the output directory. Trimming happens in 2D before lifting; lifting
keeps the triangle list, so the order does not change the result.

Config schema (TOML, every key optional)::

    seed = 0
    out = "out"
    retrain = false

    [dataset]
    shape = "torus"        # torus | scurve | cone | xyz
    path = "cloud.xyz"     # only for shape = "xyz"
    noise = 0.0            # Gaussian sigma added to generated points
    name = "torus"         # label for metrics; defaults to shape
    [dataset.params]       # forwarded to the generator
    n_theta = 10

    [embedding]
    method = "isomap"
    k = 12
    shortest_path = "dijkstra"

    [network]
    max_layers = 3
    max_neurons = 6
    epochs = 20
    early_stop = 3
    learning_rate = 0.1
    hidden_activation = "tanh"
    output_activation = "linear"
    online = true

    [boundary]
    corners = 8
    depth = 2
    c1 = 1.0
    c2 = 0.05
    k = 12                 # defaults to embedding.k
    margin = 0.1

    [spline]
    lambda = 2.4           # choosing it is not automatic; inspect curve.json

    [mesh]
    spacing = 0.1          # defaults to median nearest-neighbour distance
    polygon_samples = 64   # defaults to 8 x control points
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import boundary, embedding, meshgen, neuralnet, pointcloud, splinefit
from .embedding import DisconnectedGraphError, Embedding2D
from .neuralnet import Network, TrainConfig, TrainReport, TrainingDivergedError
from .pointcloud import GroundTruth, NoiseSpec

log = logging.getLogger(__name__)

GENERATORS = {"torus": pointcloud.gen_torus, "scurve": pointcloud.gen_scurve,
              "cone": pointcloud.gen_cone}
METHODS = ("isomap",)
CSV_COLUMNS = ("dataset", "method", "points", "mse", "layers", "neurons", "epochs", "seconds")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and a remediation hint."""

    def __init__(self, stage: str, cause: Exception, hint: str):
        super().__init__(f"stage '{stage}' failed: {cause}. Hint: {hint}")
        self.stage = stage
        self.hint = hint
        self.cause = cause


@dataclass(frozen=True)
class DatasetSpec:
    shape: str = "torus"
    params: dict = field(default_factory=dict)
    noise: float = 0.0
    path: str | None = None
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or self.shape


@dataclass(frozen=True)
class BoundaryConfig:
    corners: int = 8
    depth: int = 2
    c1: float = 1.0
    c2: float = 0.05
    k: int | None = None
    margin: float = 0.1


@dataclass(frozen=True)
class MeshConfig:
    spacing: float | None = None
    polygon_samples: int | None = None


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetSpec = DatasetSpec()
    method: str = "isomap"
    k: int = 12
    shortest_path: str = "dijkstra"
    train: TrainConfig = TrainConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    lam: float = splinefit.DEFAULT_LAMBDA
    mesh: MeshConfig = MeshConfig()
    retrain: bool = False
    out: str | None = "out"
    seed: int = 0
    surface: bool = True

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=int(seed))

    def seeds(self) -> dict[str, int]:
        """Named sub-seeds fanned out from the single run seed."""
        state = np.random.SeedSequence(self.seed & (2**64 - 1)).generate_state(3, np.uint64)
        return {"dataset": int(state[0]), "noise": int(state[1]), "train": int(state[2])}


_SECTIONS = {
    "dataset": {"shape", "params", "noise", "path", "name"},
    "embedding": {"method", "k", "shortest_path"},
    "network": {"max_layers", "max_neurons", "epochs", "early_stop", "learning_rate",
                "hidden_activation", "output_activation", "online"},
    "boundary": {"corners", "depth", "c1", "c2", "k", "margin"},
    "spline": {"lambda"},
    "mesh": {"spacing", "polygon_samples"},
}
_TOP = {"seed", "out", "retrain", "surface"}


def config_from_dict(doc: dict, base_dir: Path | None = None) -> PipelineConfig:
    """Build and validate a :class:`PipelineConfig` from a parsed TOML document."""
    unknown = set(doc) - _TOP - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for sec, keys in _SECTIONS.items():
        part = doc.get(sec, {})
        if not isinstance(part, dict):
            raise ConfigError(f"[{sec}] must be a table")
        extra = set(part) - keys
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
    ds, emb, net = doc.get("dataset", {}), doc.get("embedding", {}), doc.get("network", {})
    bd, sp, me = doc.get("boundary", {}), doc.get("spline", {}), doc.get("mesh", {})
    try:
        path = ds.get("path")
        if path is not None and base_dir is not None and not Path(path).is_absolute():
            path = str(base_dir / path)
        dataset = DatasetSpec(ds.get("shape", "torus"), dict(ds.get("params", {})),
                              float(ds.get("noise", 0.0)), path, ds.get("name"))
        train = TrainConfig(
            max_layers=int(net.get("max_layers", 3)), max_neurons=int(net.get("max_neurons", 6)),
            epochs=int(net.get("epochs", 20)), early_stop_patience=int(net.get("early_stop", 3)),
            learning_rate=net.get("learning_rate"),
            hidden_activation=net.get("hidden_activation", "tanh"),
            output_activation=net.get("output_activation", "linear"),
            online=bool(net.get("online", True)))
        cfg = PipelineConfig(
            dataset=dataset, method=emb.get("method", "isomap"), k=int(emb.get("k", 12)),
            shortest_path=emb.get("shortest_path", "dijkstra"), train=train,
            boundary=BoundaryConfig(int(bd.get("corners", 8)), int(bd.get("depth", 2)),
                                    float(bd.get("c1", 1.0)), float(bd.get("c2", 0.05)),
                                    bd.get("k"), float(bd.get("margin", 0.1))),
            lam=float(sp.get("lambda", splinefit.DEFAULT_LAMBDA)),
            mesh=MeshConfig(me.get("spacing"), me.get("polygon_samples")),
            retrain=bool(doc.get("retrain", False)), out=doc.get("out", "out"),
            seed=int(doc.get("seed", 0)), surface=bool(doc.get("surface", True)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    ds = cfg.dataset
    if ds.shape == "xyz":
        if not ds.path:
            raise ConfigError("dataset.shape = 'xyz' needs dataset.path")
    elif ds.shape not in GENERATORS:
        raise ConfigError(f"unknown dataset shape {ds.shape!r}; use one of "
                          f"{sorted(GENERATORS) + ['xyz']}")
    if not ds.noise >= 0:
        raise ConfigError("dataset.noise must be >= 0")
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown embedding method {cfg.method!r}; available: {METHODS}")
    if cfg.shortest_path not in ("dijkstra", "floyd-warshall"):
        raise ConfigError(f"unknown shortest_path {cfg.shortest_path!r}")
    if cfg.k < 1:
        raise ConfigError("embedding.k must be >= 1")
    b = cfg.boundary
    if b.corners < 3 or b.depth < 1 or b.margin < 0:
        raise ConfigError("boundary needs corners >= 3, depth >= 1 and margin >= 0")
    try:
        boundary.PathWeights(b.c1, b.c2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.lam > 0:
        raise ConfigError("spline.lambda must be > 0")
    if cfg.mesh.spacing is not None and not cfg.mesh.spacing > 0:
        raise ConfigError("mesh.spacing must be > 0")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(doc, path.parent)


@dataclass
class MetricsRow:
    dataset: str
    method: str
    points: int
    mse: float
    layers: int
    neurons: str
    epochs: int
    seconds: float
    error: str | None = None

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError("mse must be >= 0")

    @property
    def failed(self) -> bool:
        return self.error is not None

    def csv_row(self) -> list[str]:
        return [self.dataset, self.method, str(self.points), repr(self.mse), str(self.layers),
                self.neurons, str(self.epochs), f"{self.seconds:.3f}"]


@dataclass
class RunArtifacts:
    cloud: np.ndarray
    truth: GroundTruth | None
    embedding: Embedding2D
    network: Network
    report: TrainReport
    rings: boundary.RingSample | None = None
    curve: splinefit.BSplineCurve | None = None
    curve_report: splinefit.FitReport | None = None
    polygon: meshgen.Polygon | None = None
    mesh2: meshgen.TriMesh2 | None = None
    mesh3: meshgen.TriMesh3 | None = None
    metrics: MetricsRow | None = None


_HINTS = {
    "load": "check dataset.shape, dataset.params and dataset.path",
    "embed": "increase embedding.k or remove isolated points",
    "train": "lower network.learning_rate or change activations",
    "boundary": "increase boundary.k or boundary.margin, or lower boundary.depth",
    "spline": "raise spline.lambda or boundary.depth so the ring has more points",
    "mesh": "adjust mesh.spacing or mesh.polygon_samples",
    "export": "check that the output directory is writable",
}


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            log.debug("stage %s done in %.3fs", self.name, time.perf_counter() - self.t0)
            return False
        if isinstance(exc, (StageError, KeyboardInterrupt)):
            return False
        hint = _HINTS[self.name]
        if isinstance(exc, DisconnectedGraphError) and exc.suggested_k is not None:
            hint = f"set embedding.k >= {exc.suggested_k}"
        elif isinstance(exc, TrainingDivergedError):
            hint = _HINTS["train"]
        raise StageError(self.name, exc, hint) from exc


def load_dataset(cfg: PipelineConfig):
    """Return ``(cloud, truth)``; ``truth`` is ``None`` for XYZ input."""
    ds = cfg.dataset
    seeds = cfg.seeds()
    if ds.shape == "xyz":
        cloud, truth = pointcloud.load_xyz(ds.path), None
    else:
        params = dict(ds.params)
        if ds.shape == "scurve":
            params.setdefault("seed", seeds["dataset"])
        cloud, truth = GENERATORS[ds.shape](**params)
    if ds.noise > 0:
        cloud = pointcloud.add_noise(cloud, NoiseSpec(ds.noise, seeds["noise"]))
    return cloud, truth


def evaluate_vs_truth(net: Network, emb, truth) -> float:
    """Per-scalar MSE between lifted embedding coordinates and exact surface points."""
    coords = emb.coords if isinstance(emb, Embedding2D) else np.asarray(emb, float)
    pts = truth.points if isinstance(truth, GroundTruth) else np.asarray(
        [s.point if hasattr(s, "point") else s for s in truth], float)
    if len(coords) != len(pts):
        raise ValueError(f"embedding has {len(coords)} points but truth has {len(pts)}")
    return neuralnet.mse(net, coords, pts)


def _train_cfg(cfg: PipelineConfig) -> TrainConfig:
    return dataclasses.replace(cfg.train, seed=cfg.seeds()["train"])


def fit_network(cfg: PipelineConfig, coords, cloud):
    tcfg = _train_cfg(cfg)
    best, report = neuralnet.adaptive_search(coords, cloud, tcfg)
    net = neuralnet.finalize(best, report, coords, cloud, retrain=cfg.retrain, cfg=tcfg)
    return net, report


def ring_points(coords, rings: boundary.RingSample) -> np.ndarray:
    """Union of all ring points ordered along the outermost ring.

    Each point is projected onto the closed polyline of the first ring and
    sorted by the arc length of its projection, so deeper rings slot in
    between outer points instead of being visited separately.
    """
    coords = np.asarray(coords, float)
    outer = coords[list(rings.rings[0].indices)]
    pts = coords[rings.indices]
    a, b = outer, np.roll(outer, -1, axis=0)
    seg = b - a
    seg_len = np.linalg.norm(seg, axis=1)
    start = np.concatenate([[0.0], np.cumsum(seg_len)[:-1]])
    rel = pts[:, None, :] - a[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(seg_len > 0, np.einsum("ijk,jk->ij", rel, seg) / seg_len**2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    dist = np.linalg.norm(rel - t[..., None] * seg[None], axis=2)
    j = np.argmin(dist, axis=1)
    arc = start[j] + t[np.arange(len(pts)), j] * seg_len[j]
    return pts[np.lexsort((dist[np.arange(len(pts)), j], arc))]


def build_mesh(cfg: PipelineConfig, coords, rings: boundary.RingSample, net: Network):
    """Stages after the boundary rings: spline, polygon, resampling, Delaunay, trim, lift."""
    with _Stage("spline"):
        if not rings.rings:
            raise ValueError("no boundary ring was found")
        curve, curve_report = splinefit.fit_closed_boundary(ring_points(coords, rings), cfg.lam)
        if curve_report.warning:
            log.warning("spline knot budget exhausted before the smoothing bound was met")
    with _Stage("mesh"):
        poly = meshgen.sample_polygon(curve, cfg.mesh.polygon_samples)
        spacing = cfg.mesh.spacing or meshgen.median_nn_spacing(coords)
        pts2 = meshgen.resample_interior(poly, spacing)
        mesh2 = meshgen.trim(meshgen.delaunay(pts2), poly)
        mesh3 = meshgen.lift(mesh2, net)
    return curve, curve_report, poly, mesh2, mesh3


def run(config: PipelineConfig, write: bool = True) -> RunArtifacts:
    """Execute the whole reconstruction and (optionally) write artifacts to ``config.out``."""
    validate(config)
    t0 = time.perf_counter()
    with _Stage("load"):
        cloud, truth = load_dataset(config)
        cloud = pointcloud.as_cloud(cloud)
    with _Stage("embed"):
        emb = embedding.isomap(cloud, config.k, config.shortest_path)
    with _Stage("train"):
        net, report = fit_network(config, emb.coords, cloud)
    art = RunArtifacts(cloud, truth, emb, net, report)
    if config.surface:
        with _Stage("boundary"):
            b = config.boundary
            art.rings = boundary.sample_rings(
                emb.coords, b.depth, b.corners, boundary.PathWeights(b.c1, b.c2),
                b.k or config.k, b.margin)
            if art.rings.exhausted:
                log.warning("only %d of %d boundary rings found", len(art.rings.rings), b.depth)
        (art.curve, art.curve_report, art.polygon, art.mesh2,
         art.mesh3) = build_mesh(config, emb.coords, art.rings, net)
    mse = evaluate_vs_truth(net, emb, truth) if truth is not None else report.final_mse
    art.metrics = MetricsRow(config.dataset.label, config.method, len(cloud), float(mse),
                             len(report.best.hidden), "-".join(map(str, report.best.hidden)),
                             report.best.epochs_run, time.perf_counter() - t0)
    if write and config.out:
        with _Stage("export"):
            write_artifacts(art, Path(config.out))
    return art


def write_embedding_csv(emb: Embedding2D, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("u,v\n")
        for u, v in emb.coords.tolist():
            fh.write(f"{u!r},{v!r}\n")


def load_embedding_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def load_rings_csv(path) -> boundary.RingSample:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=int, ndmin=2)
    rings = []
    for d in sorted(set(rows[:, 0].tolist())):
        sel = rows[rows[:, 0] == d]
        sel = sel[np.argsort(sel[:, 1])]
        rings.append(boundary.BoundaryRing(int(d), tuple(sel[:, 2].tolist())))
    return boundary.RingSample(rings)


def _json_dump(obj, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_artifacts(art: RunArtifacts, out: Path) -> None:
    """Write every stage output. Wall times go to ``timing.json`` only, so all
    other files are byte-stable for a fixed config and seed."""
    out.mkdir(parents=True, exist_ok=True)
    pointcloud.save_xyz(art.cloud, out / "cloud.xyz")
    write_embedding_csv(art.embedding, out / "embedding.csv")
    neuralnet.save_network(art.network, out / "network.json")
    _json_dump(art.report.to_dict(), out / "train_report.json")
    if art.rings is not None:
        boundary.save_rings_csv(art.rings, out / "rings.csv")
    if art.curve is not None:
        splinefit.save_curve(art.curve, out / "curve.json")
        splinefit.save_polyline_csv(art.curve, out / "curve_polyline.csv")
    if art.mesh3 is not None:
        meshgen.export_obj(art.mesh3, out / "mesh.obj")
        meshgen.export_ply(art.mesh3, out / "mesh.ply")
    m = art.metrics
    _json_dump({"dataset": m.dataset, "method": m.method, "points": m.points, "mse": m.mse,
                "layers": m.layers, "neurons": m.neurons, "epochs": m.epochs,
                "final_mse": art.report.final_mse}, out / "metrics.json")
    _json_dump({"seconds": m.seconds}, out / "timing.json")


def rebuild_mesh_from_disk(config: PipelineConfig, out) -> meshgen.TriMesh3:
    """Re-run the stages after ring sampling from the files a previous run wrote."""
    out = Path(out)
    coords = load_embedding_csv(out / "embedding.csv")
    net = neuralnet.load_network(out / "network.json")
    rings = load_rings_csv(out / "rings.csv")
    return build_mesh(config, coords, rings, net)[4]


def _bench_one(cfg: PipelineConfig) -> MetricsRow:
    t0 = time.perf_counter()
    try:
        return run(dataclasses.replace(cfg, surface=cfg.surface), write=False).metrics
    except Exception as exc:  # failed rows are recorded, not raised
        log.error("benchmark row %s failed: %s", cfg.dataset.label, exc)
        return MetricsRow(cfg.dataset.label, cfg.method, 0, math.nan, 0, "", 0,
                          time.perf_counter() - t0, error=str(exc))


def benchmark(configs, workers: int = 1) -> list[MetricsRow]:
    """Run each config (embedding and network only unless ``surface`` is set).

    Rows come back in config order whatever the worker count.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("benchmark needs at least one config")
    if workers <= 1:
        return [_bench_one(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_bench_one, configs))


def load_suite(path) -> tuple[list[PipelineConfig], int]:
    """Parse a benchmark suite: ``workers`` plus an array of ``[[run]]`` tables.

    Each run table uses the single-run schema; ``surface`` defaults to false.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read suite {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    runs = doc.get("run", [])
    if not isinstance(runs, list) or not runs:
        raise ConfigError("suite needs at least one [[run]] table")
    configs = []
    for r in runs:
        r = dict(r)
        r.setdefault("surface", False)
        configs.append(config_from_dict(r, path.parent))
    return configs, int(doc.get("workers", 1))


def write_csv(rows, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def format_table(rows) -> str:
    """Aligned plain-text table of benchmark rows; failed rows show their error."""
    body = []
    for r in rows:
        cells = r.csv_row()
        if r.failed:
            cells[3] = "FAILED"
        body.append(cells)
    widths = [max(len(h), *(len(c[i]) for c in body)) for i, h in enumerate(CSV_COLUMNS)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(CSV_COLUMNS, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(cells, widths)) for cells in body]
    for r in rows:
        if r.failed:
            lines.append(f"# {r.dataset}: {r.error}")
    return "\n".join(lines)


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    t, b = cfg.train, cfg.boundary
    doc = {
        "seed": cfg.seed, "retrain": cfg.retrain, "surface": cfg.surface,
        "dataset": {k: v for k, v in {"shape": cfg.dataset.shape, "params": cfg.dataset.params,
                                      "noise": cfg.dataset.noise, "path": cfg.dataset.path,
                                      "name": cfg.dataset.name}.items() if v is not None},
        "embedding": {"method": cfg.method, "k": cfg.k, "shortest_path": cfg.shortest_path},
        "network": {k: v for k, v in {
            "max_layers": t.max_layers, "max_neurons": t.max_neurons, "epochs": t.epochs,
            "early_stop": t.early_stop_patience, "learning_rate": t.learning_rate,
            "hidden_activation": t.hidden_activation, "output_activation": t.output_activation,
            "online": t.online}.items() if v is not None},
        "boundary": {k: v for k, v in dataclasses.asdict(b).items() if v is not None},
        "spline": {"lambda": cfg.lam},
        "mesh": {k: v for k, v in dataclasses.asdict(cfg.mesh).items() if v is not None},
    }
    if cfg.out is not None:
        doc["out"] = cfg.out
    return doc
