"""``reconstruct`` command line: run, bench and gen subcommands.

Exit codes: 0 success, 1 stage failure, 2 configuration error.
Log verbosity comes from the ``NNSURF_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import pipeline, pointcloud
from .pipeline import ConfigError, StageError

LOG_ENV = "NNSURF_LOG_LEVEL"
EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("nnsurf")


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reconstruct",
                                description="Reconstruct a triangle mesh from a 3D point cloud.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full pipeline from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, help="run seed (overrides the config)")
    r.add_argument("--dump-embedding", metavar="CSV",
                   help="also write the 2D embedding as u,v lines to this path")

    b = sub.add_parser("bench", help="run a benchmark suite and write a CSV table")
    b.add_argument("--suite", required=True)
    b.add_argument("--csv", required=True)
    b.add_argument("--workers", type=int, help="parallel rows (overrides the suite)")

    g = sub.add_parser("gen", help="write a synthetic point cloud as XYZ")
    g.add_argument("--shape", choices=sorted(pipeline.GENERATORS), required=True)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def cmd_run(args) -> int:
    cfg = pipeline.load_config(args.config)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    art = pipeline.run(cfg)
    if args.dump_embedding:
        pipeline.write_embedding_csv(art.embedding, args.dump_embedding)
    m = art.metrics
    print(f"{m.dataset}: mse={m.mse:.6g} hidden={m.neurons} points={m.points} -> {cfg.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    configs, workers = pipeline.load_suite(args.suite)
    rows = pipeline.benchmark(configs, args.workers or workers)
    pipeline.write_csv(rows, args.csv)
    print(pipeline.format_table(rows))
    return EXIT_STAGE if all(r.failed for r in rows) else EXIT_OK


def cmd_gen(args) -> int:
    if args.noise < 0:
        raise ConfigError("--noise must be >= 0")
    cfg = pipeline.PipelineConfig(
        dataset=pipeline.DatasetSpec(args.shape, noise=args.noise), seed=args.seed)
    cloud, _ = pipeline.load_dataset(cfg)
    pointcloud.save_xyz(cloud, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "bench": cmd_bench, "gen": cmd_gen}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
