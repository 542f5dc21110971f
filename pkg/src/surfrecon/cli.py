"""Command line entry point: prepare, train, reconstruct, evaluate, gen-analytic."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import WORKERS_ENV, load_config
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    HyperparameterMismatch,
    InputError,
    ReconError,
    VersionMismatch,
)

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("surfrecon")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags below override its values")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config value (repeatable)")
    p.add_argument("--depth", type=int, help="octree depth (octree.depth)")
    p.add_argument("-v", "--verbose", action="store_true", help="log phase timings and progress")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="surfrecon",
        description="Octree-vertex surface reconstruction from oriented point clouds.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="precompute a training dataset from a cloud and its mesh")
    p.add_argument("cloud", help="oriented point cloud (.ply or .xyzn)")
    p.add_argument("gt", help="ground-truth mesh (.ply or .obj) used to label vertices")
    p.add_argument("out", help="dataset directory to create")
    p.add_argument("--crop-vertices", type=int, help="split into vertex boxes of about this size")
    _common(p)

    p = sub.add_parser("train", help="train a classifier checkpoint on prepared datasets")
    p.add_argument("datasets", nargs="+", help="dataset directories from 'prepare'")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--curve", help="CSV path for the loss/validation curve")
    p.add_argument("--init", help="checkpoint to start from instead of a fresh initialization")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    _common(p)

    p = sub.add_parser("reconstruct", help="reconstruct a mesh from an oriented point cloud")
    p.add_argument("cloud")
    p.add_argument("out", help="output mesh (.ply or .obj)")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--checkpoint", help="trained classifier checkpoint")
    mode.add_argument("--baseline", action="store_true",
                      help="use the weighted normal-vote classifier instead of a network")
    p.add_argument("--labels-out", help="also write the merged vertex labels")
    p.add_argument("--workers", type=int, help=f"parallel parts (default: ${WORKERS_ENV} or 1)")
    p.add_argument("--max-batch", type=int, help="point cap per part (partition.max_batch)")
    p.add_argument("--max-vertex-batch", type=int, help="vertex cap per part")
    _common(p)

    p = sub.add_parser("evaluate", help="compare a reconstruction against ground truth")
    p.add_argument("--pred-mesh")
    p.add_argument("--gt-mesh")
    p.add_argument("--pred-labels")
    p.add_argument("--gt-labels")
    p.add_argument("--report", help="write the JSON report here (default: stdout only)")
    p.add_argument("--samples", type=int, help="surface samples per mesh")
    _common(p)

    p = sub.add_parser("gen-analytic", help="emit an analytic test cloud with exact normals")
    p.add_argument("shape", choices=["sphere", "torus", "plane", "ellipsoid"])
    p.add_argument("out", help="output cloud (.ply or .xyzn)")
    p.add_argument("--mesh-out", help="also write a reference mesh")
    p.add_argument("--points", type=int)
    p.add_argument("--noise", type=float, help="Gaussian noise std relative to the shape's extent")
    p.add_argument("--seed", type=int)
    _common(p)
    return ap


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    flag_keys = {
        "depth": "octree.depth", "crop_vertices": "train.crop_vertices", "steps": "train.steps",
        "lr": "train.lr", "workers": "runtime.workers", "max_batch": "partition.max_batch",
        "max_vertex_batch": "partition.max_vertex_batch", "samples": "evaluate.samples",
        "points": "data.points", "noise": "data.noise",
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    seed = getattr(args, "seed", None)
    if seed is not None:
        out["train.seed" if args.command == "train" else "data.seed"] = str(seed)
    return out


def _cmd_prepare(args, cfg):
    from .pipeline import prepare_dataset
    from .pointcloud_io import load_mesh, load_point_cloud

    cloud = load_point_cloud(args.cloud)
    gt = load_mesh(args.gt)
    out = prepare_dataset(cloud, gt, cfg, args.out)
    log.info("dataset written to %s", out)


def _cmd_train(args, cfg):
    from .network import load_checkpoint
    from .pipeline import train_from_datasets

    init = load_checkpoint(args.init) if args.init else None
    train_from_datasets(args.datasets, cfg, args.out, args.curve, init=init)
    log.info("checkpoint written to %s", args.out)


def _cmd_reconstruct(args, cfg):
    from .pipeline import reconstruct_file

    rec = reconstruct_file(args.cloud, args.out, cfg, None if args.baseline else args.checkpoint,
                           cfg.runtime.workers, args.labels_out)
    log.info("%d parts, %d vertices, %d triangles; timings %s", len(rec.parts), len(rec.labels),
             len(rec.mesh.triangles), {k: round(v, 3) for k, v in rec.timings.items()})


def _cmd_evaluate(args, cfg):
    from .pipeline import evaluate_files

    metrics = evaluate_files(cfg, args.pred_mesh, args.gt_mesh, args.pred_labels, args.gt_labels,
                             args.report)
    print(json.dumps(metrics, indent=2, sort_keys=True))


def _cmd_gen_analytic(args, cfg):
    from .analytic import make_shape
    from .pipeline import provenance
    from .pointcloud_io import save_mesh, save_point_cloud

    shape = make_shape(args.shape)
    d = cfg.data
    cloud = shape.sample(d.points, d.seed, d.noise)
    comments = provenance(cfg, shape=args.shape)
    save_point_cloud(cloud, args.out, comments=comments)
    if args.mesh_out:
        save_mesh(shape.mesh(), args.mesh_out, comments=comments)


COMMANDS = {
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "evaluate": _cmd_evaluate,
    "gen-analytic": _cmd_gen_analytic,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, CorruptCheckpoint, VersionMismatch, HyperparameterMismatch) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ReconError, OSError, ValueError, MemoryError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
