"""End-to-end orchestration: prepare, train, reconstruct, evaluate."""

from __future__ import annotations

import hashlib
import math
import json
import logging
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import make_shape
from .config import PipelineConfig
from .extraction import marching_cubes, taubin_smooth
from .features import PartInputs, PointInputs, prepare_part, prepare_point_inputs
from .labeling import LabelSet, baseline_classify, label_from_mesh
from .metrics import label_metrics, mesh_metrics, write_report
from .network import (
    NetworkState,
    encode_points,
    init_state,
    load_checkpoint,
    predict_labels,
    receptive_radius,
    save_checkpoint,
)
from .octree import Octree, VertexSet, build_octree, extract_finest_vertices
from .partition import Part, merge_labels, partition
from .pointcloud_io import (
    NormalizationTransform,
    OrientedPointCloud,
    TriangleMesh,
    load_mesh,
    load_point_cloud,
    normalize,
    save_mesh,
    save_point_cloud,
)
from .training import TrainOptions, train
from .errors import HyperparameterMismatch, InputError

log = logging.getLogger(__name__)


@dataclass
class Scene:
    cloud: OrientedPointCloud  # normalized
    transform: NormalizationTransform
    octree: Octree
    vertices: VertexSet


@dataclass
class Reconstruction:
    mesh: TriangleMesh  # world coordinates
    labels: np.ndarray
    parts: list
    scene: Scene
    timings: dict = field(default_factory=dict)


def provenance(cfg: PipelineConfig, **extra) -> list[str]:
    items = {"config_hash": cfg.hash(), "seed": cfg.data.seed}
    items.update(extra)
    return [f"{k} {v}" for k, v in items.items()]


def build_scene(cloud: OrientedPointCloud, cfg: PipelineConfig) -> Scene:
    norm, tf = normalize(cloud, cfg.octree.normalize_padding)
    octree = build_octree(norm, cfg.depth)
    return Scene(norm, tf, octree, extract_finest_vertices(octree))


def classifier_pad(cfg: PipelineConfig, state: NetworkState | None) -> float:
    if state is None:
        # a vertex with no neighbor inside the radius falls back to its nearest point,
        # which the dilation keeps within 2*sqrt(3) cells
        return max(cfg.baseline_radius(), 2 * math.sqrt(3) / (1 << cfg.depth))
    return receptive_radius(cfg.depth, cfg.tangent_config(), state.config)


def _check_state(state: NetworkState, cfg: PipelineConfig) -> None:
    net = state.config
    if net.extent != cfg.tangent.extent:
        raise HyperparameterMismatch(
            f"checkpoint uses tangent extent {net.extent}, config has {cfg.tangent.extent}")
    if net.depth is not None and net.depth != cfg.depth:
        raise HyperparameterMismatch(f"checkpoint trained at depth {net.depth}, config has {cfg.depth}")


def _point_key(part: Part) -> bytes:
    return hashlib.blake2b(part.point_indices.tobytes(), digest_size=16).digest()


def classify_scene(scene: Scene, cfg: PipelineConfig, state: NetworkState | None = None,
                   workers: int | None = None) -> tuple[np.ndarray, list[Part]]:
    """Partition, classify every part (concurrently) and merge by part id."""
    if state is not None:
        _check_state(state, cfg)
    workers = cfg.runtime.workers if workers is None else workers
    pcfg = cfg.partition_config(classifier_pad(cfg, state))
    parts = partition(scene.vertices, scene.cloud, pcfg)
    log.info("%d parts (pad %.4g)", len(parts), pcfg.pad)
    coords = scene.vertices.coordinates
    lattice = scene.vertices.lattice

    if state is None:
        radius = cfg.baseline_radius()

        def run(group):
            return [(p.part_id, baseline_classify(coords[p.vertex_indices],
                                                  scene.cloud.subset(p.point_indices), radius).labels)
                    for p in group]
    else:
        tcfg = cfg.tangent_config()

        def run(group):
            # parts in a group share one point set, so point features are computed once
            sub = scene.cloud.subset(group[0].point_indices)
            points = prepare_point_inputs(sub, cfg.depth, tcfg)
            feats = None
            out = []
            for p in group:
                inputs = prepare_part(sub, lattice[p.vertex_indices], cfg.depth, tcfg, points=points)
                if feats is None:
                    feats = encode_points(inputs, state)
                out.append((p.part_id, predict_labels(inputs, state, point_features=feats)))
            return out

    groups: dict[bytes, list[Part]] = {}
    for p in parts:
        groups.setdefault(_point_key(p), []).append(p)
    tasks = list(groups.values())
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    by_id = dict(r for group in results for r in group)
    labels = merge_labels(parts, [by_id[p.part_id] for p in parts], len(scene.vertices))
    return labels, parts


def reconstruct(cloud: OrientedPointCloud, cfg: PipelineConfig, state: NetworkState | None = None,
                workers: int | None = None) -> Reconstruction:
    t0 = time.perf_counter()
    scene = build_scene(cloud, cfg)
    t1 = time.perf_counter()
    labels, parts = classify_scene(scene, cfg, state, workers)
    t2 = time.perf_counter()
    mesh = marching_cubes(scene.octree, scene.vertices, labels)
    sm = cfg.smoothing
    mesh = taubin_smooth(mesh, sm.lam, sm.mu, sm.iterations)
    mesh = TriangleMesh(scene.transform.invert(mesh.vertices), mesh.triangles)
    t3 = time.perf_counter()
    timings = {"prepare": t1 - t0, "classify": t2 - t1, "extract": t3 - t2}
    log.info("timings " + " ".join(f"{k}={v:.2f}s" for k, v in timings.items()))
    return Reconstruction(mesh, labels, parts, scene, timings)


# --------------------------------------------------------------------------
# datasets


def _write_atomic_dir(out_dir: Path, fill) -> Path:
    """Populate a temporary sibling directory and move it into place only on success."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        fill(tmp)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        tmp.rename(out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def prepare_dataset(cloud: OrientedPointCloud, gt: TriangleMesh | None, cfg: PipelineConfig,
                    out_dir, labels: np.ndarray | None = None) -> Path:
    """Write normalized inputs, octree dumps, per-part features and ground-truth labels.

    Labels come from ``gt`` (mapped into the normalized frame) unless given directly.
    """
    scene = build_scene(cloud, cfg)
    if labels is None:
        if gt is None:
            raise InputError("need a ground-truth mesh or labels")
        gt_n = TriangleMesh(scene.transform.apply(gt.vertices), gt.triangles)
        labels = label_from_mesh(scene.vertices, gt_n).labels
    labels = np.asarray(labels, dtype=np.uint8)
    tcfg = cfg.tangent_config()
    pad = receptive_radius(cfg.depth, tcfg, cfg.network_config())
    pcfg = cfg.partition_config(pad)
    if cfg.train.crop_vertices:
        pcfg = type(pcfg)(pcfg.max_batch, pcfg.pad, cfg.train.crop_vertices, pcfg.align)
    parts = partition(scene.vertices, scene.cloud, pcfg)
    prov = provenance(cfg)

    def fill(d: Path):
        save_point_cloud(scene.cloud, d / "cloud.ply", comments=prov)
        scene.octree.dump(d / "octree.txt")
        np.savetxt(d / "vertices.txt", scene.vertices.lattice, fmt="%d")
        LabelSet(labels).save(d / "labels.lbl")
        # parts with the same point set share one stored copy of the point inputs
        cache: dict[bytes, tuple] = {}
        entries = []
        for p in parts:
            key = _point_key(p)
            sub = scene.cloud.subset(p.point_indices)
            if key not in cache:
                pname = f"points_{len(cache):04d}.arr"
                cache[key] = (pname, prepare_point_inputs(sub, cfg.depth, tcfg))
                (d / pname).write_bytes(cache[key][1].to_bytes())
            pname, points = cache[key]
            inputs = prepare_part(sub, scene.vertices.lattice[p.vertex_indices], cfg.depth, tcfg,
                                  labels[p.vertex_indices], points=points)
            name = f"part_{p.part_id:04d}.arr"
            (d / name).write_bytes(inputs.to_bytes(include_points=False))
            entries.append({"file": name, "points": pname, "description": p.describe()})
        manifest = {
            "config_hash": cfg.hash(),
            "seed": cfg.data.seed,
            "depth": cfg.depth,
            "vertices": len(scene.vertices),
            "points": scene.cloud.count,
            "front_fraction": float(labels.mean()) if len(labels) else 0.0,
            "transform": {"scale": scene.transform.scale, "offset": scene.transform.offset.tolist()},
            "parts": entries,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    return _write_atomic_dir(Path(out_dir), fill)


def load_dataset(path) -> list[PartInputs]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"{path} is not a prepared dataset (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    shared: dict[str, PointInputs] = {}
    out = []
    for e in manifest["parts"]:
        if e["points"] not in shared:
            shared[e["points"]] = PointInputs.from_bytes((path / e["points"]).read_bytes())
        out.append(PartInputs.from_bytes((path / e["file"]).read_bytes(), shared[e["points"]]))
    return out


def analytic_dataset(shape: str, cfg: PipelineConfig, out_dir, n_points: int | None = None,
                     noise: float | None = None, seed: int | None = None) -> Path:
    """Dataset for an analytic shape, labeled by its exact sidedness."""
    s = make_shape(shape)
    cloud = s.sample(n_points or cfg.data.points, cfg.data.seed if seed is None else seed,
                     cfg.data.noise if noise is None else noise)
    scene = build_scene(cloud, cfg)
    world = scene.transform.invert(scene.vertices.coordinates)
    labels = (s.side(world) >= 0).astype(np.uint8)
    return prepare_dataset(cloud, None, cfg, out_dir, labels=labels)


def train_from_datasets(dataset_dirs: list, cfg: PipelineConfig, out_checkpoint,
                        curve_path=None, init: NetworkState | None = None) -> NetworkState:
    data = [p for d in dataset_dirs for p in load_dataset(d)]
    state0 = init if init is not None else init_state(cfg.network_config(), cfg.network.init_seed)
    tr = cfg.train
    opts = TrainOptions(lr=tr.lr, steps=tr.steps, seed=tr.seed, val_split=tr.val_split,
                        eval_every=tr.eval_every, checkpoint_every=tr.checkpoint_every,
                        checkpoint_dir=str(Path(out_checkpoint).parent / "checkpoints")
                        if tr.checkpoint_every else None)
    result = train(data, state0, opts)
    chosen = result.best if tr.val_split > 0 else result.final
    chosen.meta.update({"config_hash": cfg.hash(), "seed": tr.seed, "steps": tr.steps})
    save_checkpoint(chosen, out_checkpoint)
    if curve_path is not None:
        result.write_curve(curve_path)
    return chosen


def reconstruct_file(cloud_path, out_path, cfg: PipelineConfig, checkpoint=None,
                     workers: int | None = None, labels_out=None) -> Reconstruction:
    cloud = load_point_cloud(cloud_path)
    state = load_checkpoint(checkpoint) if checkpoint else None
    rec = reconstruct(cloud, cfg, state, workers)
    mode = "baseline" if state is None else "network"
    save_mesh(rec.mesh, out_path, comments=provenance(cfg, classifier=mode))
    if labels_out is not None:
        LabelSet(rec.labels).save(labels_out)
    return rec


def evaluate_files(cfg: PipelineConfig, pred_mesh=None, gt_mesh=None, pred_labels=None,
                   gt_labels=None, report_path=None) -> dict:
    metrics: dict = {}
    if pred_mesh is not None and gt_mesh is not None:
        metrics.update(mesh_metrics(load_mesh(pred_mesh), load_mesh(gt_mesh),
                                    cfg.evaluate.samples, cfg.evaluate.seed))
    if pred_labels is not None and gt_labels is not None:
        metrics.update(label_metrics(LabelSet.load(pred_labels), LabelSet.load(gt_labels)))
    if not metrics:
        raise InputError("nothing to evaluate: give a mesh pair and/or a label pair")
    write_report(metrics, report_path, config_hash=cfg.hash(), seed=cfg.evaluate.seed,
                 samples=cfg.evaluate.samples)
    return metrics
