import json

import numpy as np
import pytest

from surfrecon.analytic import Sphere, icosphere
from surfrecon.config import PipelineConfig
from surfrecon.errors import InputError
from surfrecon.labeling import LabelSet
from surfrecon.network import init_state, load_checkpoint
from surfrecon.pipeline import (build_scene, load_dataset, prepare_dataset, reconstruct,
                                train_from_datasets)

from conftest import sphere_cloud
from test_extraction import euler, watertight

D5 = PipelineConfig().replace(octree={"depth": 5})


@pytest.fixture(scope="module")
def unit_sphere():
    return Sphere(1.0).sample(5000, seed=0)


@pytest.fixture(scope="module")
def sphere_dataset(unit_sphere, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "sphere"
    prepare_dataset(unit_sphere, icosphere(5), D5, out)
    return out


def tree_bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_prepare_labels_match_sdf(sphere_dataset, unit_sphere):
    scene = build_scene(unit_sphere, D5)
    labels = LabelSet.load(sphere_dataset / "labels.lbl").labels
    lattice = np.loadtxt(sphere_dataset / "vertices.txt", dtype=np.int64)
    np.testing.assert_array_equal(lattice, scene.vertices.lattice)
    world = scene.transform.invert(scene.vertices.coordinates)
    truth = (Sphere(1.0).side(world) >= 0).astype(np.uint8)
    assert (labels == truth).mean() >= 0.999
    manifest = json.loads((sphere_dataset / "manifest.json").read_text())
    assert manifest["config_hash"] == D5.hash() and manifest["vertices"] == len(labels)
    assert "config_hash" in (sphere_dataset / "cloud.ply").read_bytes()[:400].decode("latin-1")


def test_prepare_deterministic(sphere_dataset, unit_sphere, tmp_path):
    again = prepare_dataset(unit_sphere, icosphere(5), D5, tmp_path / "again")
    assert tree_bytes(again) == tree_bytes(sphere_dataset)


def test_prepare_without_gt_leaves_nothing(unit_sphere, tmp_path):
    with pytest.raises(InputError):
        prepare_dataset(unit_sphere, None, D5, tmp_path / "out")
    assert list(tmp_path.iterdir()) == []


def test_load_dataset(sphere_dataset):
    parts = load_dataset(sphere_dataset)
    labels = LabelSet.load(sphere_dataset / "labels.lbl").labels
    assert sum(p.n_vertices for p in parts) >= len(labels)
    assert all(p.labels is not None and p.depth == 5 for p in parts)
    with pytest.raises(InputError):
        load_dataset(sphere_dataset / "nope")


def test_train_steps_zero_and_seeded(sphere_dataset, tmp_path):
    cfg = D5.replace(train={"steps": 0})
    train_from_datasets([sphere_dataset], cfg, tmp_path / "z.ckpt")
    z = load_checkpoint(tmp_path / "z.ckpt")
    init = init_state(cfg.network_config(), cfg.network.init_seed)
    assert all(z.params[k].tobytes() == init.params[k].tobytes() for k in init.params)
    cfg = D5.replace(train={"steps": 3, "seed": 5})
    train_from_datasets([sphere_dataset], cfg, tmp_path / "a.ckpt", tmp_path / "a.csv")
    train_from_datasets([sphere_dataset], cfg, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 4


@pytest.fixture(scope="module")
def sphere20k():
    return sphere_cloud(20_000, seed=1)


def test_reconstruct_baseline_sphere(sphere20k):
    cfg = PipelineConfig()
    rec = reconstruct(sphere20k, cfg)
    assert watertight(rec.mesh) and euler(rec.mesh) == 2
    r = np.linalg.norm(rec.mesh.vertices - 0.5, axis=1)
    assert np.abs(r - 0.35).mean() < 2 / 64


def test_reconstruct_partition_and_worker_invariance(sphere20k):
    cfg = PipelineConfig()
    one = reconstruct(sphere20k, cfg.replace(partition={"max_batch": 10 ** 9}))
    many = reconstruct(sphere20k, cfg.replace(partition={"max_batch": 2000}), workers=4)
    assert len(one.parts) == 1 and len(many.parts) > 1
    assert one.labels.tobytes() == many.labels.tobytes()
    assert one.mesh.vertices.tobytes() == many.mesh.vertices.tobytes()
    assert one.mesh.triangles.tobytes() == many.mesh.triangles.tobytes()
