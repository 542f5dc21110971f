import numpy as np
import pytest

from surfrecon.features import prepare_part
from surfrecon.network import init_state, save_checkpoint
from surfrecon.octree import build_octree, extract_finest_vertices
from surfrecon.pointcloud_io import OrientedPointCloud
from surfrecon.training import TrainOptions, accuracy, split_dataset, train

from nettools import tiny_part


def plane_part(seed=0, depth=4, n=800):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0.1, 0.9, (n, 2)), np.full(n, 0.52)])
    cloud = OrientedPointCloud(pts, np.tile([0, 0, 1.0], (n, 1)))
    lat = extract_finest_vertices(build_octree(cloud, depth)).lattice
    labels = (lat[:, 2] / 2 ** depth > 0.52).astype(np.int64)
    return prepare_part(cloud, lat, depth, labels=labels)


def test_steps_zero_returns_initial():
    part = tiny_part(labels_seed=0)
    s0 = init_state(seed=3)
    res = train([part], s0, TrainOptions(steps=0))
    for k in s0.params:
        assert res.final.params[k].tobytes() == s0.params[k].tobytes()


def test_same_seed_bitwise_identical(tmp_path):
    parts = [tiny_part(labels_seed=s, seed=s) for s in range(3)]
    opts = TrainOptions(steps=15, seed=4, lr=1e-3)
    a = train(parts, init_state(seed=1), opts)
    b = train(parts, init_state(seed=1), opts)
    save_checkpoint(a.final, tmp_path / "a")
    save_checkpoint(b.final, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert [c[1] for c in a.curve] == [c[1] for c in b.curve]


def test_separable_toy_batch():
    part = plane_part()
    res = train([part], init_state(seed=0), TrainOptions(steps=200, lr=3e-3, seed=0))
    assert accuracy([part], res.final) >= 0.99
    assert res.curve[-1][1] < res.curve[0][1]


def test_validation_split_and_curve(tmp_path):
    parts = [tiny_part(labels_seed=s, seed=s) for s in range(4)]
    tr, va = split_dataset(parts, 0.25, 0)
    assert len(tr) == 3 and len(va) == 1
    res = train(parts, init_state(seed=0),
                TrainOptions(steps=4, val_split=0.25, eval_every=2, checkpoint_every=2,
                             checkpoint_dir=str(tmp_path / "ck")))
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["step_000002.ckpt",
                                                                 "step_000004.ckpt"]
    assert [c[0] for c in res.curve] == [1, 2, 3, 4]
    assert not np.isnan(res.curve[1][2]) and np.isnan(res.curve[0][2])
    res.write_curve(tmp_path / "curve.csv")
    assert (tmp_path / "curve.csv").read_text().splitlines()[0] == "step,loss,val_accuracy"


def test_empty_dataset():
    with pytest.raises(ValueError):
        train([], init_state(), TrainOptions(steps=1))
