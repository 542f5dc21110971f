import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from surfrecon.errors import EmptyInput, LengthMismatch, ZeroArea
from surfrecon.metrics import (BothEmptyWarning, SampledSurface, chamfer_l1, chamfer_sq,
                               label_iou, label_metrics, mesh_metrics, normal_consistency,
                               sample_mesh, vertex_accuracy, write_report)
from surfrecon.pointcloud_io import TriangleMesh

from conftest import random_unit


def brute_nn(a, b):
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    return d.min(axis=1), d.argmin(axis=1)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


def test_accuracy_examples():
    assert vertex_accuracy([0, 1, 1], [0, 1, 1]) == 1.0
    assert vertex_accuracy([0, 1], [1, 0]) == 0.0
    assert vertex_accuracy([0, 1, 1, 0], [0, 1, 1, 1]) == 0.75
    with pytest.raises(LengthMismatch):
        vertex_accuracy([0], [0, 1])
    with pytest.raises(EmptyInput):
        vertex_accuracy([], [])


def test_iou_examples():
    assert label_iou([0, 1, 0], [0, 1, 0]) == 1.0
    assert label_iou([0, 1], [1, 0]) == 0.0
    with pytest.warns(BothEmptyWarning):
        assert label_iou([1, 1], [1, 1]) == 1.0
    assert label_metrics([1, 1], [1, 1])["label_iou_both_empty"] is True


def test_iou_set_oracle():
    rng = np.random.default_rng(0)
    p, t = rng.integers(0, 2, 1000), rng.integers(0, 2, 1000)
    ip = {i for i in range(1000) if p[i] == 0}
    it = {i for i in range(1000) if t[i] == 0}
    assert label_iou(p, t) == len(ip & it) / len(ip | it)
    assert vertex_accuracy(p, t) == sum(int(a == b) for a, b in zip(p, t)) / 1000


def test_chamfer_examples():
    a = np.random.default_rng(0).random((20, 3))
    assert chamfer_l1(a, a) == 0 and chamfer_sq(a, a) == (0.0, 0.0)
    assert chamfer_l1([[0, 0, 0]], [[1, 0, 0]]) == 1.0
    assert chamfer_sq([[0, 0, 0]], [[2, 0, 0]]) == (4.0, 4.0)
    with pytest.raises(EmptyInput):
        chamfer_l1(np.zeros((0, 3)), a)


@pytest.mark.parametrize("seed", range(5))
def test_chamfer_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((50, 3)), rng.random((60, 3))
    dab, _ = brute_nn(a, b)
    dba, _ = brute_nn(b, a)
    assert abs(chamfer_l1(a, b) - 0.5 * (dab.mean() + dba.mean())) < 1e-9
    sq = np.concatenate([dab, dba]) ** 2
    m, r = chamfer_sq(a, b)
    assert abs(m - sq.mean()) < 1e-9 and abs(r - np.sqrt((sq ** 2).mean())) < 1e-9


def test_normal_consistency_examples():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.random((100, 2)), np.zeros(100)])
    up = SampledSurface(pts, np.tile([0, 0, 1.0], (100, 1)))
    down = SampledSurface(pts, np.tile([0, 0, -1.0], (100, 1)))
    assert normal_consistency(up, up) == 1.0
    assert normal_consistency(up, down) == 1.0
    with pytest.raises(EmptyInput):
        normal_consistency(SampledSurface(pts), up)


@pytest.mark.parametrize("seed", range(5))
def test_normal_consistency_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = SampledSurface(rng.random((40, 3)), random_unit(rng, 40))
    b = SampledSurface(rng.random((55, 3)), random_unit(rng, 55))
    _, iab = brute_nn(a.points, b.points)
    _, iba = brute_nn(b.points, a.points)
    expect = 0.5 * (np.abs((a.normals * b.normals[iab]).sum(1)).mean()
                    + np.abs((b.normals * a.normals[iba]).sum(1)).mean())
    assert abs(normal_consistency(a, b) - expect) < 1e-9


@given(st.integers(0, 10 ** 6))
def test_metric_symmetry_and_motion(seed):
    rng = np.random.default_rng(seed)
    a = SampledSurface(rng.random((30, 3)), random_unit(rng, 30))
    b = SampledSurface(rng.random((25, 3)), random_unit(rng, 25))
    assert chamfer_l1(a, b) == pytest.approx(chamfer_l1(b, a), abs=1e-15)
    assert chamfer_sq(a, b) == pytest.approx(chamfer_sq(b, a), abs=1e-15)
    assert normal_consistency(a, b) == pytest.approx(normal_consistency(b, a), abs=1e-15)
    R, t = random_rotation(rng), rng.normal(size=3)
    ra, rb = a.points @ R.T + t, b.points @ R.T + t
    assert abs(chamfer_l1(ra, rb) - chamfer_l1(a, b)) < 1e-9
    assert np.allclose(chamfer_sq(ra, rb), chamfer_sq(a, b), atol=1e-9)
    flipped = SampledSurface(a.points, -a.normals)
    assert normal_consistency(flipped, b) == pytest.approx(normal_consistency(a, b), abs=1e-15)


def test_sample_single_triangle():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
    s = sample_mesh(TriangleMesh(tri, [[0, 1, 2]]), 1000, seed=3)
    assert np.all(s.points[:, 2] == 0)
    assert np.all(s.points[:, :2] >= -1e-15) and np.all(s.points[:, :2].sum(1) <= 1 + 1e-12)
    # recover barycentric coordinates and check they sum to 1
    bary = np.column_stack([1 - s.points[:, 0] - s.points[:, 1], s.points[:, 0], s.points[:, 1]])
    np.testing.assert_allclose(bary.sum(1), 1)
    assert (bary >= -1e-12).all()
    np.testing.assert_array_equal(s.normals, np.tile([0, 0, 1.0], (1000, 1)))


def test_sample_area_proportional():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [5, 0, 0], [8, 0, 0], [5, 2, 0.0]])
    mesh = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])  # areas 1 and 3
    s = sample_mesh(mesh, 40_000, seed=0)
    n2 = int((s.points[:, 0] >= 5).sum())
    assert abs(n2 - 30_000) <= 500
    again = sample_mesh(mesh, 40_000, seed=0)
    assert again.points.tobytes() == s.points.tobytes()


def test_sample_errors():
    with pytest.raises(EmptyInput):
        sample_mesh(TriangleMesh.empty(), 10)
    flat = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(ZeroArea):
        sample_mesh(flat, 10)


def test_mesh_metrics_self_and_report(tmp_path):
    from surfrecon.analytic import icosphere
    m = icosphere(2)
    r = mesh_metrics(m, m, n=2000)
    assert r["chamfer_l1"] == 0 and r["normal_consistency"] == 1.0
    other = mesh_metrics(m, icosphere(2, 1.1), n=2000)
    assert 0.09 < other["chamfer_l1"] < 0.11
    text = write_report(r, tmp_path / "r.json", config_hash="abc", seed=0)
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["config_hash"] == "abc" and "conventions" in back and text.endswith("\n")
