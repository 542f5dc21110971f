import numpy as np
import pytest
from hypothesis import given, strategies as st

from surfrecon.errors import CoverageGap, UnsatisfiableCap
from surfrecon.octree import Octree, VertexSet, build_octree, extract_finest_vertices
from surfrecon.partition import Part, PartitionConfig, merge_labels, partition
from surfrecon.pointcloud_io import OrientedPointCloud

from conftest import sphere_cloud


def scene(n=3000, depth=6, seed=0):
    cloud = sphere_cloud(n, seed)
    oc = build_octree(cloud, depth)
    return cloud, extract_finest_vertices(oc)


def in_box(pos, lo, hi):
    return ((pos >= lo) & (pos <= hi)).all(axis=1)


def check_invariants(parts, vs, cloud, cfg):
    owned = np.concatenate([p.vertex_indices for p in parts])
    np.testing.assert_array_equal(np.sort(owned), np.arange(vs.count))
    res = 2.0 ** vs.depth
    for p in parts:
        lo, hi = p.lattice_box
        lat = vs.lattice[p.vertex_indices]
        assert ((lat >= lo) & (lat < hi)).all()
        # brute-force membership: box grown by pad, clipped to the unit cube
        plo = np.clip(lo / res - cfg.pad, 0, 1)
        phi = np.clip(hi / res + cfg.pad, 0, 1)
        expect = np.flatnonzero(in_box(cloud.positions, plo, phi))
        np.testing.assert_array_equal(p.point_indices, expect)
        assert len(p.vertex_indices) <= cfg.vertex_cap
        assert len(p.point_indices) <= cfg.max_batch
    # half-open boxes are pairwise disjoint
    for a in parts:
        for b in parts:
            if a.part_id < b.part_id:
                lo = np.maximum(a.lattice_box[0], b.lattice_box[0])
                hi = np.minimum(a.lattice_box[1], b.lattice_box[1])
                assert (hi <= lo).any()


def test_single_part_when_small():
    rng = np.random.default_rng(0)
    cloud = OrientedPointCloud(rng.uniform(0.3, 0.7, (100, 3)), np.tile([0, 0, 1.0], (100, 1)))
    lat = np.unique(rng.integers(0, 64, (100, 3)), axis=0)
    vs = VertexSet(6, lat, np.arange(len(lat)), np.zeros((0, 8), np.int64))
    parts = partition(vs, cloud, PartitionConfig(300_000, pad=0.1))
    assert len(parts) == 1
    np.testing.assert_array_equal(parts[0].vertex_indices, np.arange(len(lat)))


def test_point_near_split_goes_to_both():
    # vertices on both sides of x = 0.5, a point at x = 0.45
    lat = np.array([[x, 8, 8] for x in range(0, 17)], dtype=np.int64)
    vs = VertexSet(4, lat, np.arange(len(lat)), np.zeros((0, 8), np.int64))
    pts = np.array([[0.45, 0.5, 0.5], [0.05, 0.5, 0.5], [0.95, 0.5, 0.5]])
    cloud = OrientedPointCloud(pts, np.tile([0, 0, 1.0], (3, 1)))
    parts = partition(vs, cloud, PartitionConfig(300_000, pad=0.1, max_vertex_batch=9))
    assert len(parts) == 2
    assert parts[0].lattice_box[1][0] == 8  # split at x = 8/16 = 0.5
    for p in parts:
        assert 0 in p.point_indices


def test_sphere_split_matches_membership_oracle():
    cloud, vs = scene()
    cfg = PartitionConfig(max_batch=5_000, pad=0.05)
    parts = partition(vs, cloud, cfg)
    assert len(parts) > 1
    check_invariants(parts, vs, cloud, cfg)


def test_vertex_cap_only():
    cloud, vs = scene()
    cfg = PartitionConfig(max_batch=10 ** 9, pad=0.1, max_vertex_batch=2000)
    parts = partition(vs, cloud, cfg)
    assert len(parts) >= vs.count // 2000
    check_invariants(parts, vs, cloud, cfg)


def test_deterministic():
    cloud, vs = scene()
    cfg = PartitionConfig(max_batch=4000, pad=0.05)
    a, b = partition(vs, cloud, cfg), partition(vs, cloud, cfg)
    assert [p.describe() for p in a] == [p.describe() for p in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.vertex_indices, y.vertex_indices)
        np.testing.assert_array_equal(x.point_indices, y.point_indices)


def test_boxes_aligned():
    cloud, vs = scene()
    for p in partition(vs, cloud, PartitionConfig(max_batch=3000, pad=0.05)):
        assert (np.asarray(p.lattice_box) % 4 == 0).all()


def test_unsatisfiable_cap():
    cloud, vs = scene(n=3000)
    with pytest.raises(UnsatisfiableCap) as exc:
        partition(vs, cloud, PartitionConfig(max_batch=50, pad=0.3))
    assert "region" in str(exc.value) or "box" in str(exc.value)


@given(st.integers(200, 3000), st.integers(3, 6), st.floats(0, 0.3),
       st.integers(20, 5000), st.integers(0, 10 ** 6))
def test_partition_properties(n, depth, pad, vcap, seed):
    cloud, vs = scene(n, depth, seed)
    cfg = PartitionConfig(max_batch=10 ** 9, pad=pad, max_vertex_batch=vcap)
    try:
        parts = partition(vs, cloud, cfg)
    except UnsatisfiableCap:
        # only legitimate when some minimal aligned box already holds more than the cap
        _, counts = np.unique(vs.lattice // cfg.align, axis=0, return_counts=True)
        assert counts.max() > vcap
        return
    check_invariants(parts, vs, cloud, cfg)


def _fake_part(pid, idx):
    z = np.zeros(3)
    return Part(pid, (z, z), (z, z), (z, z), np.asarray(idx), np.zeros(0, np.int64))


def test_merge_identity_and_interleave():
    p = _fake_part(0, np.arange(5))
    np.testing.assert_array_equal(merge_labels([p], [[1, 0, 1, 1, 0]]), [1, 0, 1, 1, 0])
    a, b = _fake_part(0, [0, 2, 4, 6, 8]), _fake_part(1, [1, 3, 5, 7, 9])
    out = merge_labels([a, b], [[1] * 5, [0] * 5])
    np.testing.assert_array_equal(out, [1, 0] * 5)


def test_merge_matches_sequential_oracle():
    rng = np.random.default_rng(3)
    M = 10_000
    perm = rng.permutation(M)
    cuts = np.sort(rng.choice(np.arange(1, M), 7, replace=False))
    groups = np.split(perm, cuts)
    parts = [_fake_part(i, g) for i, g in enumerate(groups)]
    labels = [rng.integers(0, 2, len(g)) for g in groups]
    ref = np.full(M, 255, np.uint8)
    for g, l in zip(groups, labels):
        for i, v in zip(g, l):
            ref[i] = v
    shuffled = rng.permutation(len(parts))
    out = merge_labels([parts[i] for i in shuffled], [labels[i] for i in shuffled], M)
    np.testing.assert_array_equal(out, ref)


def test_merge_coverage_gap():
    with pytest.raises(CoverageGap):
        merge_labels([_fake_part(0, [0, 1])], [[0, 1]], n_vertices=3)
    with pytest.raises(ValueError):
        merge_labels([_fake_part(0, [0, 1])], [[0]])
