import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from surfrecon.errors import DepthTooShallow, IndexOutOfRange, MalformedFile, TooFewNeighbors
from surfrecon.pointcloud_io import SpatialIndex
from surfrecon.tangent import (
    FRAME_OK, FrameBatch, GatherTable, TangentConfig, build_pyramid, build_tangent_level,
    compute_signals, estimate_frame, pool_matrix, precompute_gather, unpool_matrix)

from conftest import random_unit


def closed_form_smallest_eigvec(cov):
    """Trigonometric eigenvalues of a symmetric 3x3 matrix; eigenvector from row cross products."""
    a = cov
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2 * p1
    p = math.sqrt(p2 / 6)
    b = (a - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2, -1, 1)
    phi = math.acos(r) / 3
    lam = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    m = a - lam * np.eye(3)
    cands = [np.cross(m[0], m[1]), np.cross(m[0], m[2]), np.cross(m[1], m[2])]
    k = max(cands, key=np.linalg.norm)
    return k / np.linalg.norm(k)


def plane_patch(rng, n, normal=(0, 0, 1), noise=0.0, stretch=(1.0, 0.5)):
    normal = np.asarray(normal, float)
    normal /= np.linalg.norm(normal)
    helper = np.eye(3)[np.argmin(np.abs(normal))]
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    uv = rng.uniform(-1, 1, (n, 2)) * stretch
    pts = uv[:, :1] * e1 + uv[:, 1:] * e2 + noise * rng.normal(size=(n, 1)) * normal
    return pts, np.tile(normal, (n, 1))


def test_planar_frame_up_and_down():
    rng = np.random.default_rng(0)
    pts, nrm = plane_patch(rng, 30)
    f = estimate_frame([0, 0, 0], pts, nrm)
    np.testing.assert_allclose(f.normal, [0, 0, 1], atol=1e-9)
    g = estimate_frame([0, 0, 0], pts, -nrm)
    np.testing.assert_allclose(g.normal, [0, 0, -1], atol=1e-9)


def test_noisy_plane_matches_closed_form():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        true_n = random_unit(rng, 1)[0]
        pts, nrm = plane_patch(rng, 50, true_n, noise=0.01)
        f = estimate_frame(pts.mean(axis=0), pts, nrm)
        angle = math.degrees(math.acos(min(1.0, abs(f.normal @ true_n))))
        assert angle < 5
        assert f.normal @ f.mean_normal > 0
        centered = pts - pts.mean(axis=0)
        k = closed_form_smallest_eigvec(centered.T @ centered / len(pts))
        assert abs(abs(k @ f.normal) - 1) < 1e-8


def test_too_few_neighbors():
    with pytest.raises(TooFewNeighbors):
        estimate_frame([0, 0, 0], [[1, 0, 0], [0, 1, 0]], [[0, 0, 1]] * 2)


def test_collinear_neighbors_flagged_and_fall_back():
    pts = np.array([[t, 0, 0] for t in np.linspace(-1, 1, 7)])
    nrm = np.tile([0, 0.6, 0.8], (7, 1))
    f = estimate_frame([0, 0, 0], pts, nrm)
    assert f.degenerate
    np.testing.assert_allclose(f.normal, [0, 0.6, 0.8], atol=1e-12)


def check_frame(f):
    n, u, v = f.normal, f.u, f.v
    for a in (n, u, v):
        assert abs(np.linalg.norm(a) - 1) < 1e-6
    assert abs(u @ v) < 1e-6 and abs(u @ n) < 1e-6 and abs(v @ n) < 1e-6
    np.testing.assert_allclose(np.cross(u, v), n, atol=1e-6)  # right-handed


@given(st.integers(0, 10 ** 6), st.integers(3, 60), st.floats(0, 0.5))
def test_frame_properties(seed, n, noise):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)) * [1, 0.7, noise + 1e-3]
    nrm = random_unit(rng, n)
    f = estimate_frame(rng.normal(size=3), pts, nrm)
    check_frame(f)
    if not f.degenerate:
        assert f.normal @ f.mean_normal > 0
    g = estimate_frame(f.origin, pts, -nrm)
    if not f.degenerate and not g.degenerate:
        np.testing.assert_allclose(g.normal, -f.normal, atol=1e-12)


# -- gather tables -------------------------------------------------------------


def bin_oracle(queries, u, v, src, radius, extent, cap):
    """Project every in-radius source, bin to the nearest pixel, keep the cap nearest to center."""
    delta = 2 * radius / extent
    rows = {}
    for q_i, q in enumerate(queries):
        per_pixel = {}
        for j, p in enumerate(src):
            d = p - q
            if d @ d > radius * radius:
                continue
            x, y = d @ u[q_i], d @ v[q_i]
            ix = min(max(math.floor(x / delta + extent / 2), 0), extent - 1)
            iy = min(max(math.floor(y / delta + extent / 2), 0), extent - 1)
            cx, cy = (ix - (extent - 1) / 2) * delta, (iy - (extent - 1) / 2) * delta
            per_pixel.setdefault(iy * extent + ix, []).append(((x - cx) ** 2 + (y - cy) ** 2, j))
        for pix, items in per_pixel.items():
            items.sort()
            keep = items if not cap else items[:cap]
            rows[q_i * extent * extent + pix] = sorted(j for _, j in keep)
    return rows


def table_rows(table: GatherTable):
    m = table.matrix
    out = {}
    for r in range(m.shape[0]):
        a, b = m.indptr[r], m.indptr[r + 1]
        if b > a:
            out[r] = m.indices[a:b].tolist()
            np.testing.assert_allclose(m.data[a:b], 1.0 / (b - a))
    return out


def test_single_neighbor_at_origin():
    src = np.array([[0.5, 0.5, 0.5]])
    frames = FrameBatch(src.copy(), np.array([[0, 0, 1.0]]), np.array([[1, 0, 0.0]]),
                        np.array([[0, 1, 0.0]]), np.zeros(1, np.int8), np.array([[0, 0, 1.0]]))
    t = precompute_gather(src, frames, SpatialIndex(src), 0.1, 3)
    idx, w = t.pixel_entries(0, 4)
    assert idx.tolist() == [0] and w.tolist() == [1.0]
    assert t.nnz == 1


def test_far_neighbor_gives_sentinel_row():
    src = np.array([[0.9, 0.9, 0.9]])
    q = np.array([[0.1, 0.1, 0.1]])
    frames = FrameBatch(q.copy(), np.array([[0, 0, 1.0]]), np.array([[1, 0, 0.0]]),
                        np.array([[0, 1, 0.0]]), np.zeros(1, np.int8), np.array([[0, 0, 1.0]]))
    t = precompute_gather(q, frames, SpatialIndex(src), 0.1, 3)
    assert t.nnz == 0 and t.matrix.shape == (9, 1)


@pytest.mark.parametrize("cap", [None, 1, 3, 8])
@pytest.mark.parametrize("extent", [1, 3, 5])
def test_gather_matches_binning_oracle(cap, extent):
    rng = np.random.default_rng(extent * 10 + (cap or 0))
    src = rng.uniform(-1, 1, (200, 3)) * [1, 1, 0.2]
    queries = rng.uniform(-0.5, 0.5, (6, 3)) * [1, 1, 0.1]
    nrm = np.tile([0, 0, 1.0], (200, 1))
    lvl = build_tangent_level(queries, src, nrm, 0.6, extent, cap)
    assert table_rows(lvl.table) == bin_oracle(queries, lvl.frames.u, lvl.frames.v, src, 0.6,
                                               extent, cap)
    again = precompute_gather(queries, lvl.frames, SpatialIndex(src), 0.6, extent, cap)
    assert (again.matrix != lvl.table.matrix).nnz == 0


@given(st.integers(0, 10 ** 6), st.integers(1, 120), st.floats(0.05, 1.0),
       st.sampled_from([None, 1, 2, 8]))
def test_gather_locality_and_oracle(seed, n, radius, cap):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 1, (n, 3))
    queries = rng.uniform(0, 1, (5, 3))
    lvl = build_tangent_level(queries, src, random_unit(rng, n), radius, 3, cap)
    rows = table_rows(lvl.table)
    for r, idx in rows.items():
        q = queries[r // 9]
        assert (np.linalg.norm(src[idx] - q, axis=1) <= radius).all()
    assert rows == bin_oracle(queries, lvl.frames.u, lvl.frames.v, src, radius, 3, cap)
    flags = lvl.frames.flags
    ok = flags == FRAME_OK
    assert (np.einsum("ij,ij->i", lvl.frames.normals, lvl.frames.mean_normals)[ok] > 0).all()


def test_gather_table_roundtrip():
    rng = np.random.default_rng(1)
    src = rng.uniform(0, 1, (100, 3))
    lvl = build_tangent_level(src[:10], src, random_unit(rng, 100), 0.3, 3, 8)
    buf = b"junk" + lvl.table.to_bytes()
    back, end = GatherTable.from_bytes(buf, 4)
    assert end == len(buf)
    assert (back.matrix != lvl.table.matrix).nnz == 0
    with pytest.raises(MalformedFile):
        GatherTable.from_bytes(b"XXXX" + buf[8:])
    with pytest.raises(MalformedFile):
        GatherTable.from_bytes(buf[4:-3])


# -- signals -------------------------------------------------------------------


def _frame_at(q, n):
    n = np.asarray(n, float)
    u = np.cross(n, [1.0, 0, 0]) if abs(n[0]) < 0.9 else np.cross(n, [0, 1.0, 0])
    u /= np.linalg.norm(u)
    return FrameBatch(np.array([q], float), np.array([n]), np.array([u]), np.array([np.cross(n, u)]),
                      np.zeros(1, np.int8), np.array([n]))


def test_signal_on_plane_and_offset():
    q = np.array([0.5, 0.5, 0.5])
    n = np.array([0, 0, 1.0])
    frames = _frame_at(q, n)
    src = np.array([[0.52, 0.5, 0.5], [0.5, 0.5, 0.52]])
    nrm = np.array([[0, 0, 1.0], [0, 0, 1.0]])
    t = precompute_gather(q[None], frames, SpatialIndex(src[:1]), 0.1, 3)
    sig = compute_signals(t, frames, src[:1], nrm[:1])
    assert np.all(sig[..., 0] == 0)
    t = precompute_gather(q[None], frames, SpatialIndex(src[1:]), 0.1, 3)
    sig = compute_signals(t, frames, src[1:], nrm[1:])
    np.testing.assert_allclose(sig[0, 4], [0.02, 0, 0, 1], atol=1e-12)
    assert np.all(sig[0, [0, 1, 2, 3, 5, 6, 7, 8]] == 0)


def test_signals_match_direct_formula():
    rng = np.random.default_rng(5)
    src = rng.uniform(0, 1, (400, 3))
    nrm = random_unit(rng, 400)
    queries = rng.uniform(0.2, 0.8, (20, 3))
    lvl = build_tangent_level(queries, src, nrm, 0.25, 3, 8)
    sig = compute_signals(lvl.table, lvl.frames, src, nrm)
    f = lvl.frames
    for r, idx in table_rows(lvl.table).items():
        q, pix = divmod(r, 9)
        d = src[idx] - f.origins[q]
        expect = [np.mean(d @ f.normals[q]), np.mean(nrm[idx] @ f.u[q]),
                  np.mean(nrm[idx] @ f.v[q]), np.mean(nrm[idx] @ f.normals[q])]
        np.testing.assert_allclose(sig[q, pix], expect, atol=1e-12)
    empty = np.diff(lvl.table.matrix.indptr) == 0
    assert np.all(sig.reshape(-1, 4)[empty] == 0)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.mark.parametrize("seed", range(5))
def test_signals_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    # anisotropic curved patch so the in-plane major axis and the skew sign are well defined
    uv = rng.uniform(-1, 1, (600, 2)) * [1.0, 0.4]
    uv[:, 0] = np.where(uv[:, 0] > 0, uv[:, 0] * 1.5, uv[:, 0])
    z = 0.15 * uv[:, 0] ** 2
    src = np.column_stack([uv, z])
    nrm = np.column_stack([-0.3 * uv[:, 0], np.zeros(600), np.ones(600)])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    queries = np.array([[0.0, 0.0, 0.0], [0.05, 0.02, 0.01]])
    R = random_rotation(rng)
    a = build_tangent_level(queries, src, nrm, 1.2, 3, None)
    b = build_tangent_level(queries @ R.T, src @ R.T, nrm @ R.T, 1.2, 3, None)
    assert table_rows(a.table) == table_rows(b.table)
    sa = compute_signals(a.table, a.frames, src, nrm)
    sb = compute_signals(b.table, b.frames, src @ R.T, nrm @ R.T)
    np.testing.assert_allclose(sa, sb, atol=1e-5)


# -- pyramid -------------------------------------------------------------------


def test_scale_schedule_depth8():
    pyr = build_pyramid(np.random.default_rng(0).random((100, 3)), np.zeros((0, 3)), 8)
    assert pyr.point_cell_sizes == (1 / 1024, 1 / 512, 1 / 256)
    assert pyr.vertex_cell_sizes == (None, 1 / 128, 1 / 64)


def test_depth_too_shallow():
    with pytest.raises(DepthTooShallow):
        build_pyramid(np.zeros((1, 3)), np.zeros((0, 3)), 2)


def test_eight_points_one_cell():
    rng = np.random.default_rng(2)
    pts = 0.5 + rng.uniform(0, 1 / 1024, (8, 3))
    pyr = build_pyramid(pts, np.zeros((0, 3)), 8, np.tile([0, 0, 1.0], (8, 1)))
    p1 = pyr.point_levels[0]
    assert len(p1) == 1
    np.testing.assert_allclose(p1.positions[0], pts.mean(axis=0))
    assert (p1.parent == 0).all()


@given(st.integers(0, 10 ** 6), st.integers(3, 8), st.integers(1, 400))
def test_pyramid_membership_oracle(seed, depth, n):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3))
    lat = np.unique(rng.integers(0, 2 ** depth + 1, (n, 3)), axis=0)
    nrm = random_unit(rng, n)
    pyr = build_pyramid(pts, lat / 2 ** depth, depth, nrm, vertex_lattice=lat)
    # point scale s: raw point -> cell floor(p * 2^(D+3-s)); composed parents must agree
    member = np.arange(n)
    for s, lvl in enumerate(pyr.point_levels, start=1):
        member = lvl.parent[member]
        cells = np.floor(pts * 2 ** (depth + 3 - s)).astype(np.int64)
        for c in np.unique(member):
            group = member == c
            assert len({tuple(x) for x in cells[group]}) == 1
            np.testing.assert_allclose(lvl.positions[c], pts[group].mean(axis=0))
            m = nrm[group].mean(axis=0)
            if np.linalg.norm(m) > 1e-9:
                np.testing.assert_allclose(lvl.normals[c], m / np.linalg.norm(m), atol=1e-9)
        assert len(lvl) == len({tuple(x) for x in cells})
    v1, v2, v3 = pyr.vertex_levels
    np.testing.assert_array_equal(v1.parent, np.arange(len(lat)))
    m2 = v2.parent
    m3 = v3.parent[m2]
    for m, shift in ((m2, 1), (m3, 2)):
        keys = [tuple(x) for x in lat >> shift]
        assert len(set(zip(m.tolist(), keys))) == len(set(m.tolist())) == len(set(keys))
        lvl = v2 if shift == 1 else v3
        for c in np.unique(m):
            np.testing.assert_allclose(lvl.positions[c], (lat[m == c] / 2 ** depth).mean(axis=0))


@given(st.integers(0, 10 ** 6), st.integers(1, 200), st.integers(1, 50))
def test_pool_unpool_identities(seed, n_fine, n_coarse):
    assume(n_fine >= n_coarse)
    rng = np.random.default_rng(seed)
    parent = np.concatenate([np.arange(n_coarse), rng.integers(0, n_coarse, n_fine - n_coarse)])
    rng.shuffle(parent)
    P, U = pool_matrix(parent, n_coarse), unpool_matrix(parent, n_coarse)
    y = rng.normal(size=(n_coarse, 4))
    np.testing.assert_allclose(P @ (U @ y), y, rtol=1e-12, atol=1e-12)
    x = y[parent]
    np.testing.assert_allclose(U @ (P @ x), x, rtol=1e-12, atol=1e-12)
    xs = rng.normal(size=(n_fine, 2))
    means = np.array([xs[parent == c].mean(axis=0) for c in range(n_coarse)])
    np.testing.assert_allclose(P @ xs, means, rtol=1e-12, atol=1e-12)


def test_pool_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        pool_matrix(np.array([0, 3]), 2)
    with pytest.raises(IndexOutOfRange):
        unpool_matrix(np.array([0, -1]), 2)


def test_config_radii():
    cfg = TangentConfig()
    assert cfg.radius(6, 1) == 4 / 64 and cfg.radius(6, 2) == 8 / 64 and cfg.radius(6, 3) == 16 / 64
    with pytest.raises(ValueError):
        TangentConfig(extent=4)
