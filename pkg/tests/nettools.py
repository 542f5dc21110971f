"""Small classifier parts and a loop-based reference forward pass."""

import numpy as np

from surfrecon.features import prepare_part
from surfrecon.octree import build_octree, extract_finest_vertices
from surfrecon.pointcloud_io import OrientedPointCloud

from conftest import sphere_cloud


def tiny_part(n_points=150, depth=3, seed=0, max_vertices=None, labels_seed=None):
    cloud = sphere_cloud(n_points, seed=seed)
    lattice = extract_finest_vertices(build_octree(cloud, depth)).lattice
    if max_vertices is not None:
        lattice = lattice[:max_vertices]
    labels = None
    if labels_seed is not None:
        labels = np.random.default_rng(labels_seed).integers(0, 2, len(lattice))
    return prepare_part(cloud, lattice, depth, labels=labels)


def toy_part():
    """One vertex, four points."""
    pts = np.array([[0.50, 0.50, 0.50], [0.53, 0.50, 0.50], [0.50, 0.53, 0.51], [0.47, 0.48, 0.49]])
    nrm = np.array([[0, 0, 1.0], [0, 0.6, 0.8], [0.6, 0, 0.8], [0, 0, 1.0]])
    cloud = OrientedPointCloud(pts, nrm)
    return prepare_part(cloud, np.array([[4, 4, 4]]), 3)


def _rows(m):
    m = m.tocsr()
    return [list(zip(m.indices[m.indptr[r]:m.indptr[r + 1]], m.data[m.indptr[r]:m.indptr[r + 1]]))
            for r in range(m.shape[0])]


def _gather(table, x, P):
    rows = _rows(table)
    C = x.shape[1]
    out = np.zeros((len(rows) // P, P * C))
    for r, entries in enumerate(rows):
        q, pix = divmod(r, P)
        for j, w in entries:
            out[q, pix * C:(pix + 1) * C] += w * x[j]
    return out


def _parent(unpool):
    # each fine row of an unpool matrix has exactly one coarse column
    return np.array([e[0][0] for e in _rows(unpool)])


def _mean_pool(x, parent):
    n = parent.max() + 1
    out = np.zeros((n, x.shape[1]))
    for c in range(n):
        out[c] = x[parent == c].mean(axis=0)
    return out


def reference_logits(part, state):
    """Straight-line forward with explicit loops; float64 throughout."""
    cfg = state.config
    p = {k: v.astype(np.float64) for k, v in state.params.items()}
    P = cfg.extent ** 2

    def act(z):
        return np.where(z > 0, z, cfg.slope * z)

    def dense(x, name):
        return x @ p[f"{name}.w"] + p[f"{name}.b"]

    def tconv(x, table, name):
        return dense(_gather(table, x, P), name)

    pts, verts = part.points, part.vertices
    G = pts.tables
    par = [_parent(u) for u in pts.unpool]
    x = act(dense(pts.signal.reshape(len(pts.signal), -1), "p1_sig"))
    for k in range(1, cfg.convs_per_scale):
        x = act(tconv(x, G[0], f"p1_conv{k}"))
    x1 = x
    x = _mean_pool(x1, par[0])
    for k in range(cfg.convs_per_scale):
        x = act(tconv(x, G[1], f"p2_conv{k}"))
    x2 = x
    x = _mean_pool(x2, par[1])
    for k in range(cfg.convs_per_scale):
        x = act(tconv(x, G[2], f"p3_conv{k}"))
    x3 = x
    d2 = act(tconv(np.hstack([x3[par[1]], x2]), G[1], "d2"))
    d1 = act(tconv(np.hstack([d2[par[0]], x1]), G[0], "d1"))
    H = verts.tables
    vpar = [_parent(u) for u in verts.unpool]
    v3 = act(tconv(x3, H[2], "v3"))
    v2 = act(tconv(d2, H[1], "v2"))
    v1 = act(tconv(d1, H[0], "v1"))
    vs = act(dense(verts.signal.reshape(len(verts.signal), -1), "v1_sig"))
    u2 = act(dense(np.hstack([v3[vpar[1]], v2]), "u2"))
    u1 = act(dense(np.hstack([u2[vpar[0]], v1, vs]), "u1"))
    return dense(u1, "head").reshape(-1)
