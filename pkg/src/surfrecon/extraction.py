"""Marching cubes over labeled finest cells (edge-midpoint variant) and Taubin smoothing."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import LengthMismatch
from .mc_table import EDGE_CORNERS, TRIANGLES
from .octree import CORNER_OFFSETS, Octree, VertexSet
from .pointcloud_io import TriangleMesh

# table corner -> canonical corner (bit0 = x, bit1 = y, bit2 = z)
_TABLE_TO_CANON = np.array([0, 1, 3, 2, 4, 5, 7, 6])
_TABLE_OFFSETS = CORNER_OFFSETS[_TABLE_TO_CANON]

_MAX_TRIS = max(len(t) for t in TRIANGLES) // 3
_TRI_TABLE = np.full((256, _MAX_TRIS * 3), -1, dtype=np.int64)
for _case, _row in enumerate(TRIANGLES):
    _TRI_TABLE[_case, :len(_row)] = _row

# per table edge: offset of its lower corner and its axis
_EDGE_BASE = np.array([np.minimum(_TABLE_OFFSETS[a], _TABLE_OFFSETS[b]) for a, b in EDGE_CORNERS])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_TABLE_OFFSETS[a] - _TABLE_OFFSETS[b])))
                       for a, b in EDGE_CORNERS])


def edge_key(base: np.ndarray, axis: np.ndarray, depth: int) -> np.ndarray:
    """Integer code of a lattice edge from its lower corner and axis."""
    n = (1 << depth) + 1
    return ((base[..., 0] * n + base[..., 1]) * n + base[..., 2]) * 3 + axis


def decode_edge_key(key: np.ndarray, depth: int) -> tuple[np.ndarray, np.ndarray]:
    n = (1 << depth) + 1
    axis = key % 3
    rest = key // 3
    base = np.stack([rest // (n * n), (rest // n) % n, rest % n], axis=-1)
    return base, axis


def cube_cases(vertices: VertexSet, labels: np.ndarray) -> np.ndarray:
    """Table case index per finest cell; a bit is set for every back (inside) corner."""
    inside = np.asarray(labels)[vertices.cell_corners[:, _TABLE_TO_CANON]] == 0
    return (inside.astype(np.int64) << np.arange(8)).sum(axis=1)


def marching_cubes(octree: Octree, vertices: VertexSet, labels) -> TriangleMesh:
    """Triangulate the 0/1 label interface; faces point from back (0) toward front (1)."""
    labels = np.asarray(getattr(labels, "labels", labels))
    if len(labels) != len(vertices):
        raise LengthMismatch(f"{len(labels)} labels for {len(vertices)} vertices")
    if len(vertices.cell_corners) != len(octree):
        raise LengthMismatch("vertex set does not belong to this octree")
    cases = cube_cases(vertices, labels)
    active = np.flatnonzero((cases != 0) & (cases != 255))
    if len(active) == 0:
        return TriangleMesh.empty()
    rows = _TRI_TABLE[cases[active]].reshape(len(active), _MAX_TRIS, 3)
    cell_of = np.repeat(active, _MAX_TRIS)
    tri_edges = rows.reshape(-1, 3)
    keep = tri_edges[:, 0] >= 0
    cell_of, tri_edges = cell_of[keep], tri_edges[keep]
    base = octree.cells[cell_of][:, None, :] + _EDGE_BASE[tri_edges]
    keys = edge_key(base, _EDGE_AXIS[tri_edges], octree.depth)
    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    ebase, eaxis = decode_edge_key(uniq, octree.depth)
    twice = 2 * ebase
    twice[np.arange(len(uniq)), eaxis] += 1
    positions = twice / float(2 << octree.depth)
    return TriangleMesh(positions, inverse.reshape(-1, 3))


def boundary_vertices(mesh: TriangleMesh) -> np.ndarray:
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    mask = np.zeros(len(mesh.vertices), dtype=bool)
    mask[uniq[counts == 1].reshape(-1)] = True
    return mask


def umbrella_operator(mesh: TriangleMesh) -> sp.csr_matrix:
    """Uniform-weight neighbor averaging matrix (rows of isolated vertices are zero)."""
    e = mesh.edges()
    n = len(mesh.vertices)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ adj).tocsr()


def taubin_smooth(mesh: TriangleMesh, lam: float = 0.5, mu: float = -0.53, iterations: int = 10,
                  fix_boundary: bool = True) -> TriangleMesh:
    """Alternating shrink (lam) and inflate (mu) umbrella steps; connectivity unchanged."""
    if lam <= 0 or mu >= 0:
        raise ValueError("lam must be positive and mu negative")
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0 or len(mesh.triangles) == 0:
        return mesh
    avg = umbrella_operator(mesh)
    has_nbr = np.diff(avg.indptr) > 0
    movable = has_nbr & ~boundary_vertices(mesh) if fix_boundary else has_nbr
    v = mesh.vertices.copy()
    for _ in range(iterations):
        for step in (lam, mu):
            delta = avg @ v - v
            v[movable] += step * delta[movable]
    return TriangleMesh(v, mesh.triangles)
