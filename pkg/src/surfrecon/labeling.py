"""Front/back vertex labels: ground truth from a reference mesh, and a geometric baseline."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, InvalidMesh, MalformedFile, VersionMismatch
from .pointcloud_io import OrientedPointCloud, SpatialIndex, TriangleMesh

FRONT, BACK = 1, 0

_LBL_MAGIC = b"LBLS"
_LBL_VERSION = 1


@dataclass(frozen=True)
class LabelSet:
    labels: np.ndarray  # uint8 in {0, 1}; 1 = front/outside
    confidence: np.ndarray | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels).reshape(-1)
        if len(lab) and not np.isin(lab, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "labels", lab.astype(np.uint8))

    def __len__(self) -> int:
        return len(self.labels)

    def save(self, path) -> None:
        Path(path).write_bytes(_LBL_MAGIC + struct.pack("<IQ", _LBL_VERSION, len(self.labels))
                               + self.labels.tobytes())

    @classmethod
    def load(cls, path) -> "LabelSet":
        buf = Path(path).read_bytes()
        if buf[:4] != _LBL_MAGIC:
            raise MalformedFile(f"{path}: not a label file", 0, "byte")
        version, m = struct.unpack_from("<IQ", buf, 4)
        if version != _LBL_VERSION:
            raise VersionMismatch(f"{path}: label file version {version}")
        if len(buf) != 16 + m:
            raise MalformedFile(f"{path}: expected {m} labels, found {len(buf) - 16} bytes", 16, "byte")
        return cls(np.frombuffer(buf, np.uint8, m, 16).copy())


# --------------------------------------------------------------------------
# closest point on triangles

REGION_FACE, REGION_A, REGION_B, REGION_C, REGION_AB, REGION_BC, REGION_CA = range(7)


def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangle (a, b, c) to p, row-wise, plus the feature region hit."""
    ab, ac, ap = b - a, c - a, p - a
    dot = lambda x, y: np.einsum("ij,ij->i", x, y)
    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = len(p)
    out = np.empty((n, 3))
    region = np.full(n, -1, dtype=np.int8)
    todo = np.ones(n, dtype=bool)

    def take(mask, pts, reg):
        nonlocal todo
        m = mask & todo
        out[m] = pts[m] if pts.ndim == 2 else pts
        region[m] = reg
        todo &= ~m

    take((d1 <= 0) & (d2 <= 0), a, REGION_A)
    take((d3 >= 0) & (d4 <= d3), b, REGION_B)
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0) & todo
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        take(m, a + v[:, None] * ab, REGION_AB)
        take((d6 >= 0) & (d5 <= d6), c, REGION_C)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        w = d2 / (d2 - d6)
        take(m, a + w[:, None] * ac, REGION_CA)
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take(m, b + w[:, None] * (c - b), REGION_BC)
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        take(np.ones(n, dtype=bool), a + ab * v[:, None] + ac * w[:, None], REGION_FACE)
    return out, region


class MeshSideOracle:
    """Closest-point queries with angle-weighted pseudo-normals on a consistently wound mesh."""

    def __init__(self, mesh: TriangleMesh):
        if len(mesh.triangles) == 0:
            raise InvalidMesh("reference mesh has no triangles")
        self.mesh = mesh
        V, T = mesh.vertices, mesh.triangles
        self._check_winding(T)
        fn = mesh.face_normals()
        self.face_normals = fn
        # angle-weighted vertex pseudo-normals
        vn = np.zeros_like(V)
        for k in range(3):
            i, j, l = T[:, k], T[:, (k + 1) % 3], T[:, (k + 2) % 3]
            e1 = V[j] - V[i]
            e2 = V[l] - V[i]
            cosang = np.einsum("ij,ij->i", e1, e2) / np.maximum(
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
            ang = np.arccos(np.clip(cosang, -1, 1))
            np.add.at(vn, i, ang[:, None] * fn)
        self.vertex_normals = vn
        # edge pseudo-normals: sum of the incident face normals
        e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        e.sort(axis=1)
        self._edge_keys, inv, counts = np.unique(e[:, 0] * len(V) + e[:, 1], return_inverse=True,
                                                 return_counts=True)
        inv = inv.reshape(-1)
        en = np.zeros((len(self._edge_keys), 3))
        np.add.at(en, inv, np.tile(fn, (3, 1)))
        self.edge_normals = en
        self.boundary_edge = counts == 1
        # face -> edge ids: columns ab, bc, ca
        self._face_edges = inv.reshape(3, -1).T
        bv = np.zeros(len(V), dtype=bool)
        be = e[inv.reshape(-1)][self.boundary_edge[inv]] if self.boundary_edge.any() else np.zeros((0, 2), int)
        bv[be.reshape(-1)] = True
        self.boundary_vertex = bv

        tri = V[T]
        self._centroids = tri.mean(axis=1)
        self._rmax = float(np.linalg.norm(tri - self._centroids[:, None, :], axis=2).max())
        self._tree = cKDTree(self._centroids)

    @staticmethod
    def _check_winding(T: np.ndarray) -> None:
        directed = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        n = int(T.max()) + 1
        keys = directed[:, 0] * n + directed[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise InvalidMesh("inconsistent winding or non-manifold edge in reference mesh")

    def closest(self, queries: np.ndarray, chunk: int = 20_000):
        """Closest point, owning triangle and region for every query."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        V, T = self.mesh.vertices, self.mesh.triangles
        cps = np.empty_like(queries)
        tri_ids = np.empty(len(queries), dtype=np.int64)
        regions = np.empty(len(queries), dtype=np.int8)
        dists = np.empty(len(queries))
        for a in range(0, len(queries), chunk):
            q = queries[a:a + chunk]
            _, t0 = self._tree.query(q)
            p0, _ = closest_point_on_triangles(q, V[T[t0, 0]], V[T[t0, 1]], V[T[t0, 2]])
            bound = np.linalg.norm(p0 - q, axis=1) + self._rmax
            cand = self._tree.query_ball_point(q, bound * (1 + 1e-12) + 1e-15)
            lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(cand))
            qi = np.repeat(np.arange(len(q)), lens)
            ti = np.fromiter((t for c in cand for t in sorted(c)), dtype=np.int64, count=int(lens.sum()))
            cp, reg = closest_point_on_triangles(q[qi], V[T[ti, 0]], V[T[ti, 1]], V[T[ti, 2]])
            d2 = np.einsum("ij,ij->i", cp - q[qi], cp - q[qi])
            order = np.lexsort((ti, d2, qi))
            first = np.r_[0, np.flatnonzero(np.diff(qi[order])) + 1]
            pick = order[first]
            cps[a:a + len(q)] = cp[pick]
            tri_ids[a:a + len(q)] = ti[pick]
            regions[a:a + len(q)] = reg[pick]
            dists[a:a + len(q)] = np.sqrt(d2[pick])
        return cps, tri_ids, regions, dists

    def pseudo_normals(self, tri_ids: np.ndarray, regions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pseudo-normal of the closest feature and whether that feature is on an open boundary."""
        T = self.mesh.triangles
        n = self.face_normals[tri_ids].copy()
        boundary = np.zeros(len(tri_ids), dtype=bool)
        for reg, k in ((REGION_A, 0), (REGION_B, 1), (REGION_C, 2)):
            m = regions == reg
            vid = T[tri_ids[m], k]
            n[m] = self.vertex_normals[vid]
            boundary[m] = self.boundary_vertex[vid]
        for reg, k in ((REGION_AB, 0), (REGION_BC, 1), (REGION_CA, 2)):
            m = regions == reg
            eid = self._face_edges[tri_ids[m], k]
            n[m] = self.edge_normals[eid]
            boundary[m] = self.boundary_edge[eid]
        return n, boundary


def label_from_mesh(vertices, mesh: TriangleMesh | MeshSideOracle) -> LabelSet:
    """Label 1 where (v - c) . n_c > 0 for the closest mesh point c; ties label 1 with confidence 0."""
    positions = vertices.coordinates if hasattr(vertices, "coordinates") else np.asarray(vertices)
    oracle = mesh if isinstance(mesh, MeshSideOracle) else MeshSideOracle(mesh)
    cps, tri_ids, regions, dists = oracle.closest(positions)
    normals, boundary = oracle.pseudo_normals(tri_ids, regions)
    side = np.einsum("ij,ij->i", positions - cps, normals)
    labels = (side >= 0).astype(np.uint8)
    conf = np.abs(side)
    conf[side == 0] = 0.0
    conf[boundary] = 0.0
    return LabelSet(labels, conf)


def baseline_classify(vertices, cloud: OrientedPointCloud, radius: float,
                      index: SpatialIndex | None = None, chunk: int = 50_000) -> LabelSet:
    """Gaussian-weighted signed projection distance of neighbors within ``radius``.

    Vertices with no neighbor fall back to the nearest single point.
    """
    if cloud.count == 0:
        raise EmptyCloud("baseline classification needs at least one point")
    if radius <= 0:
        raise ValueError("radius must be positive")
    positions = vertices.coordinates if hasattr(vertices, "coordinates") else np.asarray(vertices)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    index = index if index is not None else SpatialIndex(cloud.positions)
    sigma2 = (radius / 2.0) ** 2
    score = np.zeros(len(positions))
    count = np.zeros(len(positions), dtype=np.int64)
    for a in range(0, len(positions), chunk):
        q = positions[a:a + chunk]
        qi, si = index.radius_pairs(q, radius)
        d = q[qi] - cloud.positions[si]
        w = np.exp(-np.einsum("ij,ij->i", d, d) / sigma2)
        s = w * np.einsum("ij,ij->i", d, cloud.normals[si])
        score[a:a + len(q)] = np.bincount(qi, s, minlength=len(q))
        count[a:a + len(q)] = np.bincount(qi, minlength=len(q))
    lonely = np.flatnonzero(count == 0)
    if len(lonely):
        _, nn = index.nearest(positions[lonely])
        d = positions[lonely] - cloud.positions[nn]
        score[lonely] = np.einsum("ij,ij->i", d, cloud.normals[nn])
    return LabelSet((score >= 0).astype(np.uint8), np.abs(score))
