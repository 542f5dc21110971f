"""Oriented tangent frames, tangent-image gather tables, input signals and grid-hash pyramids."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from ._kernels import FRAME_DEGENERATE, FRAME_EMPTY, FRAME_FEW, FRAME_OK  # noqa: F401
from .errors import DepthTooShallow, IndexOutOfRange, MalformedFile, TooFewNeighbors
from .octree import morton_encode
from .pointcloud_io import SpatialIndex


N_SIGNALS = 4  # signed distance + normal in frame coordinates

# pairs processed per chunk when building tables (bounds peak memory)
_PAIR_BUDGET = 4_000_000


@dataclass(frozen=True)
class TangentConfig:
    extent: int = 3
    radius_scale: float = 4.0  # initial radius = radius_scale / 2^D
    radius_growth: float = 2.0
    max_per_pixel: int | None = 8
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.extent < 1 or self.extent % 2 == 0:
            raise ValueError("tangent image extent must be a positive odd integer")
        if self.radius_scale <= 0 or self.radius_growth < 1:
            raise ValueError("radius_scale must be > 0 and radius_growth >= 1")
        if self.max_per_pixel is not None and self.max_per_pixel < 1:
            raise ValueError("max_per_pixel must be >= 1 or None")

    @property
    def pixels(self) -> int:
        return self.extent * self.extent

    def radius(self, depth: int, scale: int) -> float:
        return self.radius_scale / (1 << depth) * self.radius_growth ** (scale - 1)


@dataclass(frozen=True)
class TangentFrame:
    origin: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    v: np.ndarray
    degenerate: bool = False
    mean_normal: np.ndarray | None = None


@dataclass
class FrameBatch:
    """Frames for many locations, stored column-wise."""

    origins: np.ndarray
    normals: np.ndarray
    u: np.ndarray
    v: np.ndarray
    flags: np.ndarray
    mean_normals: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, i: int) -> TangentFrame:
        return TangentFrame(self.origins[i], self.normals[i], self.u[i], self.v[i],
                            bool(self.flags[i] != FRAME_OK), self.mean_normals[i])

    @staticmethod
    def concat(parts: list["FrameBatch"]) -> "FrameBatch":
        if not parts:
            z = np.zeros((0, 3))
            return FrameBatch(z, z.copy(), z.copy(), z.copy(), np.zeros(0, np.int8), z.copy())
        return FrameBatch(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("origins", "normals", "u", "v", "flags", "mean_normals")))


def _frames(queries: np.ndarray, indptr: np.ndarray, cols: np.ndarray, src_pos: np.ndarray,
            src_nrm: np.ndarray, rank_tol: float) -> FrameBatch:
    L = len(queries)
    n, u, v = np.empty((L, 3)), np.empty((L, 3)), np.empty((L, 3))
    na = np.empty((L, 3))
    flags = np.empty(L, dtype=np.int8)
    for i in range(L):
        flags[i] = _kernels._frame(queries[i], cols[indptr[i]:indptr[i + 1]], src_pos, src_nrm,
                                   rank_tol, n[i], u[i], v[i], na[i])
    return FrameBatch(queries.copy(), n, u, v, flags, na)


def estimate_frame(q, neighbor_positions, neighbor_normals, rank_tol: float = 1e-10) -> TangentFrame:
    """Covariance-based tangent frame whose normal agrees with the mean input normal."""
    P = np.ascontiguousarray(neighbor_positions, dtype=np.float64).reshape(-1, 3)
    N = np.ascontiguousarray(neighbor_normals, dtype=np.float64).reshape(-1, 3)
    if len(P) < 3:
        raise TooFewNeighbors(f"need at least 3 neighbors, got {len(P)}")
    q = np.asarray(q, dtype=np.float64).reshape(1, 3)
    return _frames(q, np.array([0, len(P)]), np.arange(len(P)), P, N, rank_tol)[0]


# --------------------------------------------------------------------------
# gather tables

_GT_MAGIC = b"GTBL"
_GT_VERSION = 1


@dataclass
class GatherTable:
    """Sparse (locations * pixels) x sources averaging matrix.

    Row ``loc * l*l + pixel`` lists the sources binned into that pixel with
    weights summing to one; an empty row is a sentinel pixel.
    """

    matrix: sp.csr_matrix
    extent: int

    @property
    def pixels(self) -> int:
        return self.extent * self.extent

    @property
    def n_locations(self) -> int:
        return self.matrix.shape[0] // self.pixels

    @property
    def n_sources(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def pixel_entries(self, loc: int, pixel: int) -> tuple[np.ndarray, np.ndarray]:
        row = loc * self.pixels + pixel
        a, b = self.matrix.indptr[row], self.matrix.indptr[row + 1]
        return self.matrix.indices[a:b].astype(np.int64), self.matrix.data[a:b]

    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.matrix.shape[0]), np.diff(self.matrix.indptr))

    def to_bytes(self) -> bytes:
        m = self.matrix
        head = _GT_MAGIC + struct.pack("<IqqIq", _GT_VERSION, self.n_locations, self.n_sources,
                                       self.extent, m.nnz)
        return (head + m.indptr.astype("<i8").tobytes() + m.indices.astype("<i8").tobytes()
                + m.data.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["GatherTable", int]:
        if buf[offset:offset + 4] != _GT_MAGIC:
            raise MalformedFile("not a gather table", offset, "byte")
        version, L, S, extent, nnz = struct.unpack_from("<IqqIq", buf, offset + 4)
        if version != _GT_VERSION:
            raise MalformedFile(f"gather table version {version} unsupported", offset, "byte")
        pos = offset + 4 + struct.calcsize("<IqqIq")
        rows = L * extent * extent
        need = (rows + 1) * 8 + nnz * 16
        if pos + need > len(buf):
            raise MalformedFile("truncated gather table", pos, "byte")
        indptr = np.frombuffer(buf, "<i8", rows + 1, pos); pos += (rows + 1) * 8
        indices = np.frombuffer(buf, "<i8", nnz, pos); pos += nnz * 8
        data = np.frombuffer(buf, "<f8", nnz, pos); pos += nnz * 8
        mat = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(rows, S))
        return cls(mat, extent), pos


def _table(rows: np.ndarray, cols: np.ndarray, n_rows: int, n_sources: int, extent: int) -> GatherTable:
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.r_[0, np.cumsum(counts)].astype(np.int64)
    mat = sp.csr_matrix((1.0 / counts[rows], cols, indptr), shape=(n_rows, n_sources))
    return GatherTable(mat, extent)


def _cap(max_per_pixel: int | None) -> int:
    return 0 if max_per_pixel is None else int(max_per_pixel)


@dataclass
class TangentLevel:
    frames: FrameBatch
    table: GatherTable


def build_tangent_level(queries: np.ndarray, src_positions: np.ndarray, src_normals: np.ndarray,
                        radius: float, extent: int = 3, max_per_pixel: int | None = None,
                        rank_tol: float = 1e-10, index: SpatialIndex | None = None) -> TangentLevel:
    """Frames and gather table for every query against the sources within ``radius``.

    Frames come from the covariance of all sources in the ball; the table bins
    the same sources into the frame's tangent image.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    src_positions = np.ascontiguousarray(src_positions, dtype=np.float64).reshape(-1, 3)
    src_normals = np.ascontiguousarray(src_normals, dtype=np.float64).reshape(-1, 3)
    index = index if index is not None else SpatialIndex(src_positions)
    P = extent * extent
    L = len(queries)
    frames, rows_all, cols_all = [], [], []
    # rough pair estimate to size chunks
    probe = min(L, 256)
    est = 1.0
    if probe:
        sample = queries[np.linspace(0, L - 1, probe).astype(np.int64)]
        est = max(1.0, len(index.radius_pairs(sample, radius)[0]) / probe)
    chunk = max(1, int(_PAIR_BUDGET / est))
    for a in range(0, L, chunk):
        q = queries[a:a + chunk]
        indptr, cols = index.radius_csr(q, radius)
        n, u, v, flags, na, rows, kept = _kernels.tangent_level(
            q, indptr, cols, src_positions, src_normals, radius, extent, _cap(max_per_pixel),
            rank_tol)
        frames.append(FrameBatch(q.copy(), n, u, v, flags, na))
        rows_all.append(rows + a * P)
        cols_all.append(kept)
    rows = np.concatenate(rows_all) if rows_all else np.zeros(0, np.int64)
    cols = np.concatenate(cols_all) if cols_all else np.zeros(0, np.int64)
    return TangentLevel(FrameBatch.concat(frames), _table(rows, cols, L * P, len(src_positions), extent))


def precompute_gather(queries: np.ndarray, frames: FrameBatch, index: SpatialIndex, radius: float,
                      extent: int = 3, max_per_pixel: int | None = None) -> GatherTable:
    """Gather table for given frames (frames aligned one-to-one with queries)."""
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(frames) != len(queries):
        raise ValueError("frames must align one-to-one with queries")
    if radius <= 0 or extent % 2 == 0:
        raise ValueError("radius must be positive and extent odd")
    indptr, cols = index.radius_csr(queries, radius)
    rows, kept = _kernels.bin_with_frames(
        queries, indptr, cols, index.positions, np.ascontiguousarray(frames.u, dtype=np.float64),
        np.ascontiguousarray(frames.v, dtype=np.float64), radius, extent, _cap(max_per_pixel))
    return _table(rows, kept, len(queries) * extent * extent, len(index), extent)


def compute_signals(table: GatherTable, frames: FrameBatch, src_positions: np.ndarray,
                    src_normals: np.ndarray) -> np.ndarray:
    """Tangent images of shape (locations, l*l, 4): signed plane distance, then normal in (u, v, n)."""
    P = table.pixels
    L = table.n_locations
    if len(frames) != L:
        raise ValueError("frames and table disagree on location count")
    rows = table.rows()
    cols = table.matrix.indices
    w = table.matrix.data
    loc = rows // P
    d = src_positions[cols] - frames.origins[loc]
    nrm = src_normals[cols]
    vals = (
        np.einsum("ij,ij->i", d, frames.normals[loc]),
        np.einsum("ij,ij->i", nrm, frames.u[loc]),
        np.einsum("ij,ij->i", nrm, frames.v[loc]),
        np.einsum("ij,ij->i", nrm, frames.normals[loc]),
    )
    out = np.stack([np.bincount(rows, w * val, minlength=L * P) for val in vals], axis=1)
    return out.reshape(L, P, N_SIGNALS)


# --------------------------------------------------------------------------
# grid-hash pyramid


@dataclass
class GridLevel:
    """One scale: representatives of occupied hash cells and the fine-to-coarse map."""

    cell_size: float | None  # None: identity level (no hashing)
    cells: np.ndarray
    positions: np.ndarray
    normals: np.ndarray | None
    parent: np.ndarray  # for each element of the finer level, index into this level
    counts: np.ndarray | None = None  # raw members per cell
    normal_mean: np.ndarray | None = None  # unnormalized mean of raw member normals

    def __len__(self) -> int:
        return len(self.positions)


def _group_mean(parent: np.ndarray, n: int, values: np.ndarray,
                weights: np.ndarray | None = None) -> np.ndarray:
    w = np.ones(len(parent)) if weights is None else np.asarray(weights, dtype=np.float64)
    total = np.bincount(parent, w, minlength=n)
    return np.stack([np.bincount(parent, values[:, a] * w, minlength=n)
                     for a in range(values.shape[1])], axis=1) / total[:, None]


def hash_level(cells_fine: np.ndarray, positions_fine: np.ndarray, normals_fine: np.ndarray | None,
               cells_coarse_of_fine: np.ndarray, cell_size: float,
               fine: GridLevel | None = None) -> GridLevel:
    """Group fine elements by coarse cell; representatives are centroids of all raw members.

    When ``fine`` is a hashed level its member counts weight the averages, so a
    coarse representative is the centroid of the raw elements, not of the finer
    representatives.
    """
    codes = morton_encode(cells_coarse_of_fine)
    uniq, first, parent = np.unique(codes, return_index=True, return_inverse=True)
    parent = parent.astype(np.int64).reshape(-1)
    n = len(uniq)
    w = fine.counts if fine is not None else None
    counts = np.bincount(parent, w, minlength=n)
    pos = _group_mean(parent, n, positions_fine, w)
    nrm = mean = None
    if normals_fine is not None:
        src = fine.normal_mean if fine is not None and fine.normal_mean is not None else normals_fine
        mean = _group_mean(parent, n, np.asarray(src, dtype=np.float64), w)
        length = np.linalg.norm(mean, axis=1, keepdims=True)
        nrm = np.divide(mean, length, out=np.zeros_like(mean), where=length > 0)
    return GridLevel(cell_size, cells_coarse_of_fine[first], pos, nrm, parent, counts, mean)


def _floor_cells(positions: np.ndarray, inv_size: int) -> np.ndarray:
    return np.floor(positions * inv_size).astype(np.int64)


@dataclass
class ScalePyramid:
    depth: int
    point_levels: list[GridLevel]  # scale 1..3; scale 1's parent maps raw points
    vertex_levels: list[GridLevel]  # scale 1 identity

    @property
    def point_cell_sizes(self) -> tuple:
        return tuple(l.cell_size for l in self.point_levels)

    @property
    def vertex_cell_sizes(self) -> tuple:
        return tuple(l.cell_size for l in self.vertex_levels)


def check_depth(depth: int) -> None:
    if depth < 3:
        raise DepthTooShallow(f"depth {depth} < 3 leaves no room for two vertex pooling scales")


def build_pyramid(point_positions: np.ndarray, vertex_positions: np.ndarray, depth: int,
                  point_normals: np.ndarray | None = None,
                  vertex_lattice: np.ndarray | None = None) -> ScalePyramid:
    """Three point scales at 1/2^(D+2), 1/2^(D+1), 1/2^D and three vertex scales
    (identity, 1/2^(D-1), 1/2^(D-2))."""
    check_depth(depth)
    point_positions = np.asarray(point_positions, dtype=np.float64).reshape(-1, 3)
    vertex_positions = np.asarray(vertex_positions, dtype=np.float64).reshape(-1, 3)

    c0 = _floor_cells(point_positions, 1 << (depth + 2))
    p1 = hash_level(c0, point_positions, point_normals, c0, 1.0 / (1 << (depth + 2)))
    p2 = hash_level(p1.cells, p1.positions, p1.normals, p1.cells >> 1, 1.0 / (1 << (depth + 1)), p1)
    p3 = hash_level(p2.cells, p2.positions, p2.normals, p2.cells >> 1, 1.0 / (1 << depth), p2)

    if vertex_lattice is None:
        vertex_lattice = _floor_cells(vertex_positions, 1 << depth)
    vertex_lattice = np.asarray(vertex_lattice, dtype=np.int64).reshape(-1, 3)
    v1 = GridLevel(None, vertex_lattice, vertex_positions, None,
                   np.arange(len(vertex_positions), dtype=np.int64))
    v2 = hash_level(vertex_lattice, vertex_positions, None, vertex_lattice >> 1,
                    1.0 / (1 << (depth - 1)))
    v3 = hash_level(v2.cells, v2.positions, None, v2.cells >> 1, 1.0 / (1 << (depth - 2)), v2)
    return ScalePyramid(depth, [p1, p2, p3], [v1, v2, v3])


def pool_matrix(parent: np.ndarray, n_coarse: int) -> sp.csr_matrix:
    """Coarse x fine matrix averaging each cell's members."""
    parent = np.asarray(parent, dtype=np.int64)
    if len(parent) and (parent.min() < 0 or parent.max() >= n_coarse):
        raise IndexOutOfRange("pool index refers to a missing coarse cell")
    counts = np.bincount(parent, minlength=n_coarse).astype(np.float64)
    fine = np.arange(len(parent))
    order = np.lexsort((fine, parent))
    rows = parent[order]
    indptr = np.r_[0, np.cumsum(counts)].astype(np.int64)
    return sp.csr_matrix((1.0 / counts[rows], fine[order], indptr), shape=(n_coarse, len(parent)))


def unpool_matrix(parent: np.ndarray, n_coarse: int) -> sp.csr_matrix:
    """Fine x coarse 0/1 matrix broadcasting each cell value to its members."""
    parent = np.asarray(parent, dtype=np.int64)
    if len(parent) and (parent.min() < 0 or parent.max() >= n_coarse):
        raise IndexOutOfRange("unpool index refers to a missing coarse cell")
    n = len(parent)
    return sp.csr_matrix((np.ones(n), parent, np.arange(n + 1)), shape=(n, n_coarse))
