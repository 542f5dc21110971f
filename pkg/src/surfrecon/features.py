"""Per-part precomputation: everything the classifier consumes besides its weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import arrayio
from .pointcloud_io import OrientedPointCloud, SpatialIndex
from .tangent import (
    GridLevel,
    TangentConfig,
    build_pyramid,
    build_tangent_level,
    check_depth,
    compute_signals,
    hash_level,
    pool_matrix,
    unpool_matrix,
    _floor_cells,
)

N_SCALES = 3


@dataclass
class PointInputs:
    depth: int
    extent: int
    signal: np.ndarray  # (L1, l*l, 4)
    tables: list  # per scale: (L_s * l*l) x L_s
    pool: list  # scale s -> s+1: L_{s+1} x L_s
    unpool: list  # scale s+1 -> s: L_s x L_{s+1}
    levels: list = field(default_factory=list, repr=False)  # GridLevel per scale
    _cast: dict = field(default_factory=dict, repr=False, compare=False)

    def cast(self, dtype) -> dict:
        """Inputs converted to ``dtype``, cached so parts sharing these points share the copy."""
        dtype = np.dtype(dtype)
        if dtype not in self._cast:
            self._cast[dtype] = {
                "p_signal": self.signal.astype(dtype),
                "p_tables": [t.astype(dtype) for t in self.tables],
                "p_pool": [t.astype(dtype) for t in self.pool],
                "p_unpool": [t.astype(dtype) for t in self.unpool],
            }
        return self._cast[dtype]

    def to_bytes(self) -> bytes:
        return arrayio.dumps(self.to_arrays())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "PointInputs":
        return cls.from_arrays(arrayio.loads(buf))

    @property
    def sizes(self) -> tuple:
        return tuple(t.shape[1] for t in self.tables)

    def to_arrays(self, prefix: str = "p") -> dict:
        out = {f"{prefix}.meta": np.array([self.depth, self.extent], dtype=np.int64),
               f"{prefix}.signal": self.signal}
        for s, t in enumerate(self.tables):
            out[f"{prefix}.table{s}"] = t
        for s, (p, u) in enumerate(zip(self.pool, self.unpool)):
            out[f"{prefix}.pool{s}"] = p
            out[f"{prefix}.unpool{s}"] = u
        for s, lv in enumerate(self.levels):
            out[f"{prefix}.pos{s}"] = lv.positions
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "p") -> "PointInputs":
        depth, extent = (int(x) for x in arrays[f"{prefix}.meta"])
        tables = [arrays[f"{prefix}.table{s}"] for s in range(N_SCALES)]
        pool = [arrays[f"{prefix}.pool{s}"] for s in range(N_SCALES - 1)]
        unpool = [arrays[f"{prefix}.unpool{s}"] for s in range(N_SCALES - 1)]
        return cls(depth, extent, arrays[f"{prefix}.signal"], tables, pool, unpool)


@dataclass
class VertexInputs:
    signal: np.ndarray  # (M, l*l, 4)
    tables: list  # per scale: (V_s * l*l) x L_s (sources are point reps of the same scale)
    unpool: list  # vertex scale s+1 -> s: V_s x V_{s+1}

    @property
    def count(self) -> int:
        return self.signal.shape[0]

    def to_arrays(self, prefix: str = "v") -> dict:
        out = {f"{prefix}.signal": self.signal}
        for s, t in enumerate(self.tables):
            out[f"{prefix}.table{s}"] = t
        for s, u in enumerate(self.unpool):
            out[f"{prefix}.unpool{s}"] = u
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "v") -> "VertexInputs":
        return cls(arrays[f"{prefix}.signal"],
                   [arrays[f"{prefix}.table{s}"] for s in range(N_SCALES)],
                   [arrays[f"{prefix}.unpool{s}"] for s in range(N_SCALES - 1)])


@dataclass
class PartInputs:
    """One part's precomputed classifier inputs; ``labels`` present for training."""

    points: PointInputs
    vertices: VertexInputs
    labels: np.ndarray | None = None
    _cast: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def depth(self) -> int:
        return self.points.depth

    @property
    def extent(self) -> int:
        return self.points.extent

    @property
    def n_vertices(self) -> int:
        return self.vertices.count

    def cast(self, dtype) -> dict:
        """Inputs converted to ``dtype`` (cached per dtype)."""
        dtype = np.dtype(dtype)
        if dtype not in self._cast:
            v = self.vertices
            self._cast[dtype] = {
                "v_signal": v.signal.astype(dtype),
                "v_tables": [t.astype(dtype) for t in v.tables],
                "v_unpool": [t.astype(dtype) for t in v.unpool],
            }
        return {**self.points.cast(dtype), **self._cast[dtype]}

    def to_bytes(self, include_points: bool = True) -> bytes:
        """Serialize; without points the reader must supply them to ``from_bytes``."""
        arrays = self.vertices.to_arrays()
        if include_points:
            arrays.update(self.points.to_arrays())
        if self.labels is not None:
            arrays["labels"] = np.asarray(self.labels, dtype=np.uint8)
        return arrayio.dumps(arrays)

    @classmethod
    def from_bytes(cls, buf: bytes, points: PointInputs | None = None) -> "PartInputs":
        arrays = arrayio.loads(buf)
        labels = arrays.get("labels")
        if points is None:
            if "p.meta" not in arrays:
                raise ValueError("part was stored without point inputs; pass them explicitly")
            points = PointInputs.from_arrays(arrays)
        return cls(points, VertexInputs.from_arrays(arrays),
                   None if labels is None else labels.astype(np.int64))


def prepare_point_inputs(cloud: OrientedPointCloud, depth: int,
                         cfg: TangentConfig = TangentConfig()) -> PointInputs:
    check_depth(depth)
    pyr = build_pyramid(cloud.positions, np.zeros((0, 3)), depth, cloud.normals,
                        np.zeros((0, 3), dtype=np.int64))
    levels = pyr.point_levels
    tables, frames = [], []
    signal = None
    for s, lv in enumerate(levels, start=1):
        index = SpatialIndex(lv.positions)
        tl = build_tangent_level(lv.positions, lv.positions, lv.normals, cfg.radius(depth, s),
                                 cfg.extent, cfg.max_per_pixel, cfg.rank_tol, index)
        tables.append(tl.table.matrix)
        if s == 1:
            signal = compute_signals(tl.table, tl.frames, lv.positions, lv.normals)
    pool = [pool_matrix(levels[s + 1].parent, len(levels[s + 1])) for s in range(N_SCALES - 1)]
    unpool = [unpool_matrix(levels[s + 1].parent, len(levels[s + 1])) for s in range(N_SCALES - 1)]
    return PointInputs(depth, cfg.extent, signal, tables, pool, unpool, levels)


def vertex_levels(vertex_lattice: np.ndarray, depth: int) -> list[GridLevel]:
    pyr = build_pyramid(np.zeros((0, 3)), np.asarray(vertex_lattice) / float(1 << depth), depth,
                        vertex_lattice=vertex_lattice)
    return pyr.vertex_levels


def prepare_vertex_inputs(vertex_lattice: np.ndarray, points: PointInputs,
                          cfg: TangentConfig = TangentConfig()) -> VertexInputs:
    if not points.levels:
        raise ValueError("point inputs lack pyramid levels; rebuild them with prepare_point_inputs")
    depth = points.depth
    vlevels = vertex_levels(np.asarray(vertex_lattice, dtype=np.int64).reshape(-1, 3), depth)
    tables = []
    signal = None
    for s, (vl, pl) in enumerate(zip(vlevels, points.levels), start=1):
        tl = build_tangent_level(vl.positions, pl.positions, pl.normals, cfg.radius(depth, s),
                                 cfg.extent, cfg.max_per_pixel, cfg.rank_tol,
                                 SpatialIndex(pl.positions))
        tables.append(tl.table.matrix)
        if s == 1:
            signal = compute_signals(tl.table, tl.frames, pl.positions, pl.normals)
    unpool = [unpool_matrix(vlevels[s + 1].parent, len(vlevels[s + 1])) for s in range(N_SCALES - 1)]
    return VertexInputs(signal, tables, unpool)


def prepare_part(cloud: OrientedPointCloud, vertex_lattice: np.ndarray, depth: int,
                 cfg: TangentConfig = TangentConfig(), labels: np.ndarray | None = None,
                 points: PointInputs | None = None) -> PartInputs:
    if points is None:
        points = prepare_point_inputs(cloud, depth, cfg)
    verts = prepare_vertex_inputs(vertex_lattice, points, cfg)
    return PartInputs(points, verts, None if labels is None else np.asarray(labels, dtype=np.int64))
