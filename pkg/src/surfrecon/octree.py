"""Finest-level octree cells with one-ring dilation, and their corner vertices."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DepthOutOfRange, InputError
from .pointcloud_io import OrientedPointCloud

MAX_DEPTH = 12

# canonical corner order: bit 0 -> +x, bit 1 -> +y, bit 2 -> +z
CORNER_OFFSETS = np.array(
    [[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64
)

_NEIGHBOR_OFFSETS = np.array(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=np.int64
)


def _spread_bits(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64) & np.uint64(0x1FFFFF)
    x = (x | (x << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    x = (x | (x << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    x = (x | (x << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    x = (x | (x << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    x = (x | (x << np.uint64(2))) & np.uint64(0x1249249249249249)
    return x


def morton_encode(ijk: np.ndarray) -> np.ndarray:
    """Interleave the bits of non-negative integer coordinates (up to 21 bits each)."""
    ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
    code = _spread_bits(ijk[:, 0]) | (_spread_bits(ijk[:, 1]) << np.uint64(1)) | (
        _spread_bits(ijk[:, 2]) << np.uint64(2)
    )
    return code.astype(np.int64)


@dataclass(frozen=True)
class Octree:
    depth: int
    cells: np.ndarray  # (n, 3) int64, sorted by Morton code
    codes: np.ndarray  # (n,) int64

    @property
    def resolution(self) -> int:
        return 1 << self.depth

    @property
    def cell_size(self) -> float:
        return 1.0 / self.resolution

    def __len__(self) -> int:
        return len(self.cells)

    @classmethod
    def from_cells(cls, depth: int, cells: np.ndarray) -> "Octree":
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
        codes, first = np.unique(morton_encode(cells), return_index=True)
        return cls(depth, cells[first], codes)

    def dump(self, path: str | os.PathLike) -> None:
        """Write one ``i j k`` line per cell."""
        np.savetxt(Path(path), self.cells, fmt="%d")


def occupied_cells(positions: np.ndarray, depth: int) -> np.ndarray:
    res = 1 << depth
    ijk = np.floor(np.asarray(positions, dtype=np.float64) * res).astype(np.int64)
    np.clip(ijk, 0, res - 1, out=ijk)
    _, first = np.unique(morton_encode(ijk), return_index=True)
    return ijk[first]


def dilate(cells: np.ndarray, depth: int) -> np.ndarray:
    """Add the 3x3x3 neighborhood of every cell, clipped to the grid."""
    res = 1 << depth
    out = (cells[:, None, :] + _NEIGHBOR_OFFSETS[None, :, :]).reshape(-1, 3)
    out = out[((out >= 0) & (out < res)).all(axis=1)]
    _, first = np.unique(morton_encode(out), return_index=True)
    return out[first]


def build_octree(cloud: OrientedPointCloud | np.ndarray, depth: int) -> Octree:
    if not 1 <= depth <= MAX_DEPTH:
        raise DepthOutOfRange(f"depth {depth} outside [1, {MAX_DEPTH}]")
    positions = cloud.positions if isinstance(cloud, OrientedPointCloud) else np.asarray(cloud)
    positions = positions.reshape(-1, 3)
    if len(positions) == 0:
        raise InputError("cannot build an octree from zero points")
    if positions.min() < 0 or positions.max() > 1:
        raise InputError("positions must be normalized into [0, 1]^3")
    cells = dilate(occupied_cells(positions, depth), depth)
    return Octree.from_cells(depth, cells)


@dataclass(frozen=True)
class VertexSet:
    depth: int
    lattice: np.ndarray  # (M, 3) int64 in [0, 2^D]
    codes: np.ndarray  # (M,) int64, sorted
    cell_corners: np.ndarray  # (n_cells, 8) int64, canonical corner order

    @property
    def coordinates(self) -> np.ndarray:
        return self.lattice / float(1 << self.depth)

    @property
    def count(self) -> int:
        return len(self.lattice)

    def __len__(self) -> int:
        return len(self.lattice)


def extract_finest_vertices(octree: Octree) -> VertexSet:
    if len(octree) == 0:
        raise InputError("octree has no cells")
    corners = (octree.cells[:, None, :] + CORNER_OFFSETS[None, :, :]).reshape(-1, 3)
    codes = morton_encode(corners)
    uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    return VertexSet(
        depth=octree.depth,
        lattice=corners[first],
        codes=uniq,
        cell_corners=inverse.reshape(-1, 8).astype(np.int64),
    )
