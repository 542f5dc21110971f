"""Split vertices into disjoint boxes, each paired with a padded point box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageGap, UnsatisfiableCap
from .octree import VertexSet
from .pointcloud_io import OrientedPointCloud


@dataclass(frozen=True)
class PartitionConfig:
    max_batch: int = 300_000
    pad: float = 0.0
    max_vertex_batch: int | None = None  # defaults to max_batch
    align: int = 4  # box faces snap to multiples of this many finest cells

    def __post_init__(self):
        if self.max_batch < 1 or self.pad < 0 or self.align < 1:
            raise ValueError("max_batch >= 1, pad >= 0 and align >= 1 required")
        if self.max_vertex_batch is not None and self.max_vertex_batch < 1:
            raise ValueError("max_vertex_batch must be positive")

    @property
    def vertex_cap(self) -> int:
        return self.max_batch if self.max_vertex_batch is None else self.max_vertex_batch


@dataclass(frozen=True)
class Part:
    part_id: int
    lattice_box: tuple  # half-open integer box (lo, hi) on the vertex lattice
    vertex_box: tuple  # same box in normalized units
    point_box: tuple  # vertex box grown by pad, clipped to the unit cube
    vertex_indices: np.ndarray
    point_indices: np.ndarray

    def describe(self) -> str:
        vb = " ".join(f"{x:.6g}" for x in np.concatenate(self.vertex_box))
        pb = " ".join(f"{x:.6g}" for x in np.concatenate(self.point_box))
        return (f"part {self.part_id} vertex_box {vb} point_box {pb} "
                f"vertices {len(self.vertex_indices)} points {len(self.point_indices)}")


def _point_box(lo, hi, depth, pad):
    res = float(1 << depth)
    plo = np.clip(lo / res - pad, 0.0, 1.0)
    phi = np.clip(hi / res + pad, 0.0, 1.0)
    return plo, phi


def _inside(positions, plo, phi):
    return ((positions >= plo) & (positions <= phi)).all(axis=1)


def partition(vertices: VertexSet, cloud: OrientedPointCloud, cfg: PartitionConfig) -> list[Part]:
    """Recursive longest-axis median split, faces snapped to the alignment grid.

    Every vertex lands in exactly one half-open box; each part also receives
    every point within ``cfg.pad`` of its vertex box.
    """
    depth = vertices.depth
    res = float(1 << depth)
    A = cfg.align
    lat = vertices.lattice
    pos = cloud.positions
    all_v = np.arange(len(lat), dtype=np.int64)
    if len(lat) == 0:
        return []
    lo0 = (lat.min(axis=0) // A) * A
    hi0 = (lat.max(axis=0) // A + 1) * A

    plo, phi = _point_box(lo0, hi0, depth, cfg.pad)
    all_p = np.flatnonzero(_inside(pos, plo, phi)).astype(np.int64)

    parts: list[Part] = []
    stack = [(lo0, hi0, all_v, all_p)]
    while stack:
        lo, hi, vidx, pidx = stack.pop()
        if len(vidx) == 0:
            continue
        over_p = len(pidx) > cfg.max_batch
        if len(vidx) <= cfg.vertex_cap and not over_p:
            plo, phi = _point_box(lo, hi, depth, cfg.pad)
            parts.append(Part(len(parts), (lo.copy(), hi.copy()), (lo / res, hi / res), (plo, phi),
                              vidx, pidx))
            continue
        if over_p:
            # a minimal aligned box around one vertex must fit, otherwise no split ever will
            c = (lat[vidx[0]] // A) * A
            mlo, mhi = _point_box(c, c + A, depth, cfg.pad)
            n_min = int(_inside(pos[pidx], mlo, mhi).sum())
            if n_min > cfg.max_batch:
                raise UnsatisfiableCap(
                    f"region {mlo.round(6).tolist()}..{mhi.round(6).tolist()} holds {n_min} points "
                    f"within pad {cfg.pad:.6g}, above max_batch {cfg.max_batch}")
        extent = hi - lo
        split = None
        for axis in np.argsort(-extent, kind="stable"):
            if extent[axis] <= A:
                continue
            med = float(np.median(lat[vidx, axis]))
            cut = int(np.clip(np.round(med / A) * A, lo[axis] + A, hi[axis] - A))
            split = (int(axis), cut)
            break
        if split is None:
            raise UnsatisfiableCap(
                f"box {(lo / res).tolist()}..{(hi / res).tolist()} cannot be split further "
                f"({len(vidx)} vertices, {len(pidx)} points)")
        axis, cut = split
        children = []
        for side in (0, 1):
            clo, chi = lo.copy(), hi.copy()
            if side == 0:
                chi[axis] = cut
                mask = lat[vidx, axis] < cut
            else:
                clo[axis] = cut
                mask = lat[vidx, axis] >= cut
            plo, phi = _point_box(clo, chi, depth, cfg.pad)
            cp = pidx[_inside(pos[pidx], plo, phi)]
            children.append((clo, chi, vidx[mask], cp))
        # lower box first
        stack.append(children[1])
        stack.append(children[0])
    return parts


def merge_labels(parts: list[Part], per_part_labels: list, n_vertices: int | None = None,
                 dtype=np.uint8) -> np.ndarray:
    """Scatter per-part labels back to global vertex order, by part id."""
    if len(parts) != len(per_part_labels):
        raise ValueError("one label list per part required")
    if n_vertices is None:
        n_vertices = sum(len(p.vertex_indices) for p in parts)
    out = np.zeros(n_vertices, dtype=dtype)
    seen = np.zeros(n_vertices, dtype=bool)
    for part, labels in sorted(zip(parts, per_part_labels), key=lambda x: x[0].part_id):
        labels = np.asarray(labels)
        if len(labels) != len(part.vertex_indices):
            raise ValueError(f"part {part.part_id}: {len(labels)} labels for "
                             f"{len(part.vertex_indices)} vertices")
        out[part.vertex_indices] = labels
        seen[part.vertex_indices] = True
    if not seen.all():
        raise CoverageGap(f"{int((~seen).sum())} vertices are owned by no part")
    return out
