"""Oriented point clouds, triangle meshes, file formats and the radius-query index."""

from __future__ import annotations

import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ._kernels import grid_radius_csr
from .errors import (
    DegenerateExtent,
    EmptyCloud,
    InputError,
    InvalidMesh,
    IoFailure,
    MalformedFile,
    MissingNormals,
)

__all__ = [
    "OrientedPointCloud",
    "TriangleMesh",
    "NormalizationTransform",
    "SpatialIndex",
    "load_point_cloud",
    "save_point_cloud",
    "load_mesh",
    "save_mesh",
    "normalize",
    "build_spatial_index",
]


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OrientedPointCloud:
    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if pos.shape != nrm.shape:
            raise InputError(f"{len(pos)} positions but {len(nrm)} normals")
        if not np.isfinite(pos).all():
            raise InputError("non-finite coordinate in point positions")
        object.__setattr__(self, "positions", _frozen(pos, np.float64))
        object.__setattr__(self, "normals", _frozen(nrm, np.float64))

    @property
    def count(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, indices: np.ndarray) -> "OrientedPointCloud":
        return OrientedPointCloud(self.positions[indices], self.normals[indices])


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t):
            if t.min() < 0 or t.max() >= len(v):
                raise InvalidMesh("triangle index out of range")
            if ((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])).any():
                raise InvalidMesh("degenerate triangle with repeated vertex index")
        object.__setattr__(self, "vertices", _frozen(v, np.float64))
        object.__setattr__(self, "triangles", _frozen(t, np.int64))

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def face_normals(self, unit: bool = True) -> np.ndarray:
        """Normals from counter-clockwise winding; zero rows for zero-area faces."""
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        if unit:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (a, b) pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps world coordinates x to normalized coordinates ``scale * x + offset``."""

    scale: float
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError("scale must be positive and finite")
        object.__setattr__(self, "offset", _frozen(np.asarray(self.offset).reshape(3), np.float64))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    def invert(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.offset) / self.scale


def normalize(
    cloud: OrientedPointCloud, padding: float = 0.05
) -> tuple[OrientedPointCloud, NormalizationTransform]:
    """Fit the bounding box into ``[padding, 1 - padding]^3`` with one uniform scale.

    The longest axis spans the full padded range; shorter axes are centered.
    """
    if not 0 <= padding < 0.5:
        raise ValueError("padding must lie in [0, 0.5)")
    if cloud.count == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateExtent("all points coincide")
    scale = (1.0 - 2.0 * padding) / extent
    offset = 0.5 - scale * (lo + hi) / 2.0
    tf = NormalizationTransform(scale, offset)
    pos = np.clip(tf.apply(cloud.positions), padding, 1.0 - padding)
    return OrientedPointCloud(pos, cloud.normals), tf


class SpatialIndex:
    """Radius and nearest-neighbor queries over a fixed position list."""

    def __init__(self, positions: np.ndarray):
        self.positions = _frozen(np.asarray(positions, dtype=np.float64).reshape(-1, 3), np.float64)
        self._tree = cKDTree(self.positions)
        self._grids: dict = {}

    def __len__(self) -> int:
        return len(self.positions)

    def radius_query(self, q: Sequence[float], r: float) -> np.ndarray:
        """Sorted indices of all positions within distance ``r`` of ``q`` (inclusive)."""
        return self.radius_csr(np.asarray(q, dtype=np.float64).reshape(1, 3), r)[1]

    def _grid(self, h: float):
        grid = self._grids.get(h)
        if grid is None:
            lo = self.positions.min(axis=0)
            cells = np.floor((self.positions - lo) / h).astype(np.int64)
            dims = cells.max(axis=0) + 1
            keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
            order = np.argsort(keys, kind="stable")
            cell_keys, start = np.unique(keys[order], return_index=True)
            grid = (order, cell_keys, np.r_[start, len(order)].astype(np.int64), lo, dims)
            self._grids[h] = grid
        return grid

    def radius_csr(self, queries: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
        """Neighbors within ``r`` of each query as CSR (indptr, sorted source indices)."""
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(queries) == 0 or len(self.positions) == 0:
            return np.zeros(len(queries) + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        # cells slightly wider than r keep every neighbor inside the 3x3x3 stencil despite rounding
        h = float(r) * (1 + 1e-9)
        # any cell at least r wide is correct; bound the grid so cell keys cannot overflow
        span = float(np.ptp(self.positions, axis=0).max())
        h = max(h, span / 4096)
        if not h < np.inf:
            h = np.finfo(np.float64).max
        elif h <= 0:
            h = 1.0  # r == 0 over coincident points
        order, cell_keys, start, lo, dims = self._grid(h)
        return grid_radius_csr(queries, self.positions, order, cell_keys, start, lo, h, dims, float(r))

    def radius_pairs(self, queries: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
        """All (query, source) pairs within ``r``, sorted by query then source index."""
        indptr, cols = self.radius_csr(queries, r)
        return np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr)), cols

    def nearest(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest position (lowest index on ties)."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) == 0:
            raise EmptyCloud("nearest-neighbor query on an empty index")
        dist, idx = self._tree.query(queries, k=1)
        return dist, idx.astype(np.int64)


def build_spatial_index(positions: np.ndarray) -> SpatialIndex:
    return SpatialIndex(positions)


# --------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count_dtype, item_dtype) for lists


def _parse_ply_header(fh) -> tuple[str, list[_PlyElement], int]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MalformedFile("missing 'ply' magic", 1)
    fmt = None
    elements: list[_PlyElement] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise MalformedFile("unterminated PLY header", lineno)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise MalformedFile(f"unsupported PLY format {parts[1:]}", lineno)
            fmt = parts[1]
        elif parts[0] == "element":
            try:
                elements.append(_PlyElement(parts[1], int(parts[2]), []))
            except (IndexError, ValueError):
                raise MalformedFile("bad element line", lineno) from None
        elif parts[0] == "property":
            if not elements:
                raise MalformedFile("property before element", lineno)
            try:
                if parts[1] == "list":
                    elements[-1].props.append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
                else:
                    elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            except (IndexError, KeyError):
                raise MalformedFile(f"bad property line {raw!r}", lineno) from None
        elif parts[0] == "end_header":
            break
        else:
            raise MalformedFile(f"unknown header keyword {parts[0]!r}", lineno)
    if fmt is None:
        raise MalformedFile("PLY header lacks a format line", lineno)
    return fmt, elements, lineno


def _read_ply(path: Path) -> dict[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        fmt, elements, lineno = _parse_ply_header(fh)
        body = fh.read()
    data: dict[str, dict[str, np.ndarray]] = {}
    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        pos = 0
        for el in elements:
            cols: dict[str, list] = {p[0]: [] for p in el.props}
            for k in range(el.count):
                # skip blank lines between records
                while pos < len(lines) and not lines[pos].strip():
                    pos += 1
                if pos >= len(lines):
                    raise MalformedFile(f"file ends inside element {el.name!r}", lineno + pos + 1)
                tokens = lines[pos].split()
                pos += 1
                t = 0
                try:
                    for prop in el.props:
                        if len(prop) == 3:
                            n = int(tokens[t])
                            cols[prop[0]].append([float(x) for x in tokens[t + 1:t + 1 + n]])
                            if len(cols[prop[0]][-1]) != n:
                                raise IndexError
                            t += 1 + n
                        else:
                            cols[prop[0]].append(float(tokens[t]))
                            t += 1
                except (IndexError, ValueError):
                    raise MalformedFile(f"bad {el.name} record", lineno + pos) from None
            out = {}
            for prop in el.props:
                if len(prop) == 3:
                    out[prop[0]] = [np.asarray(x).astype(prop[2]) for x in cols[prop[0]]]
                else:
                    out[prop[0]] = np.asarray(cols[prop[0]], dtype=np.float64).astype(prop[1])
            data[el.name] = out
        return data

    offset = 0
    for el in elements:
        if all(len(p) == 2 for p in el.props):
            dt = np.dtype([(p[0], "<" + p[1]) for p in el.props])
            nbytes = dt.itemsize * el.count
            if offset + nbytes > len(body):
                raise MalformedFile(f"file ends inside element {el.name!r}", offset, "byte")
            rec = np.frombuffer(body, dtype=dt, count=el.count, offset=offset)
            offset += nbytes
            data[el.name] = {p[0]: rec[p[0]].copy() for p in el.props}
        elif len(el.props) == 1 and len(el.props[0]) == 3:
            name, cdt, idt = el.props[0]
            cdt, idt = np.dtype("<" + cdt), np.dtype("<" + idt)
            # fast path: every list has 3 entries
            fixed = np.dtype([("n", cdt), ("v", idt, (3,))])
            nbytes = fixed.itemsize * el.count
            ok = False
            if offset + nbytes <= len(body):
                rec = np.frombuffer(body, dtype=fixed, count=el.count, offset=offset)
                if (rec["n"] == 3).all():
                    data[el.name] = {name: rec["v"].astype(np.int64)}
                    offset += nbytes
                    ok = True
            if not ok:
                rows = []
                for _ in range(el.count):
                    if offset + cdt.itemsize > len(body):
                        raise MalformedFile(f"file ends inside element {el.name!r}", offset, "byte")
                    n = int(np.frombuffer(body, dtype=cdt, count=1, offset=offset)[0])
                    offset += cdt.itemsize
                    if offset + n * idt.itemsize > len(body):
                        raise MalformedFile(f"file ends inside element {el.name!r}", offset, "byte")
                    rows.append(np.frombuffer(body, dtype=idt, count=n, offset=offset).astype(np.int64))
                    offset += n * idt.itemsize
                data[el.name] = {name: rows}
        else:
            raise MalformedFile(f"unsupported binary element layout for {el.name!r}", offset, "byte")
    return data


def _ply_header(fmt: str, vertex_props: list[tuple[str, str]], n_vertices: int,
                n_faces: int | None, comments: Iterable[str]) -> bytes:
    lines = ["ply", f"format {fmt} 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {n_vertices}")
    lines += [f"property {t} {name}" for name, t in vertex_props]
    if n_faces is not None:
        lines.append(f"element face {n_faces}")
        lines.append("property list uchar uint vertex_indices")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _write_ply(path: Path, columns: np.ndarray, names: list[str], faces: np.ndarray | None,
               binary: bool, comments: Iterable[str]) -> None:
    fmt = "binary_little_endian" if binary else "ascii"
    header = _ply_header(fmt, [(n, "double") for n in names], len(columns),
                         None if faces is None else len(faces), comments)
    buf = io.BytesIO()
    buf.write(header)
    if binary:
        buf.write(np.ascontiguousarray(columns, dtype="<f8").tobytes())
        if faces is not None and len(faces):
            rec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<u4", (3,))])
            rec["n"] = 3
            rec["v"] = faces
            buf.write(rec.tobytes())
    else:
        if len(columns):
            np.savetxt(buf, columns, fmt="%.17g")
        if faces is not None and len(faces):
            np.savetxt(buf, np.column_stack([np.full(len(faces), 3), faces]), fmt="%d")
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        return fmt.lower()
    ext = path.suffix.lower().lstrip(".")
    return {"pts": "xyz", "txt": "xyz"}.get(ext, ext)


def _unit_normals(normals: np.ndarray) -> np.ndarray:
    length = np.linalg.norm(normals, axis=1)
    bad = ~(length > 0) | ~np.isfinite(length)
    if bad.any():
        raise MissingNormals(f"record {int(np.argmax(bad))} has a zero-length or non-finite normal")
    return normals / length[:, None]


def load_point_cloud(path: str | os.PathLike, format: str | None = None) -> OrientedPointCloud:
    """Read an oriented cloud from PLY (ascii or binary LE) or xyz text.

    Normals are renormalized to unit length.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    fmt = _infer_format(path, format)
    if fmt == "ply":
        data = _read_ply(path)
        if "vertex" not in data:
            raise MalformedFile("PLY has no vertex element", None)
        v = data["vertex"]
        for key in ("x", "y", "z"):
            if key not in v:
                raise MalformedFile(f"vertex element lacks property {key!r}", None)
        if not all(k in v for k in ("nx", "ny", "nz")):
            raise MissingNormals(f"{path}: vertex element has no nx/ny/nz properties")
        pos = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
        nrm = np.column_stack([v["nx"], v["ny"], v["nz"]]).astype(np.float64)
    elif fmt == "xyz":
        rows = []
        with open(path, "r") as fh:
            for lineno, line in enumerate(fh, start=1):
                tokens = line.split()
                if not tokens or tokens[0].startswith("#"):
                    continue
                if len(tokens) == 3:
                    raise MissingNormals(f"{path}: line {lineno} has no normal")
                if len(tokens) != 6:
                    raise MalformedFile(f"expected 6 values, got {len(tokens)}", lineno)
                try:
                    rows.append([float(t) for t in tokens])
                except ValueError:
                    raise MalformedFile("non-numeric value", lineno) from None
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
        pos, nrm = arr[:, :3], arr[:, 3:]
    else:
        raise InputError(f"unsupported point cloud format {fmt!r}")
    if len(pos) == 0:
        raise EmptyCloud(f"{path} contains no points")
    if not np.isfinite(pos).all():
        raise MalformedFile("non-finite coordinate", int(np.argmax(~np.isfinite(pos).all(axis=1))), "record")
    return OrientedPointCloud(pos, _unit_normals(nrm))


def save_point_cloud(cloud: OrientedPointCloud, path: str | os.PathLike, format: str | None = None,
                     binary: bool = True, comments: Iterable[str] = ()) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    cols = np.column_stack([cloud.positions, cloud.normals])
    if fmt == "ply":
        _write_ply(path, cols, ["x", "y", "z", "nx", "ny", "nz"], None, binary, comments)
    elif fmt == "xyz":
        buf = io.StringIO()
        np.savetxt(buf, cols, fmt="%.17g")
        try:
            path.write_text(buf.getvalue())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    else:
        raise InputError(f"unsupported point cloud format {fmt!r}")


def save_mesh(mesh: TriangleMesh, path: str | os.PathLike, format: str | None = None,
              binary: bool = True, comments: Iterable[str] = ()) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "ply":
        _write_ply(path, mesh.vertices, ["x", "y", "z"], mesh.triangles, binary, comments)
    elif fmt == "obj":
        buf = io.StringIO()
        for c in comments:
            buf.write(f"# {c}\n")
        if len(mesh.vertices):
            np.savetxt(buf, mesh.vertices, fmt="v %.17g %.17g %.17g")
        if len(mesh.triangles):
            np.savetxt(buf, mesh.triangles + 1, fmt="f %d %d %d")
        try:
            path.write_text(buf.getvalue())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
    else:
        raise InputError(f"unsupported mesh format {fmt!r}")


_OBJ_INDEX = re.compile(r"^(-?\d+)")


def load_mesh(path: str | os.PathLike, format: str | None = None) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    fmt = _infer_format(path, format)
    if fmt == "ply":
        data = _read_ply(path)
        v = data.get("vertex", {})
        if v and not all(k in v for k in ("x", "y", "z")):
            raise MalformedFile("vertex element lacks x/y/z", None)
        verts = np.column_stack([v["x"], v["y"], v["z"]]) if v else np.zeros((0, 3))
        faces = data.get("face", {})
        key = "vertex_indices" if "vertex_indices" in faces else "vertex_index"
        tri = faces.get(key, np.zeros((0, 3), dtype=np.int64))
        if isinstance(tri, list):
            tri = _triangulate(tri)
        return TriangleMesh(verts, np.asarray(tri, dtype=np.int64).reshape(-1, 3))
    if fmt == "obj":
        verts, faces = [], []
        with open(path, "r") as fh:
            for lineno, line in enumerate(fh, start=1):
                tokens = line.split()
                if not tokens:
                    continue
                try:
                    if tokens[0] == "v":
                        verts.append([float(t) for t in tokens[1:4]])
                    elif tokens[0] == "f":
                        idx = [int(_OBJ_INDEX.match(t).group(1)) for t in tokens[1:]]
                        idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                        faces.append(np.asarray(idx, dtype=np.int64))
                except (ValueError, AttributeError):
                    raise MalformedFile("bad OBJ record", lineno) from None
        return TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), _triangulate(faces))
    raise InputError(f"unsupported mesh format {fmt!r}")


def _triangulate(polys: list) -> np.ndarray:
    out = []
    for p in polys:
        for k in range(1, len(p) - 1):
            out.append((p[0], p[k], p[k + 1]))
    return np.asarray(out, dtype=np.int64).reshape(-1, 3)
