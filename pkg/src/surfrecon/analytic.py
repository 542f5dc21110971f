"""Analytic test shapes with exact normals, sidedness and reference meshes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud_io import OrientedPointCloud, TriangleMesh


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _random_directions(rng, n: int) -> np.ndarray:
    return _unit(rng.normal(size=(n, 3)))


def _grid_triangles(nu: int, nv: int, wrap_u: bool, wrap_v: bool) -> np.ndarray:
    """Two triangles per quad of an (nu x nv) vertex grid, index = i * nv + j."""
    iu = nu if wrap_u else nu - 1
    iv = nv if wrap_v else nv - 1
    i, j = np.meshgrid(np.arange(iu), np.arange(iv), indexing="ij")
    i, j = i.reshape(-1), j.reshape(-1)
    i1, j1 = (i + 1) % nu, (j + 1) % nv
    a, b, c, d = i * nv + j, i1 * nv + j, i1 * nv + j1, i * nv + j1
    return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])


def icosphere(subdivisions: int = 4, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                cache[key] = len(verts)
                verts.append(_unit(verts[a] + verts[b]))
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriangleMesh(V, np.array(faces))


@dataclass(frozen=True)
class Shape:
    """Base class; ``side`` is positive outside and negative inside."""

    name = "shape"

    def surface(self, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def side(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mesh(self, resolution: int = 64) -> TriangleMesh:
        raise NotImplementedError

    def sample(self, n: int, seed: int = 0, noise: float = 0.0) -> OrientedPointCloud:
        """``n`` area-uniform points; ``noise`` is a Gaussian std relative to the longest box side."""
        rng = np.random.default_rng(seed)
        p, nrm = self.surface(rng, n)
        if noise > 0:
            p = p + rng.normal(scale=noise * self.extent, size=p.shape)
        return OrientedPointCloud(p, nrm)

    @property
    def extent(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Shape):
    radius: float = 1.0
    name = "sphere"

    def surface(self, rng, n):
        d = _random_directions(rng, n)
        return d * self.radius, d

    def side(self, x):
        return np.linalg.norm(x, axis=-1) - self.radius

    def mesh(self, resolution: int = 5):
        return icosphere(resolution, self.radius)

    @property
    def extent(self):
        return 2 * self.radius


@dataclass(frozen=True)
class Ellipsoid(Shape):
    axes: tuple = (1.0, 0.7, 0.5)
    name = "ellipsoid"

    def surface(self, rng, n):
        a = np.asarray(self.axes)
        out_p, out_n = [], []
        have = 0
        wmax = np.prod(a) / a.min()
        while have < n:
            u = _random_directions(rng, 2 * (n - have) + 16)
            w = np.prod(a) * np.linalg.norm(u / a, axis=1)
            u = u[rng.random(len(u)) * wmax < w]
            out_p.append(u * a)
            out_n.append(_unit(u / a))
            have += len(u)
        return np.concatenate(out_p)[:n], np.concatenate(out_n)[:n]

    def side(self, x):
        return np.linalg.norm(x / np.asarray(self.axes), axis=-1) - 1.0

    def mesh(self, resolution: int = 5):
        m = icosphere(resolution)
        return TriangleMesh(m.vertices * np.asarray(self.axes), m.triangles)

    @property
    def extent(self):
        return 2 * max(self.axes)


@dataclass(frozen=True)
class Torus(Shape):
    major: float = 1.0
    minor: float = 0.35
    name = "torus"

    def _point(self, u, v):
        R, r = self.major, self.minor
        ring = np.stack([np.cos(u), np.sin(u), np.zeros_like(u)], -1)
        nrm = np.cos(v)[:, None] * ring + np.sin(v)[:, None] * np.array([0.0, 0.0, 1.0])
        return R * ring + r * nrm, nrm

    def surface(self, rng, n):
        R, r = self.major, self.minor
        us, vs = [], []
        have = 0
        while have < n:
            k = 2 * (n - have) + 16
            u = rng.uniform(0, 2 * np.pi, k)
            v = rng.uniform(0, 2 * np.pi, k)
            keep = rng.random(k) * (R + r) < R + r * np.cos(v)
            us.append(u[keep])
            vs.append(v[keep])
            have += int(keep.sum())
        return self._point(np.concatenate(us)[:n], np.concatenate(vs)[:n])

    def side(self, x):
        q = np.hypot(x[..., 0], x[..., 1]) - self.major
        return np.hypot(q, x[..., 2]) - self.minor

    def mesh(self, resolution: int = 96):
        nu, nv = resolution, max(8, int(resolution * self.minor / self.major * 2))
        u, v = np.meshgrid(np.linspace(0, 2 * np.pi, nu, endpoint=False),
                           np.linspace(0, 2 * np.pi, nv, endpoint=False), indexing="ij")
        p, _ = self._point(u.reshape(-1), v.reshape(-1))
        return TriangleMesh(p, _grid_triangles(nu, nv, True, True))

    @property
    def extent(self):
        return 2 * (self.major + self.minor)


@dataclass(frozen=True)
class PlanePatch(Shape):
    half: float = 1.0
    name = "plane"

    def surface(self, rng, n):
        xy = rng.uniform(-self.half, self.half, size=(n, 2))
        p = np.column_stack([xy, np.zeros(n)])
        return p, np.tile([0.0, 0.0, 1.0], (n, 1))

    def side(self, x):
        return x[..., 2].copy()

    def mesh(self, resolution: int = 32):
        g = np.linspace(-self.half, self.half, resolution + 1)
        x, y = np.meshgrid(g, g, indexing="ij")
        p = np.column_stack([x.reshape(-1), y.reshape(-1), np.zeros(x.size)])
        return TriangleMesh(p, _grid_triangles(resolution + 1, resolution + 1, False, False))

    @property
    def extent(self):
        return 2 * self.half


SHAPES = {"sphere": Sphere, "torus": Torus, "plane": PlanePatch, "ellipsoid": Ellipsoid}


def make_shape(name: str) -> Shape:
    try:
        return SHAPES[name]()
    except KeyError:
        raise ValueError(f"unknown shape {name!r}; choose from {sorted(SHAPES)}") from None
