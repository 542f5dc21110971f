"""Evaluation metrics: vertex accuracy, Chamfer distances, normal consistency, label IoU."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, LengthMismatch, ZeroArea
from .pointcloud_io import TriangleMesh

DEFAULT_SAMPLES = 100_000

CONVENTIONS = {
    "chamfer_l1": "0.5 * (mean nn distance a->b + mean nn distance b->a)",
    "chamfer_sq": "squared nn distances of both directions pooled; mean and rms",
    "normal_consistency": "0.5 * (mean |n_a . n_b| a->b + mean b->a), absolute dot",
    "label_iou": "proxy: IoU of inside (label 0) vertex sets; 1.0 when both are empty",
}


class BothEmptyWarning(UserWarning):
    """Neither label set has inside vertices; IoU reported as 1 by convention."""


@dataclass(frozen=True)
class SampledSurface:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)


def _labels(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x)).reshape(-1)


def _check_pair(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} labels")


def vertex_accuracy(pred, truth) -> float:
    p, t = _labels(pred), _labels(truth)
    _check_pair(p, t)
    if len(p) == 0:
        raise EmptyInput("no labels to compare")
    return float(np.mean(p == t))


def label_iou(pred, truth) -> float:
    """IoU of the inside sets; a proxy for volumetric IoU on the vertex lattice."""
    p, t = _labels(pred), _labels(truth)
    _check_pair(p, t)
    union = int(((p == 0) | (t == 0)).sum())
    if union == 0:
        warnings.warn("no inside vertices in either label set", BothEmptyWarning, stacklevel=2)
        return 1.0
    return int(((p == 0) & (t == 0)).sum()) / union


def _points(s) -> np.ndarray:
    pts = np.asarray(getattr(s, "points", s), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("point set is empty")
    return pts


def _nearest(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d, i = cKDTree(dst).query(src)
    return d, i


def chamfer_l1(a, b) -> float:
    pa, pb = _points(a), _points(b)
    dab, _ = _nearest(pa, pb)
    dba, _ = _nearest(pb, pa)
    return 0.5 * (float(dab.mean()) + float(dba.mean()))


def chamfer_sq(a, b) -> tuple[float, float]:
    """Mean and root-mean-square of squared nearest distances, both directions pooled."""
    pa, pb = _points(a), _points(b)
    dab, _ = _nearest(pa, pb)
    dba, _ = _nearest(pb, pa)
    sq = np.concatenate([dab, dba]) ** 2
    return float(sq.mean()), float(np.sqrt(np.mean(sq ** 2)))


def normal_consistency(a: SampledSurface, b: SampledSurface) -> float:
    pa, pb = _points(a), _points(b)
    if a.normals is None or b.normals is None:
        raise EmptyInput("normal consistency needs normals on both surfaces")
    _, iab = _nearest(pa, pb)
    _, iba = _nearest(pb, pa)
    ab = np.abs(np.einsum("ij,ij->i", a.normals, b.normals[iab]))
    ba = np.abs(np.einsum("ij,ij->i", b.normals, a.normals[iba]))
    return 0.5 * (float(ab.mean()) + float(ba.mean()))


def sample_mesh(mesh: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> SampledSurface:
    """Area-weighted uniform samples with the face normal of each sample's triangle."""
    if n < 1:
        raise ValueError("sample count must be positive")
    if len(mesh.triangles) == 0:
        raise EmptyInput("mesh has no triangles")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ZeroArea("every triangle has zero area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
    tri = mesh.vertices[mesh.triangles[face]]
    pts = np.einsum("ij,ijk->ik", bary, tri)
    return SampledSurface(pts, mesh.face_normals()[face])


def mesh_metrics(pred: TriangleMesh, truth: TriangleMesh, n: int = DEFAULT_SAMPLES,
                 seed: int = 0) -> dict:
    # one seed for both, so a mesh compared with itself scores exactly 0 and 1
    a = sample_mesh(pred, n, seed)
    b = sample_mesh(truth, n, seed)
    mean, rms = chamfer_sq(a, b)
    return {
        "chamfer_l1": chamfer_l1(a, b),
        "chamfer_sq_mean": mean,
        "chamfer_sq_rms": rms,
        "normal_consistency": normal_consistency(a, b),
    }


def label_metrics(pred, truth) -> dict:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BothEmptyWarning)
        iou = label_iou(pred, truth)
    out = {"vertex_accuracy": vertex_accuracy(pred, truth), "label_iou_proxy": iou}
    if caught:
        out["label_iou_both_empty"] = True
    return out


def write_report(metrics: dict, path, **provenance) -> str:
    """Flat JSON report: metric values plus provenance and conventions."""
    report = dict(metrics)
    report.update(provenance)
    report["conventions"] = CONVENTIONS
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
