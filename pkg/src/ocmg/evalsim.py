"""Evaluation metrics and a cone-model spray deposition simulator."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DEFAULT_METRIC, MetricConfig, Mesh
from .losses import pcd


@dataclass(frozen=True)
class GunModel:
    standoff: float = 0.12
    cone_half_angle_deg: float = 30.0
    falloff: float = 2.0
    flux: float = 1.0

    def __post_init__(self):
        if not 0 < self.cone_half_angle_deg < 90:
            raise ValueError("cone half-angle must lie in (0, 90) degrees")
        if self.falloff < 0 or not self.flux > 0 or not self.standoff > 0:
            raise ValueError("need falloff >= 0, flux > 0, standoff > 0")


def _flat_poses(paths) -> np.ndarray:
    if isinstance(paths, np.ndarray):
        return paths.reshape(-1, 6)
    paths = [np.asarray(p).reshape(-1, 6) for p in paths]
    return np.concatenate(paths) if paths else np.zeros((0, 6))


def metric_pcd(predictions: Sequence, ground_truth: Sequence, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    """Mean symmetric pose-set Chamfer distance over test objects.

    Each entry is an object's list of paths (or a flat pose array); path
    grouping and pose order are ignored.
    """
    if len(predictions) != len(ground_truth) or not predictions:
        raise ValueError("need one prediction per ground-truth object (H >= 1)")
    vals = [pcd(_flat_poses(p), _flat_poses(g), cfg) for p, g in zip(predictions, ground_truth)]
    return float(np.mean(vals))


def nop_metrics(n_pred: Sequence[int], n_true: Sequence[int]):
    """(accuracy of exact path count, mean absolute path-count error)."""
    a, b = np.asarray(n_pred), np.asarray(n_true)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("path-count lists must be non-empty and equally long")
    return float(np.mean(a == b)), float(np.mean(np.abs(a - b)))


# ----------------------------------------------------------- simulator


def _ray_hits(origins, targets, tri, eps=1e-9):
    """Per ray: does segment origin->target cross any triangle strictly inside?"""
    d = targets - origins  # (R, 3)
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    p = np.cross(d[:, None, :], e2[None, :, :])  # (R, T, 3)
    det = np.einsum("tk,rtk->rt", e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
    s = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("rtk,rtk->rt", s, p) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rk,rtk->rt", d, q) * inv
    t = np.einsum("tk,rtk->rt", e2, q) * inv
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 1e-6) & (t < 1 - 1e-6)
    return hit


def simulate_paint(mesh: Mesh, waypoints, gun: GunModel = GunModel(), occlusion: bool = True,
                   chunk: int = 64) -> np.ndarray:
    """Accumulated thickness per mesh face from a flat set of waypoints.

    Waypoints are sorted before accumulation, so the result does not
    depend on their order or grouping into paths.
    """
    poses = _flat_poses(waypoints)
    n_faces = len(mesh.faces)
    thickness = np.zeros(n_faces)
    if len(poses) == 0:
        return thickness
    poses = poses[np.lexsort(poses.T[::-1])]

    areas = mesh.face_areas()
    valid = areas > 1e-15
    if not np.all(valid):
        warnings.warn(f"skipping {int((~valid).sum())} degenerate faces")
    cent = mesh.face_centroids()
    normals = mesh.face_normals()
    tri = mesh.triangles()
    lo, hi = tri.min(axis=1), tri.max(axis=1)
    cos_c = math.cos(math.radians(gun.cone_half_angle_deg))

    ori = poses[:, 3:] / np.linalg.norm(poses[:, 3:], axis=1, keepdims=True)
    nozzles = poses[:, :3] - gun.standoff * ori
    for s in range(0, len(poses), chunk):
        nz, o = nozzles[s:s + chunk], ori[s:s + chunk]
        vec = cent[None, :, :] - nz[:, None, :]
        dist = np.linalg.norm(vec, axis=2)
        u = vec / dist[..., None]
        cos_a = np.einsum("wfk,wk->wf", u, o)
        inc = np.maximum(0.0, -np.einsum("wfk,fk->wf", u, normals))
        dep = np.where((cos_a >= cos_c) & valid[None, :],
                       gun.flux * np.power(np.maximum(cos_a, 0.0), gun.falloff) * inc / dist ** 2,
                       0.0)
        if occlusion:
            for w in range(len(nz)):
                faces = np.flatnonzero(dep[w] > 0)
                if len(faces) == 0:
                    continue
                pts = np.vstack([cent[faces], nz[w]])
                bmin, bmax = pts.min(axis=0), pts.max(axis=0)
                cand = np.flatnonzero(np.all(hi >= bmin, axis=1) & np.all(lo <= bmax, axis=1))
                hits = _ray_hits(np.broadcast_to(nz[w], (len(faces), 3)), cent[faces], tri[cand])
                hits &= cand[None, :] != faces[:, None]
                dep[w, faces[hits.any(axis=1)]] = 0.0
        thickness += dep.sum(axis=0)
    return thickness


def coverage_threshold(gt_thickness: np.ndarray) -> float:
    return float(np.percentile(gt_thickness, 10))


def paint_coverage(mesh: Mesh, gt_paths, pred_paths, gun: GunModel = GunModel(),
                   occlusion: bool = True, gt_thickness=None) -> float:
    """Percent of faces whose predicted thickness beats the ground truth's 10th percentile."""
    if gt_thickness is None:
        gt_thickness = simulate_paint(mesh, gt_paths, gun, occlusion)
    pred = simulate_paint(mesh, pred_paths, gun, occlusion)
    return coverage_from_fields(gt_thickness, pred)


def coverage_from_fields(gt_thickness: np.ndarray, pred_thickness: np.ndarray) -> float:
    theta = coverage_threshold(gt_thickness)
    return 100.0 * float(np.mean(pred_thickness > theta))


def thickness_csv(thickness: np.ndarray) -> str:
    rows = ["face_index,thickness"]
    rows += [f"{i},{t:.17g}" for i, t in enumerate(thickness)]
    return "\n".join(rows) + "\n"


def colored_mesh_ply(mesh: Mesh, thickness: np.ndarray, threshold: float) -> str:
    """ASCII PLY with per-face colors: green above the threshold, red at or below."""
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(mesh.vertices)}",
             "property float x", "property float y", "property float z",
             f"element face {len(mesh.faces)}",
             "property list uchar int vertex_indices",
             "property uchar red", "property uchar green", "property uchar blue",
             "end_header"]
    lines += ["%.9g %.9g %.9g" % tuple(v) for v in mesh.vertices]
    for f, t in zip(mesh.faces, thickness):
        rgb = (40, 190, 60) if t > threshold else (220, 40, 40)
        lines.append("3 %d %d %d %d %d %d" % (*f, *rgb))
    return "\n".join(lines) + "\n"
