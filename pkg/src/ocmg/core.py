"""Geometric domain types and the weighted 6-D pose metric.

Poses are handled in two forms: the :class:`Pose` value type for single
waypoints, and plain ``(..., 6)`` float arrays (``x y z ox oy oz``) for
anything bulk. Every distance in the package goes through the weight
vector returned by :func:`metric_weights`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

POSE_DIM = 6


class ContractError(ValueError):
    """Raised when an input violates an operation's preconditions."""


@dataclass(frozen=True)
class MetricConfig:
    orientation_weight: float = 0.25

    def __post_init__(self):
        if not self.orientation_weight > 0:
            raise ContractError("orientation_weight must be > 0")


DEFAULT_METRIC = MetricConfig()


def metric_weights(cfg: MetricConfig = DEFAULT_METRIC) -> np.ndarray:
    w = cfg.orientation_weight
    return np.array([1.0, 1.0, 1.0, w, w, w])


@dataclass(frozen=True)
class Pose:
    position: tuple
    orientation: tuple

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        o = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or o.shape != (3,):
            raise ContractError("position and orientation must be 3-vectors")
        if not np.all(np.isfinite(p)):
            raise ContractError("position must be finite")
        if abs(np.linalg.norm(o) - 1.0) > 1e-6:
            raise ContractError("orientation must be unit length")
        object.__setattr__(self, "position", tuple(float(v) for v in p))
        object.__setattr__(self, "orientation", tuple(float(v) for v in o))

    @classmethod
    def from_array(cls, v) -> "Pose":
        v = np.asarray(v, dtype=float)
        return cls(tuple(v[:3]), tuple(v[3:6]))

    def as_array(self) -> np.ndarray:
        return np.array(self.position + self.orientation)


def _as_pose_array(p) -> np.ndarray:
    return p.as_array() if isinstance(p, Pose) else np.asarray(p, dtype=float)


def pose_distance_sq(a, b, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    """Squared position offset plus weighted squared orientation offset."""
    d = _as_pose_array(a) - _as_pose_array(b)
    return float(np.sum(d * d * metric_weights(cfg)))


def segment_distance_sq(s1, s2, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if s1.shape != s2.shape:
        raise ContractError(f"segment shapes differ: {s1.shape} vs {s2.shape}")
    total = 0.0
    for a, b in zip(s1, s2):
        total += pose_distance_sq(a, b, cfg)
    return total


def euler_to_direction(angles, convention: str = "xyz") -> np.ndarray:
    """Approach vector of a gun whose local +z axis is rotated by ``angles``.

    Only the approach axis survives; roll about it is discarded.
    """
    from scipy.spatial.transform import Rotation

    rot = Rotation.from_euler(convention, np.atleast_2d(angles))
    v = rot.apply(np.array([0.0, 0.0, 1.0]))
    return v[0] if np.ndim(angles) == 1 else v


def check_path(path: np.ndarray) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[1] != POSE_DIM:
        raise ContractError(f"path must be (T, 6), got {path.shape}")
    if len(path) < 2:
        raise ContractError("path needs at least 2 poses")
    step = np.linalg.norm(np.diff(path[:, :3], axis=0), axis=1)
    if np.any(step <= 0):
        raise ContractError("consecutive poses must be distinct")
    return path


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int, counter-clockwise seen from outside

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def face_centroids(self) -> np.ndarray:
        return self.triangles().mean(axis=1)


@dataclass
class NormRecord:
    """Per-sample centroid offsets and the dataset-global scale."""

    scale: float
    offsets: list = field(default_factory=list)


@dataclass
class ObjectSample:
    point_cloud: np.ndarray  # (M, 3)
    paths: list  # list of (T_i, 6) arrays
    mesh: Optional[Mesh] = None
    category: str = ""
    sample_id: str = ""
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.point_cloud = np.asarray(self.point_cloud, dtype=float)
        self.paths = [np.asarray(p, dtype=float) for p in self.paths]
        if len(self.point_cloud) == 0:
            raise ContractError("point cloud is empty")
        if len(self.paths) == 0:
            raise ContractError("a sample needs at least one path")

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def all_poses(self) -> np.ndarray:
        return np.concatenate(self.paths, axis=0)


def _transform(sample: ObjectSample, offset: np.ndarray, scale: float) -> ObjectSample:
    """Map raw coordinates to normalized ones: ``(x - offset) / scale``."""
    paths = []
    for p in sample.paths:
        q = p.copy()
        q[:, :3] = (q[:, :3] - offset) / scale
        paths.append(q)
    mesh = None
    if sample.mesh is not None:
        mesh = Mesh((sample.mesh.vertices - offset) / scale, sample.mesh.faces.copy())
    return replace(
        sample,
        point_cloud=(sample.point_cloud - offset) / scale,
        paths=paths,
        mesh=mesh,
        offset=np.asarray(offset, dtype=float).copy(),
        scale=float(scale),
    )


def _invert(sample: ObjectSample) -> ObjectSample:
    off, s = sample.offset, sample.scale
    paths = []
    for p in sample.paths:
        q = p.copy()
        q[:, :3] = q[:, :3] * s + off
        paths.append(q)
    mesh = None
    if sample.mesh is not None:
        mesh = Mesh(sample.mesh.vertices * s + off, sample.mesh.faces.copy())
    return replace(
        sample,
        point_cloud=sample.point_cloud * s + off,
        paths=paths,
        mesh=mesh,
        offset=np.zeros(3),
        scale=1.0,
    )


def global_scale(samples: Sequence[ObjectSample]) -> float:
    """Largest absolute centered coordinate over point clouds and path positions."""
    if len(samples) == 0:
        raise ContractError("cannot normalize an empty sample list")
    scale = 0.0
    for s in samples:
        c = s.point_cloud.mean(axis=0)
        scale = max(scale, np.abs(s.point_cloud - c).max())
        for p in s.paths:
            scale = max(scale, np.abs(p[:, :3] - c).max())
    if scale <= 0:
        raise ContractError("degenerate dataset: zero extent")
    return float(scale)


def normalize_dataset(samples: Sequence[ObjectSample], scale: Optional[float] = None):
    """Center each sample on its cloud centroid and divide by one shared factor.

    Pass ``scale`` to reuse a factor frozen on a training split.
    Returns the normalized samples and the :class:`NormRecord` needed to
    undo the transform.
    """
    if len(samples) == 0:
        raise ContractError("cannot normalize an empty sample list")
    if scale is None:
        scale = global_scale(samples)
    out, offsets = [], []
    for s in samples:
        c = s.point_cloud.mean(axis=0)
        offsets.append(c)
        out.append(_transform(s, c, scale))
    return out, NormRecord(scale=float(scale), offsets=offsets)


def denormalize_dataset(samples: Sequence[ObjectSample]) -> list:
    return [_invert(s) for s in samples]


def normalize_poses(poses: np.ndarray, offset, scale: float) -> np.ndarray:
    q = np.array(poses, dtype=float, copy=True)
    q[..., :3] = (q[..., :3] - offset) / scale
    return q


def denormalize_poses(poses: np.ndarray, offset, scale: float) -> np.ndarray:
    q = np.array(poses, dtype=float, copy=True)
    q[..., :3] = q[..., :3] * scale + offset
    return q
