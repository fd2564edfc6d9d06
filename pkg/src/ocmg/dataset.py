"""Procedural cuboids and windows with raster-style reference paths.

All geometry here is in meters. Cuboids are centered at the origin with
the fixed 1 m width along x, depth along y and height along z. Windows
lie in the xy plane with their thickness along z.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import ContractError, Mesh, ObjectSample

DENSE_STEP = 0.025  # spacing of generated waypoints before downsampling


@dataclass(frozen=True)
class CuboidSpec:
    height: float
    depth: float
    width: float = 1.0
    pitch: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not (0.5 <= self.height <= 1.5 and 0.5 <= self.depth <= 1.5):
            raise ContractError("cuboid height and depth must lie in [0.5, 1.5] m")
        if not self.pitch > 0:
            raise ContractError("pitch must be > 0")

    @classmethod
    def sample(cls, rng: np.random.Generator, pitch: float = 0.15, seed: int = 0) -> "CuboidSpec":
        return cls(height=float(rng.uniform(0.5, 1.5)), depth=float(rng.uniform(0.5, 1.5)),
                   pitch=pitch, seed=seed)


@dataclass(frozen=True)
class WindowSpec:
    width: float
    height: float
    n_horizontal: int
    n_vertical: int
    thickness: float = 0.04
    breadth: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if not (0.4 <= self.width <= 1.8 and 0.4 <= self.height <= 1.8):
            raise ContractError("window width and height must lie in [0.4, 1.8] m")
        if not (0 <= self.n_horizontal <= 3 and 0 <= self.n_vertical <= 1):
            raise ContractError("crossbar counts out of range")
        if not 0 < 2 * self.breadth < min(self.width, self.height):
            raise ContractError("frame breadth too large for the window")

    @classmethod
    def sample(cls, rng: np.random.Generator, seed: int = 0) -> "WindowSpec":
        return cls(width=float(rng.uniform(0.4, 1.8)), height=float(rng.uniform(0.4, 1.8)),
                   n_horizontal=int(rng.integers(0, 4)), n_vertical=int(rng.integers(0, 2)),
                   seed=seed)


# ------------------------------------------------------------------ meshes


def grid_quad(origin, u, v, nu: int, nv: int, rng=None, jitter: float = 0.0):
    """Triangulated parallelogram; the winding makes ``u x v`` the outward normal.

    With ``rng`` given, interior vertices move in-plane by up to
    ``jitter`` cells, which keeps the border (and watertightness) intact.
    """
    origin, u, v = (np.asarray(x, dtype=float) for x in (origin, u, v))
    a = np.broadcast_to(np.arange(nu + 1)[:, None] / nu, (nu + 1, nv + 1)).copy()
    b = np.broadcast_to(np.arange(nv + 1)[None, :] / nv, (nu + 1, nv + 1)).copy()
    if rng is not None and jitter > 0 and nu > 1 and nv > 1:
        a[1:-1, 1:-1] += rng.uniform(-jitter, jitter, (nu - 1, nv - 1)) / nu
        b[1:-1, 1:-1] += rng.uniform(-jitter, jitter, (nu - 1, nv - 1)) / nv
    verts = origin + a[:, :, None] * u + b[:, :, None] * v
    verts = verts.reshape(-1, 3)
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    p00, p10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    p01, p11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([p00, p10, p11], 1), np.stack([p00, p11, p01], 1)])
    return verts, faces


def merge_meshes(parts) -> Mesh:
    verts, faces, off = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + off)
        off += len(v)
    return Mesh(np.concatenate(verts), np.concatenate(faces).astype(np.int64))


def _cells(extent: float, cell: float) -> int:
    return max(1, int(math.ceil(extent / cell - 1e-9)))


def box_faces(size):
    """The six faces of an origin-centered box: (center, outward normal, axis_a, axis_b).

    ``axis_a`` and ``axis_b`` are in-plane edge vectors with full length,
    ordered so ``axis_a x axis_b`` points outward.
    """
    sx, sy, sz = size
    ex, ey, ez = np.eye(3)
    h = np.asarray(size) / 2.0
    return [
        (h[0] * ex, ex, sy * ey, sz * ez),
        (-h[0] * ex, -ex, sz * ez, sy * ey),
        (h[1] * ey, ey, sz * ez, sx * ex),
        (-h[1] * ey, -ey, sx * ex, sz * ez),
        (h[2] * ez, ez, sx * ex, sy * ey),
        (-h[2] * ez, -ez, sy * ey, sx * ex),
    ]


def box_mesh(size, cell: float = 0.05, seed=None, jitter: float = 0.3) -> Mesh:
    """Box surface on a per-face grid; a seed enables vertex jitter.

    Jitter breaks the exact thickness ties a perfectly regular grid
    produces under regular raster paths.
    """
    rng = None if seed is None else np.random.default_rng(seed)
    parts = []
    for center, _, a, b in box_faces(size):
        nu, nv = _cells(np.linalg.norm(a), cell), _cells(np.linalg.norm(b), cell)
        parts.append(grid_quad(center - a / 2 - b / 2, a, b, nu, nv, rng, jitter))
    return merge_meshes(parts)


# ------------------------------------------------------------------- paths


def dense_line(p0, p1, step: float = DENSE_STEP) -> np.ndarray:
    """Points from p0 to p1 inclusive, evenly spaced at most ``step`` apart."""
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / step - 1e-9)))
    t = np.arange(n + 1) / n
    return p0 + t[:, None] * (p1 - p0)


def with_orientation(points: np.ndarray, direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return np.hstack([points, np.broadcast_to(d, points.shape)])


def raster_face(center, normal, a, b, pitch: float, step: float = DENSE_STEP) -> np.ndarray:
    """Boustrophedon over a rectangular face; passes run along the longer edge.

    Passes sit at the centers of ``ceil(extent / pitch)`` equal strips, so
    the actual spacing never exceeds ``pitch``. Consecutive passes are
    joined by a stroke along the face border.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.linalg.norm(b) > np.linalg.norm(a):
        a, b = b, a
    n_pass = _cells(np.linalg.norm(b), pitch)
    pts = []
    for i in range(n_pass):
        off = center + ((i + 0.5) / n_pass - 0.5) * b
        start, end = off - a / 2, off + a / 2
        if i % 2:
            start, end = end, start
        line = dense_line(start, end, step)
        if pts:
            bridge = dense_line(pts[-1][-1], line[0], step)[1:-1]
            if len(bridge):
                pts.append(bridge)
        pts.append(line)
    return with_orientation(np.concatenate(pts), -np.asarray(normal))


def downsample_path(path, spacing: float = 0.05) -> np.ndarray:
    """Greedy walk keeping poses at least ``spacing`` from the last kept one.

    Distance is straight-line in position space; the first and final
    poses are always kept.
    """
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        raise ContractError("path needs at least 2 poses")
    tol = 1e-9 * spacing
    keep = [0]
    last = path[0, :3]
    for i in range(1, len(path) - 1):
        if np.linalg.norm(path[i, :3] - last) >= spacing - tol:
            keep.append(i)
            last = path[i, :3]
    keep.append(len(path) - 1)
    return path[keep]


# --------------------------------------------------------------- generators


def generate_cuboid(spec: CuboidSpec, cell: float = 0.05, step: float = DENSE_STEP):
    """Mesh plus six dense raster paths (one per face), before downsampling."""
    size = (spec.width, spec.depth, spec.height)
    mesh = box_mesh(size, cell, seed=spec.seed)
    paths = [raster_face(c, n, a, b, spec.pitch, step) for c, n, a, b in box_faces(size)]
    return mesh, paths


def window_members(spec: WindowSpec):
    """Axis-aligned member rectangles ``(x0, x1, y0, y1)`` and their centerline paths."""
    W, H, b = spec.width, spec.height, spec.breadth
    x0, x1, y0, y1 = -W / 2, W / 2, -H / 2, H / 2
    rects = [
        (x0, x1, y0, y0 + b), (x0, x1, y1 - b, y1),
        (x0, x0 + b, y0, y1), (x1 - b, x1, y0, y1),
    ]
    lines = [
        ((x0 + b / 2, y0 + b / 2), (x1 - b / 2, y0 + b / 2)),
        ((x0 + b / 2, y1 - b / 2), (x1 - b / 2, y1 - b / 2)),
        ((x0 + b / 2, y0 + b / 2), (x0 + b / 2, y1 - b / 2)),
        ((x1 - b / 2, y0 + b / 2), (x1 - b / 2, y1 - b / 2)),
    ]
    for k in range(1, spec.n_horizontal + 1):
        y = y0 + k * H / (spec.n_horizontal + 1)
        rects.append((x0 + b, x1 - b, y - b / 2, y + b / 2))
        lines.append(((x0 + b / 2, y), (x1 - b / 2, y)))
    if spec.n_vertical:
        rects.append((-b / 2, b / 2, y0 + b, y1 - b))
        lines.append(((0.0, y0 + b / 2), (0.0, y1 - b / 2)))
    return rects, lines


def _refined(breaks, cell):
    out = [breaks[0]]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        n = _cells(hi - lo, cell)
        out.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
    return np.asarray(out)


def window_mesh(spec: WindowSpec, cell: float = 0.02, wall_piece: float = 0.1) -> Mesh:
    """Watertight union of the frame members, extruded along z.

    Broad faces are tessellated on a grid of ``cell``; side walls are cut
    into pieces of at most ``wall_piece`` spanning the full thickness.
    """
    rects, _ = window_members(spec)
    xs = _refined(np.unique(np.round([r[0] for r in rects] + [r[1] for r in rects], 12)), cell)
    ys = _refined(np.unique(np.round([r[2] for r in rects] + [r[3] for r in rects], 12)), cell)
    cx, cy = (xs[:-1] + xs[1:]) / 2, (ys[:-1] + ys[1:]) / 2
    inside = np.zeros((len(cx), len(cy)), dtype=bool)
    for rx0, rx1, ry0, ry1 in rects:
        inside |= ((cx > rx0) & (cx < rx1))[:, None] & ((cy > ry0) & (cy < ry1))[None, :]

    t = spec.thickness / 2
    parts = []
    for i, j in zip(*np.nonzero(inside)):
        dx, dy = xs[i + 1] - xs[i], ys[j + 1] - ys[j]
        parts.append(grid_quad((xs[i], ys[j], t), (dx, 0, 0), (0, dy, 0), 1, 1))
        parts.append(grid_quad((xs[i], ys[j], -t), (0, dy, 0), (dx, 0, 0), 1, 1))

    padded = np.pad(inside, 1)
    # walls on x = const lines, runs along y
    for i in range(len(xs)):
        left, right = padded[i, 1:-1], padded[i + 1, 1:-1]
        for sign, mask in ((-1, right & ~left), (1, left & ~right)):
            for j0, j1 in _runs(mask):
                _wall(parts, axis=0, at=xs[i], lo=ys[j0], hi=ys[j1], sign=sign, t=t, piece=wall_piece)
    for j in range(len(ys)):
        below, above = padded[1:-1, j], padded[1:-1, j + 1]
        for sign, mask in ((-1, above & ~below), (1, below & ~above)):
            for i0, i1 in _runs(mask):
                _wall(parts, axis=1, at=ys[j], lo=xs[i0], hi=xs[i1], sign=sign, t=t, piece=wall_piece)
    return merge_meshes(parts)


def _runs(mask):
    """Maximal runs of True as (start, stop) index pairs into the boundary array."""
    runs, start = [], None
    for k, m in enumerate(list(mask) + [False]):
        if m and start is None:
            start = k
        elif not m and start is not None:
            runs.append((start, k))
            start = None
    return runs


def _wall(parts, axis, at, lo, hi, sign, t, piece):
    n = _cells(hi - lo, piece)
    z = np.array([0.0, 0.0, 2 * t])
    if axis == 0:
        origin = np.array([at, lo, -t])
        along = np.array([0.0, hi - lo, 0.0])
        # outward normal is sign * x
        u, v = (along, z) if sign > 0 else (z, along)
        nu, nv = (n, 1) if sign > 0 else (1, n)
    else:
        origin = np.array([lo, at, -t])
        along = np.array([hi - lo, 0.0, 0.0])
        u, v = (z, along) if sign > 0 else (along, z)
        nu, nv = (1, n) if sign > 0 else (n, 1)
    parts.append(grid_quad(origin, u, v, nu, nv))


def generate_window(spec: WindowSpec, cell: float = 0.02, step: float = DENSE_STEP):
    """Mesh plus one dense centerline path per member and broad side."""
    mesh = window_mesh(spec, cell)
    _, lines = window_members(spec)
    t = spec.thickness / 2
    paths = []
    for z, facing in ((t, -1.0), (-t, 1.0)):
        for (ax, ay), (bx, by) in lines:
            pts = dense_line((ax, ay, z), (bx, by, z), step)
            paths.append(with_orientation(pts, (0.0, 0.0, facing)))
    return mesh, paths


# ------------------------------------------------------- point sampling


def sample_point_cloud(mesh: Mesh, count: int = 5120, seed=0, oversample: int = 4) -> np.ndarray:
    """Area-weighted random candidates thinned by farthest-point selection."""
    if count < 1:
        raise ContractError("count must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ContractError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    m = count * oversample
    face = rng.choice(len(areas), size=m, p=areas / total)
    r1, r2 = rng.random(m), rng.random(m)
    s = np.sqrt(r1)
    tri = mesh.triangles()[face]
    cand = ((1 - s)[:, None] * tri[:, 0] + (s * (1 - r2))[:, None] * tri[:, 1]
            + (s * r2)[:, None] * tri[:, 2])
    chosen = np.empty(count, dtype=int)
    chosen[0] = 0
    x, y, z = (np.ascontiguousarray(c) for c in cand.T)
    dist = np.full(m, np.inf)
    d = np.empty(m)
    t = np.empty(m)
    nxt = 0
    for k in range(count):
        chosen[k] = nxt
        # component-wise squares; much faster than a reduction over a length-3 axis
        np.subtract(x, x[nxt], out=d)
        np.multiply(d, d, out=d)
        np.subtract(y, y[nxt], out=t)
        d += t * t
        np.subtract(z, z[nxt], out=t)
        d += t * t
        np.minimum(dist, d, out=dist)
        nxt = int(np.argmax(dist))
    return cand[chosen]


# ----------------------------------------------------------------- samples


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs shared by every sample of a generated dataset."""

    pitch: float = 0.15
    spacing: float = 0.05
    n_points: int = 5120
    cuboid_cell: float = 0.05
    window_cell: float = 0.02

    def as_dict(self) -> dict:
        return asdict(self)


TOY_PARAMS = GeneratorParams(pitch=0.45, spacing=0.15, n_points=256)


def make_sample(category: str, seed, params: GeneratorParams = GeneratorParams(),
                sample_id: str = "") -> ObjectSample:
    """One complete sample: mesh, downsampled paths, point cloud."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    shape_ss, cloud_ss = ss.spawn(2)
    rng = np.random.default_rng(shape_ss)
    entropy = int(ss.generate_state(1)[0])
    if category == "cuboids":
        spec = CuboidSpec.sample(rng, pitch=params.pitch, seed=entropy)
        mesh, dense = generate_cuboid(spec, cell=params.cuboid_cell)
    elif category == "windows":
        spec = WindowSpec.sample(rng, seed=entropy)
        mesh, dense = generate_window(spec, cell=params.window_cell)
    else:
        raise ContractError(f"unknown category {category!r}")
    paths = [downsample_path(p, params.spacing) for p in dense]
    cloud = sample_point_cloud(mesh, params.n_points, seed=cloud_ss)
    return ObjectSample(point_cloud=cloud, paths=paths, mesh=mesh, category=category,
                        sample_id=sample_id, spec={"kind": category, **asdict(spec)})


def split_ids(ids, seed: int, train_fraction: float = 0.8) -> dict:
    """Deterministic train/test assignment, ``round(0.8 * n)`` training samples."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    split = {}
    for rank, k in enumerate(order):
        split[ids[k]] = "train" if rank < n_train else "test"
    return split


def spec_from_dict(d: dict) -> Optional[object]:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "cuboids":
        return CuboidSpec(**d)
    if kind == "windows":
        return WindowSpec(**d)
    return None
