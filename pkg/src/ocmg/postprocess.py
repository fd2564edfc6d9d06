"""From per-mask groups of predicted segments to ordered executable paths.

Per group: drop near-duplicate segments, link the survivors in a sparse
cost graph, take the optimum branching, follow its longest chain, and
stitch the chain's poses together. Simplification and resampling are
optional finishing steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .branching import edmonds_branching, longest_path, path_graph_costs
from .core import DEFAULT_METRIC, MetricConfig, metric_weights


@dataclass
class PostprocessConfig:
    dup_threshold: float = 0.05
    w_v: float = 1.0
    knn: int = 5
    include_orientation: bool = False
    simplify: bool = False
    rdp_translation: float = 0.01  # meters
    rdp_rotation_deg: float = 15.0
    resample_spacing: Optional[float] = None  # meters; None disables
    metric: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        for name in ("dup_threshold", "rdp_translation", "rdp_rotation_deg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.w_v < 0 or self.knn < 1:
            raise ValueError("w_v must be >= 0 and knn >= 1")


def _pairwise_sq(X: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    flat = X.reshape(len(X), -1)
    w = np.tile(metric_weights(cfg), flat.shape[1] // 6)
    diff = flat[:, None, :] - flat[None, :, :]
    return np.einsum("ijk,ijk,k->ij", diff, diff, w)


def filter_duplicates(segments, tau: float = 0.05, cfg: MetricConfig = DEFAULT_METRIC) -> np.ndarray:
    """Indices of segments kept after greedy near-duplicate removal.

    Pairs are visited by ascending distance; when both members of a pair
    closer than ``tau`` are still alive, the higher index is dropped.
    """
    X = np.asarray(segments, dtype=float)
    n = len(X)
    if n <= 1:
        return np.arange(n)
    d = _pairwise_sq(X, cfg)
    i, j = np.triu_indices(n, k=1)
    dij = d[i, j]
    close = dij < tau * tau
    i, j, dij = i[close], j[close], dij[close]
    order = np.lexsort((j, i, dij))
    alive = np.ones(n, dtype=bool)
    for a, b in zip(i[order], j[order]):
        if alive[a] and alive[b]:
            alive[b] = False
    return np.flatnonzero(alive)


def edge_cost(s_j, s_k, w_v: float = 1.0, include_orientation: bool = False,
              cfg: MetricConfig = DEFAULT_METRIC) -> float:
    s_j = np.asarray(s_j, dtype=float)
    s_k = np.asarray(s_k, dtype=float)
    return float(edge_cost_matrix(np.stack([s_j, s_k]), w_v, include_orientation, cfg)[0, 1])


def edge_cost_matrix(X, w_v: float = 1.0, include_orientation: bool = False,
                     cfg: MetricConfig = DEFAULT_METRIC, overlap_tol: Optional[float] = None) -> np.ndarray:
    """``C[j, k]``: gap from the end of j to the start of k plus direction mismatch.

    With ``overlap_tol`` set, a segment k whose first pose sits within that
    distance of a later pose of j (an end-anchored segment overlapping
    several poses) is joined at that pose instead of at j's last pose.
    """
    X = np.asarray(X, dtype=float)
    lam = X.shape[1]
    w = metric_weights(cfg) if include_orientation else np.array([1.0, 1, 1, 0, 0, 0])
    starts = X[:, 0]
    # gaps[i, j, k]: pose i of segment j to the first pose of segment k
    diff = X[:, None, 1:, :].transpose(2, 0, 1, 3) - starts[None, None, :, :]
    gaps = np.einsum("ijkd,ijkd,d->ijk", diff, diff, w)
    at = np.full(gaps.shape[1:], lam - 2)
    if overlap_tol is not None:
        masked = np.where(gaps < overlap_tol ** 2, gaps, np.inf)
        # reversed so that ties go to the later pose
        best = lam - 2 - np.argmin(masked[::-1], axis=0)
        hit = np.isfinite(masked.min(axis=0))
        at = np.where(hit, best, at)
    j_idx = np.arange(len(X))[:, None]
    gap_sq = np.take_along_axis(gaps, at[None], axis=0)[0]
    steps = X[:, 1:, :3] - X[:, :-1, :3]  # steps[j, i] ends at pose i + 1
    out_dir = steps[j_idx, at]
    in_dir = X[:, 1, :3] - X[:, 0, :3]
    dd = out_dir - in_dir[None, :, :]
    return gap_sq + w_v * np.einsum("ijk,ijk->ij", dd, dd)


def segment_graph(X, cfg: PostprocessConfig) -> list:
    C = edge_cost_matrix(X, cfg.w_v, cfg.include_orientation, cfg.metric, overlap_tol=cfg.dup_threshold)
    return path_graph_costs(C, cfg.knn)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.array(v, dtype=float), where=n > 0)


def _merge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = 0.5 * (a + b)
    m[..., 3:] = _unit(m[..., 3:])
    return m


def concatenate(segments, tau: float = 0.05, cfg: MetricConfig = DEFAULT_METRIC) -> np.ndarray:
    """Join ordered segments into one pose sequence.

    At each join, runs of m poses shared by the path tail and the next
    segment's head (every pair closer than ``tau``) are candidates; the
    run with the smallest mean pair distance is merged by averaging,
    larger m winning ties. A single shared endpoint is the usual case.
    """
    segs = [np.asarray(s, dtype=float) for s in segments]
    out = list(segs[0])
    w = metric_weights(cfg)
    for seg in segs[1:]:
        best, merged = None, 0
        for m in range(min(len(seg), len(out)), 0, -1):
            tail = np.asarray(out[-m:])
            d = np.einsum("ij,ij,j->i", tail - seg[:m], tail - seg[:m], w)
            if np.all(d < tau * tau) and (best is None or d.mean() < best):
                best, merged = d.mean(), m
        if merged:
            out[-merged:] = list(_merge(np.asarray(out[-merged:]), seg[:merged]))
        out.extend(seg[merged:])
    return np.asarray(out)


def _angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dot = np.sum(_unit(a) * _unit(b), axis=-1)
    return np.arccos(np.clip(dot, -1.0, 1.0))


def _deviations(path: np.ndarray, s: int, e: int):
    """Positional distance to the chord and orientation error for poses s+1..e-1."""
    inner = path[s + 1:e]
    a, b = path[s, :3], path[e, :3]
    ab = b - a
    L2 = float(ab @ ab)
    rel = inner[:, :3] - a
    if L2 > 0:
        t = np.clip(rel @ ab / L2, 0.0, 1.0)
    else:
        t = np.zeros(len(inner))
    dev_t = np.linalg.norm(rel - t[:, None] * ab, axis=1)

    steps = np.linalg.norm(np.diff(path[s:e + 1, :3], axis=0), axis=1)
    arc = np.cumsum(steps)
    frac = arc[:-1] / arc[-1] if arc[-1] > 0 else np.linspace(0, 1, len(inner) + 2)[1:-1]
    o = (1.0 - frac)[:, None] * path[s, 3:] + frac[:, None] * path[e, 3:]
    dev_r = _angle(inner[:, 3:], o)
    return dev_t, dev_r


def rdp_simplify(path, eps_t: float = 0.01, eps_r_deg: float = 15.0) -> np.ndarray:
    """Ramer-Douglas-Peucker over 6-D poses with separate position and angle tolerances."""
    path = np.asarray(path, dtype=float)
    n = len(path)
    if n <= 2:
        return path.copy()
    eps_r = math.radians(eps_r_deg)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        s, e = stack.pop()
        if e - s < 2:
            continue
        dev_t, dev_r = _deviations(path, s, e)
        score = np.maximum(dev_t / eps_t, dev_r / eps_r)
        k = int(np.argmax(score))
        if score[k] > 1.0:
            mid = s + 1 + k
            keep[mid] = True
            stack.append((mid, e))
            stack.append((s, mid))
    return path[keep]


def resample(path, spacing: float) -> np.ndarray:
    """Linear re-interpolation at a fixed arc-length step; endpoints kept."""
    path = np.asarray(path, dtype=float)
    steps = np.linalg.norm(np.diff(path[:, :3], axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    if arc[-1] <= spacing:
        return path[[0, -1]].copy()
    n = int(math.floor(arc[-1] / spacing))
    s = np.concatenate([np.arange(n + 1) * spacing, [arc[-1]]])
    if s[-1] - s[-2] < 1e-12:
        s = s[:-1]
    out = np.empty((len(s), 6))
    for d in range(6):
        out[:, d] = np.interp(s, arc, path[:, d])
    out[:, 3:] = _unit(out[:, 3:])
    return out


def postprocess_group(X, cfg: PostprocessConfig, scale: float = 1.0) -> Optional[np.ndarray]:
    """Run the pipeline on the segments of one mask; ``scale`` = meters per unit."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return None
    X = X[filter_duplicates(X, cfg.dup_threshold, cfg.metric)]
    edges = segment_graph(X, cfg) if len(X) > 1 else []
    chain = longest_path(len(X), edmonds_branching(len(X), edges))
    path = concatenate(X[chain], cfg.dup_threshold, cfg.metric)
    if cfg.simplify and len(path) > 2:
        path = rdp_simplify(path, cfg.rdp_translation / scale, cfg.rdp_rotation_deg)
    if cfg.resample_spacing is not None and len(path) > 1:
        path = resample(path, cfg.resample_spacing / scale)
    return path


def postprocess_all(segments, path_ids, cfg: Optional[PostprocessConfig] = None,
                    scale: float = 1.0) -> list:
    """One path per mask id that owns at least one segment, in ascending id order."""
    cfg = cfg or PostprocessConfig()
    segments = np.asarray(segments, dtype=float)
    path_ids = np.asarray(path_ids)
    out = []
    for mid in np.unique(path_ids):
        if mid < 0:
            continue
        path = postprocess_group(segments[path_ids == mid], cfg, scale)
        if path is not None:
            out.append(path)
    return out
