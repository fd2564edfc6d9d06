"""Chamfer-family losses, the asymmetric curriculum, and path-mask losses.

Pose sets are ``(n, 6)`` arrays and segment sets ``(n, lam, 6)`` arrays;
both are compared under the orientation-weighted squared metric from
:mod:`ocmg.core`. Nearest-neighbour ties always go to the lowest index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DEFAULT_METRIC, ContractError, MetricConfig, metric_weights
from .matching import hungarian
from .segments import flatten_to_points

PROB_EPS = 1e-7
_CHUNK = 256


def _flat(X: np.ndarray, cfg: MetricConfig):
    """Flatten elements to vectors and return matching per-coordinate weights."""
    X = np.asarray(X, dtype=float)
    if X.ndim < 2:
        raise ContractError("sets must have at least 2 dimensions")
    n = X.shape[0]
    flat = X.reshape(n, int(np.prod(X.shape[1:])))
    reps = flat.shape[1] // 6
    return flat, np.tile(metric_weights(cfg), reps)


def nearest(A: np.ndarray, B: np.ndarray, cfg: MetricConfig = DEFAULT_METRIC):
    """For every element of A: index of and squared distance to its nearest B."""
    a, w = _flat(A, cfg)
    b, _ = _flat(B, cfg)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("chamfer distances need non-empty sets")
    if a.shape[1] != b.shape[1]:
        raise ContractError("sets hold elements of different kinds")
    idx = np.empty(len(a), dtype=int)
    dist = np.empty(len(a))
    for s in range(0, len(a), _CHUNK):
        diff = a[s:s + _CHUNK, None, :] - b[None, :, :]
        d = np.einsum("ijk,ijk,k->ij", diff, diff, w)
        k = np.argmin(d, axis=1)
        idx[s:s + _CHUNK] = k
        dist[s:s + _CHUNK] = d[np.arange(len(k)), k]
    return idx, dist


def acd(A, B, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    """Mean over A of the squared distance to the nearest element of B."""
    _, dist = nearest(A, B, cfg)
    return float(np.mean(dist))


def pcd(A, B, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    return acd(A, B, cfg) + acd(B, A, cfg)


@dataclass(frozen=True)
class CurriculumWeights:
    w_f_p: float
    w_f_s: float
    w_b_p: float
    w_b_s: float

    def __post_init__(self):
        vals = self.as_tuple()
        if min(vals) < 0 or max(vals) <= 0:
            raise ContractError("weights must be >= 0 with at least one > 0")

    def as_tuple(self) -> tuple:
        return (self.w_f_p, self.w_f_s, self.w_b_p, self.w_b_s)


POINTWISE = CurriculumWeights(1.0, 0.0, 1.0, 0.0)
SEGMENTWISE = CurriculumWeights(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class CurriculumSchedule:
    total_epochs: int = 4800
    milestones: tuple = (1000, 2000)
    initial: tuple = (0.0, 1.0, 100.0, 0.01)
    factors: tuple = (0.1, 10.0)

    @classmethod
    def scaled(cls, total_epochs: int, reference_total: int = 4800) -> "CurriculumSchedule":
        r = total_epochs / reference_total
        return cls(total_epochs=total_epochs,
                   milestones=tuple(int(round(m * r)) for m in (1000, 2000)))


def weights_at(schedule: CurriculumSchedule, epoch: int) -> CurriculumWeights:
    if not 0 <= epoch < schedule.total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    w_f_p, w_f_s, w_b_p, w_b_s = schedule.initial
    for m in schedule.milestones:
        if epoch >= m:
            w_b_p *= schedule.factors[0]
            w_b_s *= schedule.factors[1]
    # repeated float scaling drifts off the exact stage values
    w_b_p = float(f"{w_b_p:.12g}")
    w_b_s = float(f"{w_b_s:.12g}")
    return CurriculumWeights(w_f_p, w_f_s, w_b_p, w_b_s)


def p2s_cd(P_hat, P, S_hat, S, w: CurriculumWeights, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    """Weighted sum of forward/backward point-wise and segment-wise ACD terms.

    Terms with zero weight are skipped.
    """
    total = 0.0
    if w.w_f_p:
        total += w.w_f_p * acd(P_hat, P, cfg)
    if w.w_f_s:
        total += w.w_f_s * acd(S_hat, S, cfg)
    if w.w_b_p:
        total += w.w_b_p * acd(P, P_hat, cfg)
    if w.w_b_s:
        total += w.w_b_s * acd(S, S_hat, cfg)
    return total


def p2s_cd_segments(S_hat, S, w: CurriculumWeights, cfg: MetricConfig = DEFAULT_METRIC) -> float:
    return p2s_cd(flatten_to_points(S_hat), flatten_to_points(S), S_hat, S, w, cfg)


def _acd_grad_pair(A, B, cfg):
    """Gradients of acd(A, B) with respect to A and to B, assignments frozen."""
    a, wv = _flat(A, cfg)
    b, _ = _flat(B, cfg)
    idx, _ = nearest(A, B, cfg)
    diff = (a - b[idx]) * wv * (2.0 / len(a))
    gb = np.zeros_like(b)
    np.add.at(gb, idx, -diff)
    return diff.reshape(np.shape(A)), gb.reshape(np.shape(B))


def p2s_cd_grad(S_hat, S, w: CurriculumWeights, cfg: MetricConfig = DEFAULT_METRIC) -> np.ndarray:
    """Gradient of :func:`p2s_cd` w.r.t. every predicted pose coordinate.

    The predicted pose set is the flattening of ``S_hat``, so point-wise
    gradients are folded back onto the segment array.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    S = np.asarray(S, dtype=float)
    P_hat = flatten_to_points(S_hat)
    P = flatten_to_points(S)
    g = np.zeros_like(S_hat)
    if w.w_f_p:
        g += w.w_f_p * _acd_grad_pair(P_hat, P, cfg)[0].reshape(S_hat.shape)
    if w.w_f_s:
        g += w.w_f_s * _acd_grad_pair(S_hat, S, cfg)[0]
    if w.w_b_p:
        g += w.w_b_p * _acd_grad_pair(P, P_hat, cfg)[1].reshape(S_hat.shape)
    if w.w_b_s:
        g += w.w_b_s * _acd_grad_pair(S, S_hat, cfg)[1]
    return g


# ---------------------------------------------------------------- masks


@dataclass
class TargetMasks:
    masks: np.ndarray  # (n_paths, K) in {0, 1}
    n_slots: int  # N, real masks padded with "no path" up to this count

    @property
    def n_paths(self) -> int:
        return self.masks.shape[0]

    def labels(self) -> np.ndarray:
        """Index ``c`` per slot: 1 for real paths, 0 for padding."""
        c = np.zeros(self.n_slots)
        c[: self.n_paths] = 1.0
        return c


@dataclass
class MaskBundle:
    probs: np.ndarray  # (N, K)
    confidences: np.ndarray  # (N,)


def build_target_masks(S_hat, S, path_ids, n_paths: int, n_slots: int,
                       cfg: MetricConfig = DEFAULT_METRIC) -> TargetMasks:
    """Label each predicted segment with the path of its nearest ground-truth segment."""
    if path_ids is None:
        raise ContractError("ground-truth segments need path labels")
    if n_slots < n_paths:
        raise ContractError(f"N={n_slots} is smaller than the {n_paths} target paths")
    idx, _ = nearest(S_hat, S, cfg)
    owner = np.asarray(path_ids)[idx]
    masks = np.zeros((n_paths, len(idx)))
    masks[owner, np.arange(len(idx))] = 1.0
    return TargetMasks(masks, n_slots)


def _clip(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bce_mask(m_hat, m) -> float:
    p = _clip(np.asarray(m_hat, dtype=float))
    m = np.asarray(m, dtype=float)
    return float(-np.sum(m * np.log(p) + (1.0 - m) * np.log(1.0 - p)))


def bce_mask_matrix(probs: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """``out[i, j] = bce_mask(probs[i], masks[j])`` for all pairs."""
    p = _clip(probs)
    lp, lq = np.log(p), np.log(1.0 - p)
    return -(lp @ masks.T + lq @ (1.0 - masks).T)


def matching_costs(bundle: MaskBundle, targets: TargetMasks) -> np.ndarray:
    N = bundle.probs.shape[0]
    if N != targets.n_slots or bundle.probs.shape[1] != targets.masks.shape[1]:
        raise ContractError("mask bundle and targets disagree in N or K")
    c = _clip(bundle.confidences)
    cost = np.empty((N, N))
    n = targets.n_paths
    cost[:, :n] = bce_mask_matrix(bundle.probs, targets.masks) - np.log(c)[:, None]
    cost[:, n:] = -np.log(1.0 - c)[:, None]
    return cost


def mask_loss(bundle: MaskBundle, targets: TargetMasks):
    """Matched confidence BCE plus mask BCE on slots matched to real paths.

    Returns ``(loss, sigma)`` with ``sigma[i]`` the target slot of
    prediction ``i``; slots ``>= n_paths`` are "no path".
    """
    cost = matching_costs(bundle, targets)
    sigma = hungarian(cost)
    n = targets.n_paths
    c = _clip(bundle.confidences)
    total = 0.0
    for i, t in enumerate(sigma):
        if t < n:
            total += -math.log(c[i]) + bce_mask(bundle.probs[i], targets.masks[t])
        else:
            total += -math.log(1.0 - c[i])
    return total, sigma


def _bce_prob_grad(p, m):
    """d BCE / d p with the clamp treated as a hard constant outside its range."""
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    pc = _clip(p)
    return np.where(inside, -m / pc + (1.0 - m) / (1.0 - pc), 0.0)


def mask_loss_grad(bundle: MaskBundle, targets: TargetMasks, sigma: Sequence[int]):
    """Gradients of the matched mask loss w.r.t. probabilities and confidences."""
    n = targets.n_paths
    gp = np.zeros_like(bundle.probs)
    gc = np.zeros_like(bundle.confidences)
    for i, t in enumerate(sigma):
        real = 1.0 if t < n else 0.0
        gc[i] = _bce_prob_grad(bundle.confidences[i:i + 1], np.array([real]))[0]
        if t < n:
            gp[i] = _bce_prob_grad(bundle.probs[i], targets.masks[t])
    return gp, gc


def assign_segments(bundle: MaskBundle, threshold: float = 0.5):
    """Route each segment to its most probable confident mask.

    Returns ``(ids, n_paths)``; ``ids`` is ``None`` and ``n_paths`` 0 when
    no mask clears the threshold.
    """
    confident = np.flatnonzero(bundle.confidences >= threshold)
    if len(confident) == 0:
        return None, 0
    sub = bundle.probs[confident]
    ids = confident[np.argmax(sub, axis=0)]
    return ids, len(np.unique(ids))


def _both_ways(A, B, cfg):
    """Nearest indices in both directions between flattened sets.

    Uses the ``|a|^2 + |b|^2 - 2ab`` expansion, which is a matrix product
    and several times faster than explicit differences; callers recompute
    the chosen distances exactly.
    """
    a, w = _flat(A, cfg)
    b, _ = _flat(B, cfg)
    aw = a * w
    D = np.einsum("ik,ik->i", aw, a)[:, None] + np.einsum("jk,jk,k->j", b, b, w)[None, :] - 2.0 * aw @ b.T
    return a, b, w, np.argmin(D, axis=1), np.argmin(D, axis=0)


def p2s_cd_value_and_grad(S_hat, S, w: CurriculumWeights, cfg: MetricConfig = DEFAULT_METRIC):
    """Loss and gradient w.r.t. ``S_hat`` in one pass; training hot path.

    Agrees with :func:`p2s_cd` / :func:`p2s_cd_grad` up to rounding in
    the choice between near-tied neighbours; distances of the chosen
    pairs are exact.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    S = np.asarray(S, dtype=float)
    g = np.zeros(S_hat.size)
    value = 0.0
    terms = ((flatten_to_points(S_hat), flatten_to_points(S), w.w_f_p, w.w_b_p),
             (S_hat, S, w.w_f_s, w.w_b_s))
    for X, Y, wf, wb in terms:
        if not (wf or wb):
            continue
        x, y, wv, fwd, bwd = _both_ways(X, Y, cfg)
        gx = np.zeros_like(x)
        if wf:
            diff = x - y[fwd]
            value += wf * float(np.mean(np.einsum("ik,ik,k->i", diff, diff, wv)))
            gx += wf * diff * wv * (2.0 / len(x))
        if wb:
            diff = x[bwd] - y
            value += wb * float(np.mean(np.einsum("ik,ik,k->i", diff, diff, wv)))
            np.add.at(gx, bwd, wb * diff * wv * (2.0 / len(y)))
        g += gx.reshape(-1)
    return value, g.reshape(S_hat.shape)
