"""Conversion between paths, fixed-length segments, and flat pose sets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ContractError


@dataclass
class LabeledSegmentSet:
    segments: np.ndarray  # (K, lam, 6)
    path_ids: Optional[np.ndarray] = None  # (K,) int, None for predictions

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def lam(self) -> int:
        return self.segments.shape[1]


def segment_starts(T: int, lam: int) -> list:
    """0-based start indices: stride ``lam - 1`` plus one end-anchored tail."""
    if T < lam:
        raise ContractError(f"path of length {T} is shorter than lambda={lam}")
    if lam == 1:
        return list(range(T))
    starts = list(range(0, T - lam + 1, lam - 1))
    if starts[-1] + lam != T:
        starts.append(T - lam)
    return starts


def extract_segments(paths: Sequence[np.ndarray], lam: int = 4) -> LabeledSegmentSet:
    segs, ids = [], []
    for i, path in enumerate(paths):
        path = np.asarray(path, dtype=float)
        for s in segment_starts(len(path), lam):
            segs.append(path[s:s + lam])
            ids.append(i)
    if not segs:
        return LabeledSegmentSet(np.zeros((0, lam, 6)), np.zeros(0, dtype=int))
    return LabeledSegmentSet(np.stack(segs), np.asarray(ids, dtype=int))


def flatten_to_points(segments) -> np.ndarray:
    if isinstance(segments, LabeledSegmentSet):
        segments = segments.segments
    segments = np.asarray(segments, dtype=float)
    if segments.size == 0:
        return np.zeros((0, 6))
    return segments.reshape(-1, segments.shape[-1])


def count_segments(paths: Sequence[np.ndarray], lam: int = 4) -> int:
    return sum(len(segment_starts(len(p), lam)) for p in paths)
