import numpy as np
import pytest

from ocmg.core import segment_distance_sq
from ocmg.losses import pcd
from ocmg.postprocess import (
    PostprocessConfig,
    concatenate,
    edge_cost,
    filter_duplicates,
    postprocess_all,
    rdp_simplify,
    resample,
)
from ocmg.segments import extract_segments

from .helpers import brute_greedy_filter, random_segments


def _line(T, step=0.05, y=0.0):
    p = np.zeros((T, 6))
    p[:, 0] = np.arange(T) * step
    p[:, 1] = y
    p[:, 5] = -1.0
    return p


def test_filter_duplicates_examples(rng):
    s = random_segments(rng, 1)
    assert filter_duplicates(np.concatenate([s, s]), 0.05).tolist() == [0]
    far = random_segments(rng, 5) * 10
    assert filter_duplicates(far, 0.05).tolist() == [0, 1, 2, 3, 4]


def test_filter_duplicates_matches_greedy_oracle(rng):
    for _ in range(50):
        base = random_segments(rng, 1)
        X = base + rng.normal(scale=0.03, size=(7, 4, 6))
        kept = filter_duplicates(X, 0.1)
        assert kept.tolist() == brute_greedy_filter(X, 0.1, segment_distance_sq)
        assert len(kept) >= 1


def test_edge_cost_examples():
    a = _line(4)
    b = _line(4)
    b[:, 0] += 0.15
    assert edge_cost(a, b) == pytest.approx(0.0, abs=1e-15)
    c = b.copy()
    c[:, 0] += 1.0
    assert edge_cost(a, c) == pytest.approx(1.0)
    d = np.zeros((4, 6))
    d[:, 5] = 1.0
    d[:, 0] = [0.0, 1.0, 2.0, 3.0]
    e = d.copy()
    e[:, 0] = [3.0, 2.0, 1.0, 0.0]
    assert edge_cost(d, e) == 4.0


def test_concatenate_examples():
    path = _line(10)
    segs = extract_segments([path], 4).segments
    out = concatenate(segs)
    assert out.shape == (10, 6)
    np.testing.assert_allclose(out, path, atol=1e-15)
    assert np.array_equal(concatenate(segs[:1]), segs[0])
    gap = segs.copy()
    gap[1:, :, 0] += np.array([1.0, 2.0])[:, None]
    assert concatenate(gap).shape == (12, 6)


def test_concatenate_tail_overlap():
    path = _line(9)
    segs = extract_segments([path], 4).segments
    np.testing.assert_allclose(concatenate(segs), path, atol=1e-15)


def test_rdp_examples():
    assert len(rdp_simplify(_line(20), 0.01, 15)) == 2
    corner = np.vstack([_line(5), _line(5)[1:]])
    corner[5:, 0] = 0.2
    corner[5:, 1] = np.arange(1, 5) * 0.05
    out = rdp_simplify(corner, 0.01, 15)
    assert any(np.allclose(p, corner[4]) for p in out)
    flip = _line(9)
    flip[4, 3:] = [np.sin(0.5), 0, -np.cos(0.5)]
    out = rdp_simplify(flip, 0.01, 15)
    assert any(np.array_equal(p, flip[4]) for p in out)


def test_rdp_subsequence(rng):
    path = np.cumsum(rng.normal(scale=0.02, size=(40, 6)), axis=0)
    path[:, 3:] /= np.linalg.norm(path[:, 3:], axis=1, keepdims=True)
    out = rdp_simplify(path, 0.01, 15)
    idx = [int(np.flatnonzero(np.all(path == p, axis=1))[0]) for p in out]
    assert idx == sorted(idx) and idx[0] == 0 and idx[-1] == 39


def test_resample_spacing():
    out = resample(_line(11), 0.1)
    assert len(out) == 6
    np.testing.assert_allclose(np.diff(out[:, 0]), 0.1)


def _round_trip_case():
    paths = [_line(10), _line(7, y=0.5)[::-1], _line(13, y=1.0)]
    segs = extract_segments(paths, 4)
    return paths, segs


def test_postprocess_round_trip():
    paths, segs = _round_trip_case()
    out = postprocess_all(segs.segments, segs.path_ids)
    assert len(out) == 3
    for got, want in zip(out, paths):
        assert pcd(got, want) < 1e-9
        assert len(got) == len(want)


def test_postprocess_mask_permutation_and_empty():
    paths, segs = _round_trip_case()
    relabel = np.array([2, 0, 1])[segs.path_ids]
    out = postprocess_all(segs.segments, relabel)
    ref = postprocess_all(segs.segments, segs.path_ids)
    for new_id, old in zip([0, 1, 2], [1, 2, 0]):
        np.testing.assert_array_equal(out[new_id], ref[old])
    assert postprocess_all(np.zeros((0, 4, 6)), np.zeros(0, dtype=int)) == []
    ids = segs.path_ids.copy()
    ids[ids == 1] = -1
    assert len(postprocess_all(segs.segments, ids)) == 2


def test_config_validation():
    with pytest.raises(ValueError):
        PostprocessConfig(dup_threshold=0)
    with pytest.raises(ValueError):
        PostprocessConfig(knn=0)


@pytest.mark.parametrize("step", [0.03, 0.05, 0.2])
@pytest.mark.parametrize("T", [4, 5, 9, 10, 11])
def test_round_trip_dense_spacing(step, T):
    path = _line(T, step)
    segs = extract_segments([path], 4)
    out = postprocess_all(segs.segments, segs.path_ids)
    assert len(out) == 1 and len(out[0]) == T
    np.testing.assert_allclose(out[0], path, atol=1e-12)
