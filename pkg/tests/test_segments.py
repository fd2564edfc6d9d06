import numpy as np
import pytest

from ocmg.core import ContractError
from ocmg.segments import count_segments, extract_segments, flatten_to_points, segment_starts


def _path(T):
    p = np.zeros((T, 6))
    p[:, 0] = np.arange(T)
    p[:, 5] = 1.0
    return p


@pytest.mark.parametrize("T, starts", [(10, [0, 3, 6]), (9, [0, 3, 5]), (4, [0])])
def test_segment_starts(T, starts):
    assert segment_starts(T, 4) == starts


def test_extract_examples():
    segs = extract_segments([_path(10)], 4)
    assert segs.segments.shape == (3, 4, 6)
    assert [list(s[:, 0]) for s in segs.segments] == [[0, 1, 2, 3], [3, 4, 5, 6], [6, 7, 8, 9]]
    tail = extract_segments([_path(9)], 4).segments
    assert list(tail[-1][:, 0]) == [5, 6, 7, 8]


def test_extract_labels_and_short_path():
    segs = extract_segments([_path(10), _path(7)], 4)
    assert list(segs.path_ids) == [0, 0, 0, 1, 1]
    with pytest.raises(ContractError):
        extract_segments([_path(3)], 4)


@pytest.mark.parametrize("T", range(4, 40))
def test_coverage_and_overlap(T):
    segs = extract_segments([_path(T)], 4).segments
    idx = segs[:, :, 0].astype(int)
    assert set(idx.ravel()) == set(range(T))
    for a, b in zip(idx[:-2], idx[1:-1]):
        assert len(set(a) & set(b)) == 1
    if len(idx) > 1:
        assert len(set(idx[-2]) & set(idx[-1])) >= 1


def test_flatten_examples():
    segs = extract_segments([_path(10)], 4)
    pts = flatten_to_points(segs)
    assert pts.shape == (12, 6)
    assert np.sum(pts[:, 0] == 3) == 2
    assert flatten_to_points(np.zeros((0, 4, 6))).shape == (0, 6)


def test_count_segments():
    assert count_segments([_path(10)], 4) == 3
    assert count_segments([_path(10), _path(10)], 4) == 6
    assert count_segments([_path(9)], 4) == 3
    for T in range(4, 30):
        paths = [_path(T), _path(T + 3)]
        assert count_segments(paths, 4) == len(extract_segments(paths, 4))
