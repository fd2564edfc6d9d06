import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocmg.core import ContractError
from ocmg.losses import (
    POINTWISE,
    SEGMENTWISE,
    CurriculumSchedule,
    CurriculumWeights,
    MaskBundle,
    TargetMasks,
    acd,
    assign_segments,
    bce_mask,
    build_target_masks,
    mask_loss,
    mask_loss_grad,
    p2s_cd,
    p2s_cd_grad,
    p2s_cd_segments,
    p2s_cd_value_and_grad,
    pcd,
    weights_at,
)
from ocmg.segments import flatten_to_points

from .helpers import p2s_fd_check, random_poses, random_segments


def _pose(x):
    p = np.zeros((1, 6))
    p[0, 0] = x
    p[0, 3] = 1.0
    return p


def test_acd_examples(rng):
    A = random_poses(rng, 7)
    assert acd(A, A) == 0.0
    assert acd(_pose(0), _pose(1)) == 1.0
    B = np.vstack([_pose(1), _pose(5)])
    assert acd(_pose(0), B) == 1.0
    assert acd(B, _pose(0)) == 13.0
    with pytest.raises(ContractError):
        acd(np.zeros((0, 6)), A)


def test_pcd_examples(rng):
    A, B = random_poses(rng, 5), random_poses(rng, 9)
    assert pcd(A, A) == 0.0
    assert pcd(A, B) == pcd(B, A)
    assert pcd(_pose(0), _pose(1)) == 2.0


def test_p2s_examples(rng):
    S = random_segments(rng, 3)
    w = CurriculumWeights(0.3, 1.0, 2.0, 0.5)
    assert p2s_cd_segments(S, S, w) == 0.0
    S2 = random_segments(rng, 4)
    assert p2s_cd_segments(S, S2, POINTWISE) == pcd(flatten_to_points(S), flatten_to_points(S2))
    a = np.zeros((1, 4, 6))
    a[..., 3] = 1.0
    b = a.copy()
    b[..., 0] += 1.0
    assert p2s_cd_segments(a, b, SEGMENTWISE) == 8.0


def test_weights_validation():
    with pytest.raises(ContractError):
        CurriculumWeights(0, 0, 0, 0)
    with pytest.raises(ContractError):
        CurriculumWeights(-1, 1, 0, 0)


@pytest.mark.parametrize("epoch, expected", [
    (0, (0, 1, 100, 0.01)), (999, (0, 1, 100, 0.01)), (1000, (0, 1, 10, 0.1)),
    (2000, (0, 1, 1, 1)), (4799, (0, 1, 1, 1))])
def test_curriculum(epoch, expected):
    assert weights_at(CurriculumSchedule(), epoch).as_tuple() == expected


def test_curriculum_range_and_scaling():
    with pytest.raises(ContractError):
        weights_at(CurriculumSchedule(), 4800)
    with pytest.raises(ContractError):
        weights_at(CurriculumSchedule(), -1)
    s = CurriculumSchedule.scaled(3000)
    assert s.milestones == (625, 1250)
    assert weights_at(s, 625).as_tuple() == (0, 1, 10, 0.1)


def test_grad_examples(rng):
    S = random_segments(rng, 3)
    assert not np.any(p2s_cd_grad(S, S, CurriculumWeights(1, 1, 1, 1)))
    a = np.zeros((1, 1, 6))
    a[..., 3] = 1.0
    b = a.copy()
    b[..., 0] = 1.0
    g = p2s_cd_grad(b, a, POINTWISE)
    assert g[0, 0, 0] == 4.0


def test_grad_matches_finite_differences(rng):
    for _ in range(5):
        assert p2s_fd_check(rng) < 1e-5


def test_fused_value_and_grad_agree(rng):
    for _ in range(20):
        S_hat, S = random_segments(rng, 6), random_segments(rng, 4)
        w = CurriculumWeights(*rng.uniform(0, 1, 4) + 0.01)
        v, g = p2s_cd_value_and_grad(S_hat, S, w)
        assert v == pytest.approx(p2s_cd_segments(S_hat, S, w), rel=1e-12)
        np.testing.assert_allclose(g, p2s_cd_grad(S_hat, S, w), rtol=1e-12, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    S_hat, S = random_segments(rng, 5), random_segments(rng, 3)
    w = CurriculumWeights(0.5, 1.0, 2.0, 0.25)
    base = p2s_cd_segments(S_hat, S, w)
    Ph, P = flatten_to_points(S_hat), flatten_to_points(S)
    ph, p = rng.permutation(len(Ph)), rng.permutation(len(P))
    sh, s = rng.permutation(5), rng.permutation(3)
    assert abs(p2s_cd(Ph[ph], P[p], S_hat[sh], S[s], w) - base) <= 1e-12
    assert abs(pcd(Ph[ph], P[p]) - pcd(Ph, P)) <= 1e-12


def test_target_masks():
    S = np.zeros((3, 4, 6))
    S[..., 3] = 1.0
    S[1, :, 0] = 1.0
    S[2, :, 0] = 2.0
    tm = build_target_masks(S, S, [0, 0, 1], 2, 3)
    assert tm.masks.tolist() == [[1, 1, 0], [0, 0, 1]]
    assert tm.labels().tolist() == [1, 1, 0]
    mid = S[:1].copy()
    mid[..., 0] = 1.5
    assert build_target_masks(mid, S, [0, 0, 1], 2, 2).masks.tolist() == [[1], [0]]
    with pytest.raises(ContractError):
        build_target_masks(S, S, [0, 0, 1], 2, 1)


def test_target_masks_partition(rng):
    S_hat, S = random_segments(rng, 9), random_segments(rng, 6)
    tm = build_target_masks(S_hat, S, [0, 0, 1, 1, 2, 2], 3, 5)
    assert np.all(tm.masks.sum(axis=0) == 1)


def test_bce_examples():
    assert bce_mask(np.full(4, 0.5), [1, 0, 1, 1]) == pytest.approx(4 * math.log(2))
    assert bce_mask([0.9, 0.1], [1, 0]) == pytest.approx(-2 * math.log(0.9))
    assert bce_mask([1.0, 0.0], [1, 0]) < 1e-6


def _random_bundle(rng, N, K, n):
    probs = rng.uniform(0.01, 0.99, (N, K))
    conf = rng.uniform(0.01, 0.99, N)
    masks = np.zeros((n, K))
    masks[rng.integers(0, n, K), np.arange(K)] = 1
    return MaskBundle(probs, conf), TargetMasks(masks, N)


def test_mask_loss_perfect_prediction():
    masks = np.array([[1.0, 0, 1], [0, 1, 0]])
    bundle = MaskBundle(np.vstack([masks, [0.5, 0.5, 0.5]]), np.array([1.0, 1.0, 0.0]))
    loss, sigma = mask_loss(bundle, TargetMasks(masks, 3))
    assert loss < 1e-5
    assert list(sigma) == [0, 1, 2]


def test_mask_loss_two_slot_brute_force():
    bundle = MaskBundle(np.array([[0.8, 0.2], [0.2, 0.8]]), np.array([0.7, 0.6]))
    targets = TargetMasks(np.array([[0.0, 1.0]]), 2)
    loss, sigma = mask_loss(bundle, targets)
    pair = lambda i, j: (bce_mask(bundle.probs[i], targets.masks[0]) - math.log(bundle.confidences[i])
                         - math.log(1 - bundle.confidences[j]))
    assert loss == pytest.approx(min(pair(0, 1), pair(1, 0)), rel=1e-12)
    assert list(sigma) == [1, 0]


def test_mask_loss_permutation_invariance(rng):
    for _ in range(30):
        bundle, targets = _random_bundle(rng, 5, 8, 3)
        base, _ = mask_loss(bundle, targets)
        p = rng.permutation(5)
        q = rng.permutation(3)
        perm_b = MaskBundle(bundle.probs[p], bundle.confidences[p])
        assert abs(mask_loss(perm_b, targets)[0] - base) <= 1e-12
        assert abs(mask_loss(bundle, TargetMasks(targets.masks[q], 5))[0] - base) <= 1e-12


def test_mask_loss_grad_fd(rng):
    bundle, targets = _random_bundle(rng, 4, 5, 2)
    loss, sigma = mask_loss(bundle, targets)
    gp, gc = mask_loss_grad(bundle, targets, sigma)
    h = 1e-7
    i, j = 1, 3
    up = MaskBundle(bundle.probs.copy(), bundle.confidences)
    up.probs[i, j] += h
    dn = MaskBundle(bundle.probs.copy(), bundle.confidences)
    dn.probs[i, j] -= h
    fd = (mask_loss(up, targets)[0] - mask_loss(dn, targets)[0]) / (2 * h)
    assert gp[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-8)
    up = MaskBundle(bundle.probs, bundle.confidences.copy())
    up.confidences[2] += h
    dn = MaskBundle(bundle.probs, bundle.confidences.copy())
    dn.confidences[2] -= h
    fd = (mask_loss(up, targets)[0] - mask_loss(dn, targets)[0]) / (2 * h)
    assert gc[2] == pytest.approx(fd, rel=1e-5)


def test_assign_segments_examples():
    ids, n = assign_segments(MaskBundle(np.full((1, 5), 0.8), np.array([0.9])))
    assert ids.tolist() == [0] * 5 and n == 1
    probs = np.array([[0.7, 0.1], [0.2, 0.6]])
    ids, n = assign_segments(MaskBundle(probs, np.array([0.9, 0.9])))
    assert ids.tolist() == [0, 1] and n == 2
    ids, n = assign_segments(MaskBundle(np.array([[0.9, 0.9], [0.1, 0.1]]), np.array([0.9, 0.9])))
    assert n == 1
    ids, n = assign_segments(MaskBundle(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0.9, 0.9])))
    assert ids.tolist() == [0, 0]
    assert assign_segments(MaskBundle(probs, np.array([0.1, 0.2]))) == (None, 0)
