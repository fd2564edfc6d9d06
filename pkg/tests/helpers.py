"""Shared oracles for the unit and acceptance suites."""
import numpy as np

from ocmg.losses import CurriculumWeights, p2s_cd_grad, p2s_cd_segments
from ocmg.segments import flatten_to_points


def random_poses(rng, n):
    p = rng.normal(size=(n, 6))
    p[:, 3:] /= np.linalg.norm(p[:, 3:], axis=1, keepdims=True)
    return p


def random_segments(rng, k, lam=4):
    return random_poses(rng, k * lam).reshape(k, lam, 6)


def p2s_fd_check(rng, k=5, h=1e-6):
    """Relative error between the analytic P2S-CD gradient and central differences."""
    S_hat = random_segments(rng, k)
    S = random_segments(rng, k + 2)
    w = CurriculumWeights(*rng.uniform(0.1, 2.0, 4))
    g = p2s_cd_grad(S_hat, S, w)
    fd = np.zeros_like(S_hat)
    for idx in np.ndindex(S_hat.shape):
        up, dn = S_hat.copy(), S_hat.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (p2s_cd_segments(up, S, w) - p2s_cd_segments(dn, S, w)) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))


def brute_greedy_filter(X, tau, dist):
    """Plain restatement of the greedy duplicate rule using a callable metric."""
    n = len(X)
    pairs = sorted((dist(X[i], X[j]), i, j) for i in range(n) for j in range(i + 1, n))
    alive = [True] * n
    for d, i, j in pairs:
        if d < tau * tau and alive[i] and alive[j]:
            alive[j] = False
    return [i for i in range(n) if alive[i]]


def flat(segs):
    return flatten_to_points(np.asarray(segs))


def tiny_problem(seed=0):
    """A 3-point-cloud model small enough for full finite differences."""
    from ocmg.learner import Model, ModelConfig, TrainItem, init_params
    from ocmg.segments import extract_segments

    rng = np.random.default_rng(seed)
    mcfg = ModelConfig(K=3, N=2, n_points=3, enc_widths=(4, 5), seg_hidden=(6,), mask_hidden=(5,))
    params = init_params(mcfg, seed)
    # zero biases put dead points exactly on a ReLU kink; move off it
    for k in params:
        if k.endswith(".b"):
            params[k] = params[k] + rng.normal(0.0, 0.1, params[k].shape)
    items = []
    for _ in range(2):
        paths = [random_poses(rng, 5), random_poses(rng, 4)]
        ls = extract_segments(paths, 4)
        items.append(TrainItem(rng.normal(size=(3, 3)), ls.segments, ls.path_ids, 2))
    return Model(mcfg), params, items


def model_grad_error(epoch, seed=0, h=1e-5):
    """Worst per-tensor relative error of backprop against central differences."""
    from ocmg.learner import TrainConfig, loss_and_grads

    model, params, items = tiny_problem(seed)
    tcfg = TrainConfig(epochs=30, mask_start=20)

    def total(p):
        losses, _ = loss_and_grads(model, p, items, epoch, tcfg)
        return losses["p2s"] + losses["mask"]

    _, grads = loss_and_grads(model, params, items, epoch, tcfg)
    worst = 0.0
    for name, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + h
            up = total(params)
            value[idx] = orig - h
            dn = total(params)
            value[idx] = orig
            fd[idx] = (up - dn) / (2 * h)
        scale = max(np.linalg.norm(fd), np.linalg.norm(grads[name]), 1e-8)
        worst = max(worst, float(np.linalg.norm(grads[name] - fd) / scale))
    return worst
