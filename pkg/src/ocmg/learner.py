"""Toy point-set encoder with parallel segment/mask decoders, trained by hand.

The encoder is a shared per-point MLP followed by max-pooling; segments,
path masks and mask confidences are decoded from the pooled feature by
separate heads. Backpropagation is written out explicitly and Adam is
implemented inline, all in float64.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import DEFAULT_METRIC, MetricConfig, ObjectSample
from .losses import (
    CurriculumSchedule,
    MaskBundle,
    assign_segments,
    build_target_masks,
    mask_loss,
    mask_loss_grad,
    p2s_cd_value_and_grad,
    weights_at,
)
from .segments import count_segments, extract_segments

CHECKPOINT_MAGIC = "ocmg-checkpoint 1"


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class ModelConfig:
    K: int
    N: int
    lam: int = 4
    n_points: int = 256
    enc_widths: tuple = (64, 128)
    seg_hidden: tuple = (256, 256)
    mask_hidden: tuple = (256,)

    def __post_init__(self):
        self.enc_widths = tuple(self.enc_widths)
        self.seg_hidden = tuple(self.seg_hidden)
        self.mask_hidden = tuple(self.mask_hidden)

    @property
    def feature_dim(self) -> int:
        return self.enc_widths[-1]


@dataclass
class TrainConfig:
    epochs: int = 3000
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    lr_halvings: int = 5
    seed: int = 0
    mask_start: Optional[int] = None
    reference_epochs: int = 4800
    orientation_weight: float = 0.25

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.mask_start is None:
            self.mask_start = math.ceil(2 * self.epochs / 3)

    @property
    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule.scaled(self.epochs, self.reference_epochs)

    @property
    def metric(self) -> MetricConfig:
        return MetricConfig(self.orientation_weight)

    def lr_at(self, epoch: int) -> float:
        interval = self.epochs / (self.lr_halvings + 1)
        k = min(self.lr_halvings, int(epoch // interval))
        return self.lr * 0.5 ** k

    def milestones(self) -> list:
        interval = self.epochs / (self.lr_halvings + 1)
        ms = {int(round(interval * k)) for k in range(1, self.lr_halvings + 1)}
        ms.update(self.schedule.milestones)
        ms.add(self.mask_start)
        return sorted(m for m in ms if 0 < m < self.epochs)


def _layer_names(prefix: str, n: int) -> list:
    return [f"{prefix}{i}" for i in range(n)]


def _dense_dims(cfg: ModelConfig) -> dict:
    F = cfg.feature_dim
    dims = {}
    widths = (3,) + cfg.enc_widths
    for i, name in enumerate(_layer_names("enc", len(cfg.enc_widths))):
        dims[name] = (widths[i], widths[i + 1])
    widths = (F,) + cfg.seg_hidden + (6 * cfg.lam * cfg.K,)
    for i, name in enumerate(_layer_names("seg", len(widths) - 1)):
        dims[name] = (widths[i], widths[i + 1])
    widths = (F,) + cfg.mask_hidden + (cfg.K * cfg.N,)
    for i, name in enumerate(_layer_names("mask", len(widths) - 1)):
        dims[name] = (widths[i], widths[i + 1])
    dims["conf0"] = (F, cfg.N)
    return dims


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    """He-normal weights, zero biases; orientation biases start as random unit vectors."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (fan_in, fan_out) in _dense_dims(cfg).items():
        params[name + ".W"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out))
        params[name + ".b"] = np.zeros(fan_out)
    last = _layer_names("seg", len(cfg.seg_hidden) + 1)[-1]
    params[last + ".W"] *= 0.1
    ori = rng.normal(size=(cfg.K * cfg.lam, 3))
    ori /= np.linalg.norm(ori, axis=1, keepdims=True)
    b = params[last + ".b"].reshape(cfg.K * cfg.lam, 6)
    b[:, 3:] = ori
    params[last + ".b"] = b.reshape(-1)
    return params


def _relu(x):
    return np.maximum(x, 0.0)


class Model:
    """Forward pass with cached activations for :meth:`backward`."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.enc = _layer_names("enc", len(cfg.enc_widths))
        self.seg = _layer_names("seg", len(cfg.seg_hidden) + 1)
        self.mask = _layer_names("mask", len(cfg.mask_hidden) + 1)

    def forward(self, params: dict, clouds: np.ndarray):
        """``clouds`` is (B, P, 3). Returns segments (B, K, lam, 6), probs (B, N, K), conf (B, N)."""
        cfg = self.cfg
        cache = {"x": [np.asarray(clouds, dtype=float)]}
        h = cache["x"][0]
        for name in self.enc:
            h = _relu(h @ params[name + ".W"] + params[name + ".b"])
            cache["x"].append(h)
        arg = np.argmax(h, axis=1)  # (B, F), first max wins
        g = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
        cache["arg"] = arg
        cache["g"] = g

        a = g
        cache["seg"] = [a]
        for k, name in enumerate(self.seg):
            a = a @ params[name + ".W"] + params[name + ".b"]
            if k < len(self.seg) - 1:
                a = _relu(a)
            cache["seg"].append(a)
        raw = a.reshape(len(g), cfg.K, cfg.lam, 6)
        norm = np.linalg.norm(raw[..., 3:], axis=-1, keepdims=True)
        segs = raw.copy()
        segs[..., 3:] = raw[..., 3:] / norm
        cache["onorm"] = norm
        cache["ounit"] = segs[..., 3:]

        m = g
        cache["mask"] = [m]
        for k, name in enumerate(self.mask):
            m = m @ params[name + ".W"] + params[name + ".b"]
            if k < len(self.mask) - 1:
                m = _relu(m)
            cache["mask"].append(m)
        probs = expit(m.reshape(len(g), cfg.N, cfg.K))
        conf = expit(g @ params["conf0.W"] + params["conf0.b"])
        cache["probs"], cache["conf"] = probs, conf
        for out in (segs, probs, conf):
            if not np.all(np.isfinite(out)):
                raise TrainingDivergence("non-finite activations in forward pass")
        return segs, probs, conf, cache

    def backward(self, params: dict, cache: dict, d_segs, d_probs=None, d_conf=None) -> dict:
        cfg = self.cfg
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        B = len(cache["g"])

        d_raw = np.array(d_segs, dtype=float, copy=True)
        u = cache["ounit"]
        do = d_raw[..., 3:]
        d_raw[..., 3:] = (do - u * np.sum(u * do, axis=-1, keepdims=True)) / cache["onorm"]
        da = d_raw.reshape(B, -1)
        dg = self._mlp_back(params, grads, self.seg, cache["seg"], da)

        if d_probs is not None:
            p = cache["probs"]
            dm = (d_probs * p * (1.0 - p)).reshape(B, -1)
            dg += self._mlp_back(params, grads, self.mask, cache["mask"], dm)
        if d_conf is not None:
            c = cache["conf"]
            dz = d_conf * c * (1.0 - c)
            grads["conf0.W"] += cache["g"].T @ dz
            grads["conf0.b"] += dz.sum(axis=0)
            dg += dz @ params["conf0.W"].T

        xs = cache["x"]
        dh = np.zeros_like(xs[-1])
        np.put_along_axis(dh, cache["arg"][:, None, :], dg[:, None, :], axis=1)
        for k in range(len(self.enc) - 1, -1, -1):
            name = self.enc[k]
            dz = (dh * (xs[k + 1] > 0)).reshape(-1, dh.shape[-1])
            grads[name + ".W"] += xs[k].reshape(len(dz), -1).T @ dz
            grads[name + ".b"] += dz.sum(axis=0)
            if k:
                dh = (dz @ params[name + ".W"].T).reshape(xs[k].shape)
        return grads

    @staticmethod
    def _mlp_back(params, grads, names, acts, dout):
        d = dout
        for k in range(len(names) - 1, -1, -1):
            name = names[k]
            if k < len(names) - 1:
                d = d * (acts[k + 1] > 0)
            grads[name + ".W"] += acts[k].T @ d
            grads[name + ".b"] += d.sum(axis=0)
            d = d @ params[name + ".W"].T
        return d


# ----------------------------------------------------------- training data


@dataclass
class TrainItem:
    cloud: np.ndarray  # (P, 3)
    segments: np.ndarray  # (k, lam, 6)
    path_ids: np.ndarray
    n_paths: int


def fit_cloud(cloud: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` points (farthest-point order), repeating cyclically if short."""
    cloud = np.asarray(cloud, dtype=float)
    return cloud[np.arange(n) % len(cloud)]


def prepare(samples: Sequence[ObjectSample], cfg: ModelConfig) -> list:
    items = []
    for s in samples:
        segs = extract_segments(s.paths, cfg.lam)
        items.append(TrainItem(fit_cloud(s.point_cloud, cfg.n_points), segs.segments,
                               segs.path_ids, s.n_paths))
    return items


def head_sizes(samples: Sequence[ObjectSample], lam: int = 4) -> tuple:
    """(K, N): largest segment count and path count over the given samples."""
    return (max(count_segments(s.paths, lam) for s in samples),
            max(s.n_paths for s in samples))


# ------------------------------------------------------------- objective


def sample_losses(segs, probs, conf, item: TrainItem, weights, with_mask: bool,
                  metric: MetricConfig = DEFAULT_METRIC):
    """Per-sample (l_p2s, l_mask, d_segs, d_probs, d_conf)."""
    l_p2s, d_segs = p2s_cd_value_and_grad(segs, item.segments, weights, metric)
    if not with_mask:
        return l_p2s, 0.0, d_segs, None, None
    bundle = MaskBundle(probs, conf)
    targets = build_target_masks(segs, item.segments, item.path_ids, item.n_paths,
                                 probs.shape[0], metric)
    l_mask, sigma = mask_loss(bundle, targets)
    d_probs, d_conf = mask_loss_grad(bundle, targets, sigma)
    return l_p2s, l_mask, d_segs, d_probs, d_conf


def loss_and_grads(model: Model, params: dict, items: Sequence[TrainItem], epoch: int,
                   tcfg: TrainConfig):
    """Mean batch loss ``L_p2s + [epoch >= mask_start] * L_mask`` and its gradients."""
    weights = weights_at(tcfg.schedule, epoch)
    with_mask = epoch >= tcfg.mask_start
    clouds = np.stack([it.cloud for it in items])
    segs, probs, conf, cache = model.forward(params, clouds)
    B = len(items)
    d_segs = np.zeros_like(segs)
    d_probs = np.zeros_like(probs) if with_mask else None
    d_conf = np.zeros_like(conf) if with_mask else None
    tot_p2s = tot_mask = 0.0
    for b, item in enumerate(items):
        lp, lm, ds, dp, dc = sample_losses(segs[b], probs[b], conf[b], item, weights,
                                           with_mask, tcfg.metric)
        tot_p2s += lp
        tot_mask += lm
        d_segs[b] = ds / B
        if with_mask:
            d_probs[b] = dp / B
            d_conf[b] = dc / B
    grads = model.backward(params, cache, d_segs, d_probs, d_conf)
    return {"p2s": tot_p2s / B, "mask": tot_mask / B}, grads


# ---------------------------------------------------------------- adam


@dataclass
class TrainState:
    params: dict
    m: dict
    v: dict
    step: int = 0
    epoch: int = 0

    @classmethod
    def fresh(cls, params: dict) -> "TrainState":
        return cls(params, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(state: TrainState, grads: dict, lr: float, tcfg: TrainConfig) -> None:
    b1, b2 = tcfg.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k in sorted(state.params):
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        state.params[k] = state.params[k] - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + tcfg.eps)


LOG_FIELDS = ("epoch", "loss_p2s", "loss_mask", "lr", "wbp", "wbs")


@dataclass
class TrainResult:
    state: TrainState
    log: list = field(default_factory=list)


def train(samples: Sequence[ObjectSample], mcfg: ModelConfig, tcfg: TrainConfig,
          state: Optional[TrainState] = None, checkpoint_dir=None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Full-batch training on normalized samples; resumable from ``state``."""
    if not samples:
        raise ValueError("training split is empty")
    items = prepare(samples, mcfg)
    model = Model(mcfg)
    if state is None:
        state = TrainState.fresh(init_params(mcfg, tcfg.seed))
    milestones = set(tcfg.milestones())
    result = TrainResult(state)
    while state.epoch < tcfg.epochs:
        epoch = state.epoch
        losses, grads = loss_and_grads(model, state.params, items, epoch, tcfg)
        total = losses["p2s"] + losses["mask"]
        if not math.isfinite(total):
            raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
        lr = tcfg.lr_at(epoch)
        w = weights_at(tcfg.schedule, epoch)
        row = {"epoch": epoch, "loss_p2s": losses["p2s"], "loss_mask": losses["mask"],
               "lr": lr, "wbp": w.w_b_p, "wbs": w.w_b_s}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        adam_update(state, grads, lr, tcfg)
        state.epoch = epoch + 1
        if checkpoint_dir is not None and (state.epoch in milestones or state.epoch == tcfg.epochs):
            save_checkpoint(Path(checkpoint_dir) / f"epoch{state.epoch:05d}.ckpt", state, mcfg, tcfg)
    return result


def evaluate_p2s(params: dict, samples: Sequence[ObjectSample], mcfg: ModelConfig,
                 weights, metric: MetricConfig = DEFAULT_METRIC) -> float:
    """Mean P2S-CD of the model's predictions under fixed weights."""
    items = prepare(samples, mcfg)
    segs, _, _, _ = Model(mcfg).forward(params, np.stack([it.cloud for it in items]))
    vals = [p2s_cd_value_and_grad(segs[b], it.segments, weights, metric)[0]
            for b, it in enumerate(items)]
    return float(np.mean(vals))


def infer(params: dict, mcfg: ModelConfig, cloud: np.ndarray, threshold: float = 0.5):
    """Predicted segments, per-segment mask ids (``-1`` if none), and path count."""
    segs, probs, conf, _ = Model(mcfg).forward(params, fit_cloud(cloud, mcfg.n_points)[None])
    ids, n_hat = assign_segments(MaskBundle(probs[0], conf[0]), threshold)
    if ids is None:
        ids = np.full(mcfg.K, -1)
    return segs[0], ids, n_hat


# ------------------------------------------------------------ checkpoints


def _tensor_lines(prefix: str, tensors: dict) -> list:
    lines = []
    for k in sorted(tensors):
        t = np.asarray(tensors[k], dtype=float)
        lines.append(f"tensor {prefix}{k} " + " ".join(str(d) for d in t.shape))
        lines.append(" ".join(float(x).hex() for x in t.ravel()))
    return lines


def save_checkpoint(path, state: TrainState, mcfg: ModelConfig, tcfg: TrainConfig) -> None:
    """Text checkpoint: header, JSON metadata, then hex-encoded row-major tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"model": asdict(mcfg), "train": asdict(tcfg), "step": state.step, "epoch": state.epoch}
    lines = [CHECKPOINT_MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    lines += _tensor_lines("param/", state.params)
    lines += _tensor_lines("adam_m/", state.m)
    lines += _tensor_lines("adam_v/", state.v)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(state, model_config, train_config)``."""
    from .io import FormatError

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise FormatError(path, 1, "not an ocmg checkpoint")
    if len(lines) < 2 or not lines[1].startswith("meta "):
        raise FormatError(path, 2, "missing metadata line")
    meta = json.loads(lines[1][5:])
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    k = 2
    while k < len(lines):
        head = lines[k].split()
        if len(head) < 2 or head[0] != "tensor" or k + 1 >= len(lines):
            raise FormatError(path, k + 1, "malformed tensor header")
        group, _, name = head[1].partition("/")
        shape = tuple(int(d) for d in head[2:])
        try:
            vals = [float.fromhex(x) for x in lines[k + 1].split()]
        except ValueError as exc:
            raise FormatError(path, k + 2, str(exc)) from None
        if len(vals) != int(np.prod(shape)):
            raise FormatError(path, k + 2, f"tensor {head[1]} has wrong element count")
        groups[group][name] = np.asarray(vals, dtype=float).reshape(shape)
        k += 2
    state = TrainState(groups["param"], groups["adam_m"], groups["adam_v"],
                       step=meta["step"], epoch=meta["epoch"])
    return state, ModelConfig(**meta["model"]), TrainConfig(**meta["train"])


def write_log_csv(path, rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_FIELDS)
    for r in rows:
        writer.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])
    Path(path).write_text(buf.getvalue())
