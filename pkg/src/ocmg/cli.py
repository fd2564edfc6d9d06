"""Command line entry point: ``ocmg generate|train|infer|evaluate|plot``.

Exit codes: 0 on success, 1 when a run fails, 2 for usage or
configuration errors (bad flags, missing manifest, missing samples).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import denormalize_poses, global_scale, normalize_dataset, normalize_poses
from .dataset import TOY_PARAMS, GeneratorParams, make_sample, split_ids
from .evalsim import GunModel, coverage_from_fields, coverage_threshold, colored_mesh_ply, simulate_paint
from .io import (
    FormatError,
    Manifest,
    _atomic_write,
    read_manifest,
    read_paths,
    read_sample,
    write_manifest,
    write_paths,
    write_sample,
)
from .learner import ModelConfig, TrainConfig, infer, load_checkpoint, train, write_log_csv
from .losses import pcd
from .postprocess import PostprocessConfig, postprocess_all
from .segments import count_segments, extract_segments

CATEGORIES = ("cuboids", "windows")
MANIFEST = "manifest.txt"
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")


class UsageError(Exception):
    """Bad configuration; reported with exit code 2."""


# ------------------------------------------------------------------ helpers


def _data_root(args) -> Path:
    root = args.data or os.environ.get("OCMG_DATA_DIR")
    if not root:
        raise UsageError("no dataset given: pass --data or set OCMG_DATA_DIR")
    return Path(root)


def _manifest(root: Path) -> Manifest:
    path = root / MANIFEST
    if not path.is_file():
        raise UsageError(f"manifest {path} does not exist")
    return read_manifest(path)


def _echo_config(out: Path, args, **extra) -> None:
    """Write the effective configuration beside the outputs."""
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    cfg["version"] = __version__
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "config.json", json.dumps(cfg, indent=1, sort_keys=True, default=str) + "\n")


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _select_ids(manifest: Manifest, split: str, only) -> list:
    ids = manifest.ids(None if split == "all" else split)
    if only:
        unknown = [s for s in only if s not in manifest.splits]
        if unknown:
            raise UsageError(f"unknown sample ids: {', '.join(unknown)}")
        ids = list(only)
    return ids


def _normalized(sample, scale):
    return normalize_dataset([sample], scale=scale)[0][0]


def _postprocess_config(args) -> PostprocessConfig:
    return PostprocessConfig(dup_threshold=args.dup_threshold, w_v=args.wv, knn=args.knn,
                             simplify=args.simplify, resample_spacing=args.resample)


# ----------------------------------------------------------------- generate


def _generate_one(job):
    category, seed_seq, params, sid, out = job
    sample = make_sample(category, seed_seq, params, sample_id=sid)
    write_sample(Path(out) / sid, sample)
    return sid


def cmd_generate(args) -> int:
    out = Path(args.out or os.environ.get("OCMG_DATA_DIR") or "")
    if not str(out):
        raise UsageError("no output directory: pass --out or set OCMG_DATA_DIR")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    base = TOY_PARAMS if args.toy else GeneratorParams()
    overrides = {k: v for k, v in (("pitch", args.pitch), ("spacing", args.spacing),
                                   ("n_points", args.points)) if v is not None}
    params = replace(base, **overrides)
    ids = [f"{args.category[:-1]}_{i:04d}" for i in range(args.count)]
    seeds = np.random.SeedSequence(args.seed).spawn(args.count)
    out.mkdir(parents=True, exist_ok=True)
    _map(_generate_one, [(args.category, s, params, sid, str(out)) for s, sid in zip(seeds, ids)],
         args.workers)

    splits = split_ids(ids, args.seed)
    train_samples = [read_sample(out / sid) for sid in ids if splits[sid] == "train"]
    if not train_samples:
        train_samples = [read_sample(out / ids[0])]
    manifest = Manifest(
        category=args.category, splits=splits, scale=global_scale(train_samples),
        max_segments=max(count_segments(s.paths, args.lam) for s in train_samples),
        max_paths=max(s.n_paths for s in train_samples), lam=args.lam,
        params={**params.as_dict(), "seed": args.seed})
    write_manifest(out / MANIFEST, manifest)
    _echo_config(out, args)
    print(f"wrote {len(ids)} samples to {out} (K={manifest.max_segments}, N={manifest.max_paths})")
    return 0


# -------------------------------------------------------------------- train


def cmd_train(args) -> int:
    root = _data_root(args)
    manifest = _manifest(root)
    out = Path(args.out)
    ids = manifest.ids("train")
    missing = [sid for sid in ids if not (root / sid).is_dir()]
    if missing:
        raise UsageError(f"manifest references missing samples: {', '.join(missing)}")
    samples = [_normalized(read_sample(root / sid), manifest.scale) for sid in ids]

    prior_log = []
    if args.resume:
        state, mcfg, tcfg = load_checkpoint(args.resume)
        log_path = out / "log.csv"
        if log_path.is_file():
            with open(log_path) as fh:
                prior_log = [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                             for row in csv.DictReader(fh) if int(row["epoch"]) < state.epoch]
    else:
        state = None
        mcfg = ModelConfig(K=manifest.max_segments, N=manifest.max_paths, lam=manifest.lam,
                           n_points=args.points)
        tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed)
    _echo_config(out, args, model=asdict(mcfg), training=asdict(tcfg))

    def progress(row):
        if args.verbose and (row["epoch"] % 100 == 0 or row["epoch"] == tcfg.epochs - 1):
            print(f"epoch {row['epoch']:5d}  p2s {row['loss_p2s']:.6g}  mask {row['loss_mask']:.6g}",
                  flush=True)

    result = train(samples, mcfg, tcfg, state=state, checkpoint_dir=out / "checkpoints",
                   on_epoch=progress)
    write_log_csv(out / "log.csv", prior_log + result.log)
    final = result.log[-1] if result.log else None
    if final:
        print(f"finished epoch {final['epoch']}: p2s {final['loss_p2s']:.6g}, mask {final['loss_mask']:.6g}")
    return 0


# -------------------------------------------------------------------- infer


def cmd_infer(args) -> int:
    root = _data_root(args)
    manifest = _manifest(root)
    out = Path(args.out)
    ids = _select_ids(manifest, args.split, args.sample)
    if not args.gt_oracle and not args.checkpoint:
        raise UsageError("--checkpoint is required unless --gt-oracle is given")
    pcfg = _postprocess_config(args)
    if args.gt_oracle:
        params = mcfg = None
    else:
        state, mcfg, _ = load_checkpoint(args.checkpoint)
        params = state.params
    _echo_config(out, args, postprocess={k: v for k, v in asdict(pcfg).items() if k != "metric"})

    for sid in ids:
        sample = _normalized(read_sample(root / sid), manifest.scale)
        t0 = time.perf_counter()
        if args.gt_oracle:
            labeled = extract_segments(sample.paths, manifest.lam)
            segs, ids_, n_hat = labeled.segments, labeled.path_ids, sample.n_paths
        else:
            segs, ids_, n_hat = infer(params, mcfg, sample.point_cloud, args.threshold)
        t1 = time.perf_counter()
        paths = postprocess_all(segs, ids_, pcfg, scale=manifest.scale)
        t2 = time.perf_counter()
        paths = [denormalize_poses(p, sample.offset, sample.scale) for p in paths]
        d = out / sid
        d.mkdir(parents=True, exist_ok=True)
        write_paths(d / "paths.txt", paths)
        timing = {"forward_ms": 1e3 * (t1 - t0), "postprocess_ms": 1e3 * (t2 - t1),
                  "n_masks": int(n_hat), "n_paths": len(paths)}
        _atomic_write(d / "timing.json", json.dumps(timing, indent=1, sort_keys=True) + "\n")
        print(f"{sid}: {len(paths)} paths  forward {timing['forward_ms']:.1f} ms"
              f"  postprocess {timing['postprocess_ms']:.1f} ms")
    return 0


# ----------------------------------------------------------------- evaluate


def _evaluate_one(job):
    sid, root, pred_dir, scale, gun, occlusion = job
    sample = read_sample(Path(root) / sid)
    pred = read_paths(Path(pred_dir) / sid / "paths.txt")
    c = sample.point_cloud.mean(axis=0)
    gt_flat = normalize_poses(sample.all_poses(), c, scale)
    if pred:
        value = pcd(normalize_poses(np.concatenate(pred), c, scale), gt_flat)
    else:
        value = float("nan")
    gt_field = simulate_paint(sample.mesh, sample.paths, gun, occlusion)
    pred_field = simulate_paint(sample.mesh, pred, gun, occlusion)
    return {"sample_id": sid, "pcd": value, "n_pred": len(pred), "n_true": sample.n_paths,
            "coverage": coverage_from_fields(gt_field, pred_field)}


def _report(rows) -> tuple:
    fields = ("sample_id", "pcd", "n_pred", "n_true", "coverage")
    pcds = np.array([r["pcd"] for r in rows], dtype=float)
    n_pred = np.array([r["n_pred"] for r in rows])
    n_true = np.array([r["n_true"] for r in rows])
    mean = {"sample_id": "mean",
            "pcd": float(np.nanmean(pcds)) if np.isfinite(pcds).any() else float("nan"),
            "acc_nop": float(np.mean(n_pred == n_true)),
            "mae_nop": float(np.mean(np.abs(n_pred - n_true))),
            "coverage": float(np.mean([r["coverage"] for r in rows]))}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields + ("acc_nop", "mae_nop"))
    for r in rows:
        w.writerow([r["sample_id"], repr(float(r["pcd"])), r["n_pred"], r["n_true"],
                    repr(float(r["coverage"])), int(r["n_pred"] == r["n_true"]),
                    abs(r["n_pred"] - r["n_true"])])
    w.writerow(["mean", repr(mean["pcd"]), "", "", repr(mean["coverage"]),
                repr(mean["acc_nop"]), repr(mean["mae_nop"])])
    table = [f"{'sample':<16}{'PCD':>14}{'n_pred':>8}{'n_true':>8}{'coverage %':>12}"]
    for r in rows:
        table.append(f"{r['sample_id']:<16}{r['pcd']:>14.6g}{r['n_pred']:>8d}{r['n_true']:>8d}"
                     f"{r['coverage']:>12.2f}")
    table.append("")
    table.append(f"PCD (mean, normalized units) {mean['pcd']:.6g}")
    table.append(f"Acc-NoP {mean['acc_nop']:.4f}   MAE-NoP {mean['mae_nop']:.4f}")
    table.append(f"Paint coverage (mean) {mean['coverage']:.2f} %")
    return buf.getvalue(), "\n".join(table) + "\n", mean


def cmd_evaluate(args) -> int:
    root = _data_root(args)
    manifest = _manifest(root)
    pred_dir = Path(args.pred)
    ids = _select_ids(manifest, args.split, args.sample)
    missing = [sid for sid in ids if not (pred_dir / sid / "paths.txt").is_file()]
    if missing:
        raise UsageError(f"predictions missing for sample ids: {', '.join(missing)}")
    gun = GunModel(cone_half_angle_deg=args.cone_angle)
    occlusion = args.occlusion == "on"
    rows = _map(_evaluate_one, [(sid, str(root), str(pred_dir), manifest.scale, gun, occlusion)
                                for sid in ids], args.workers)
    text_csv, table, _ = _report(rows)
    out = Path(args.out)
    _echo_config(out, args)
    _atomic_write(out / "metrics.csv", text_csv)
    _atomic_write(out / "report.txt", table)
    sys.stdout.write(table)
    return 0


# --------------------------------------------------------------------- plot


def svg_projection(paths, axes: tuple, size: int = 480, margin: int = 20) -> str:
    """Orthographic polyline view of paths on two coordinate axes."""
    pts = np.concatenate([np.asarray(p)[:, :3] for p in paths]) if paths else np.zeros((1, 3))
    lo, hi = pts[:, axes].min(axis=0), pts[:, axes].max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    k = (size - 2 * margin) / span

    def xy(p):
        u = margin + (p[axes[0]] - lo[0]) * k
        v = size - margin - (p[axes[1]] - lo[1]) * k
        return f"{u:.3f},{v:.3f}"

    names = "xyz"
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             f'<text x="4" y="14" font-size="12" font-family="sans-serif">'
             f'{names[axes[0]]}-{names[axes[1]]}</text>']
    for i, p in enumerate(paths):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(xy(q) for q in np.asarray(p))
        lines.append(f'<polyline data-path="{i}" fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{coords}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_plot(args) -> int:
    root = _data_root(args)
    sample_dir = root / args.sample
    if not sample_dir.is_dir():
        raise UsageError(f"sample {args.sample!r} not found under {root}")
    sample = read_sample(sample_dir)
    paths = read_paths(Path(args.pred) / args.sample / "paths.txt") if args.pred else sample.paths
    out = Path(args.out)
    _echo_config(out, args)
    for axes, name in (((0, 1), "xy"), ((0, 2), "xz"), ((1, 2), "yz")):
        _atomic_write(out / f"view_{name}.svg", svg_projection(paths, axes))
    if sample.mesh is not None:
        gun = GunModel()
        occlusion = args.occlusion == "on"
        gt_field = simulate_paint(sample.mesh, sample.paths, gun, occlusion)
        field = gt_field if not args.pred else simulate_paint(sample.mesh, paths, gun, occlusion)
        _atomic_write(out / "coverage.ply",
                      colored_mesh_ply(sample.mesh, field, coverage_threshold(gt_field)))
        print(f"coverage {coverage_from_fields(gt_field, field):.2f} %")
    return 0


# ------------------------------------------------------------------- parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ocmg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ocmg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    default_workers = os.cpu_count() or 1

    g = sub.add_parser("generate", help="write a procedural dataset")
    g.add_argument("--category", required=True, choices=CATEGORIES)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="dataset directory (default: $OCMG_DATA_DIR)")
    g.add_argument("--toy", action="store_true", help="low-resolution toy settings")
    g.add_argument("--pitch", type=float, help="raster pass spacing in meters")
    g.add_argument("--spacing", type=float, help="waypoint spacing in meters")
    g.add_argument("--points", type=_positive_int, help="points per cloud")
    g.add_argument("--lambda", dest="lam", type=_positive_int, default=4)
    g.add_argument("--workers", type=_positive_int, default=default_workers)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the toy predictor")
    t.add_argument("--data", help="dataset directory (default: $OCMG_DATA_DIR)")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=_positive_int, default=3000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--points", type=_positive_int, default=256, help="points fed to the encoder")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--workers", type=_positive_int, default=1,
                   help="accepted for symmetry; training runs in one process")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, text in (("infer", cmd_infer, "predict and postprocess paths"),
                             ("evaluate", cmd_evaluate, "score predictions")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--data", help="dataset directory (default: $OCMG_DATA_DIR)")
        s.add_argument("--out", required=True)
        s.add_argument("--split", choices=("train", "test", "all"), default="test")
        s.add_argument("--sample", action="append", help="restrict to these sample ids")
        s.set_defaults(func=func)
        if name == "infer":
            s.add_argument("--checkpoint")
            s.add_argument("--gt-oracle", action="store_true",
                           help="postprocess ground-truth segments and labels instead of predictions")
            s.add_argument("--threshold", type=float, default=0.5)
            s.add_argument("--knn", type=_positive_int, default=5)
            s.add_argument("--wv", type=float, default=1.0)
            s.add_argument("--dup-threshold", type=float, default=0.05)
            s.add_argument("--simplify", action="store_true", help="apply 6-D RDP simplification")
            s.add_argument("--resample", type=float, help="resample spacing in meters")
            s.add_argument("--seed", type=int, default=0)
        else:
            s.add_argument("--pred", required=True, help="directory written by infer")
            s.add_argument("--workers", type=_positive_int, default=default_workers)
            s.add_argument("--occlusion", choices=("on", "off"), default="on")
            s.add_argument("--cone-angle", type=float, default=30.0)
            s.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="SVG projections and a coverage mesh")
    pl.add_argument("--data", help="dataset directory (default: $OCMG_DATA_DIR)")
    pl.add_argument("--sample", required=True)
    pl.add_argument("--pred", help="prediction directory; plots ground truth if omitted")
    pl.add_argument("--out", required=True)
    pl.add_argument("--occlusion", choices=("on", "off"), default="on")
    pl.add_argument("--seed", type=int, default=0)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ocmg: error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"ocmg: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
