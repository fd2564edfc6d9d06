"""Text formats for samples, manifests, and path files.

Numbers are written with 17 significant digits so every float64 round
trips exactly.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Mesh, ObjectSample

FMT = "%.17g"
MANIFEST_HEADER = "# ocmg manifest v1"


class FormatError(ValueError):
    def __init__(self, path, lineno: Optional[int], msg: str):
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.lineno = lineno


def _fmt_row(values) -> str:
    return " ".join(FMT % v for v in values)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _parse_floats(path, lineno, line, width):
    parts = line.split()
    if len(parts) != width:
        raise FormatError(path, lineno, f"expected {width} numbers, found {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise FormatError(path, lineno, str(exc)) from None


def write_points(path, points) -> None:
    _atomic_write(Path(path), "".join(_fmt_row(p) + "\n" for p in np.asarray(points)))


def read_points(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                rows.append(_parse_floats(path, lineno, line, 3))
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def format_paths(paths) -> str:
    blocks = ["".join(_fmt_row(p) + "\n" for p in np.asarray(path)) for path in paths]
    return "\n".join(blocks)


def write_paths(path, paths) -> None:
    _atomic_write(Path(path), format_paths(paths))


def read_paths(path) -> list:
    """Pose blocks separated by blank lines, one ``x y z ox oy oz`` per line."""
    paths, cur = [], []
    with open(path) as fh:
        text = fh.read()
    if text and not text.endswith("\n"):
        raise FormatError(path, text.count("\n") + 1, "truncated line (missing newline)")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            if cur:
                paths.append(np.asarray(cur))
                cur = []
            continue
        cur.append(_parse_floats(path, lineno, line, 6))
    if cur:
        paths.append(np.asarray(cur))
    return paths


def write_obj(path, mesh: Mesh) -> None:
    lines = ["v " + _fmt_row(v) + "\n" for v in mesh.vertices]
    lines += ["f %d %d %d\n" % tuple(f + 1) for f in mesh.faces]
    _atomic_write(Path(path), "".join(lines))


def read_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append(_parse_floats(path, lineno, " ".join(parts[1:]), 3))
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError(path, lineno, "only triangular faces are supported")
                try:
                    faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
                except ValueError as exc:
                    raise FormatError(path, lineno, str(exc)) from None
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise FormatError(path, None, "face references a missing vertex")
    return Mesh(np.asarray(verts, dtype=float).reshape(-1, 3), faces)


def write_sample(directory, sample: ObjectSample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_points(d / "cloud.xyz", sample.point_cloud)
    write_paths(d / "paths.txt", sample.paths)
    if sample.mesh is not None:
        write_obj(d / "mesh.obj", sample.mesh)
    meta = {
        "sample_id": sample.sample_id,
        "category": sample.category,
        "offset": [float(v) for v in sample.offset],
        "scale": float(sample.scale),
        "spec": sample.spec,
    }
    _atomic_write(d / "meta.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_sample(directory) -> ObjectSample:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"sample directory {d} does not exist")
    try:
        meta = json.loads((d / "meta.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(d / "meta.json", exc.lineno, exc.msg) from None
    mesh = read_obj(d / "mesh.obj") if (d / "mesh.obj").exists() else None
    paths = read_paths(d / "paths.txt")
    cloud = read_points(d / "cloud.xyz")
    if len(cloud) == 0:
        raise FormatError(d / "cloud.xyz", None, "empty point cloud")
    if not paths:
        raise FormatError(d / "paths.txt", None, "no paths")
    return ObjectSample(point_cloud=cloud, paths=paths, mesh=mesh,
                        category=meta.get("category", ""), sample_id=meta.get("sample_id", d.name),
                        offset=np.asarray(meta.get("offset", [0, 0, 0]), dtype=float),
                        scale=float(meta.get("scale", 1.0)), spec=meta.get("spec", {}))


@dataclass
class Manifest:
    category: str
    splits: dict  # sample id -> "train" | "test"
    scale: float = 1.0
    max_segments: int = 0
    max_paths: int = 0
    lam: int = 4
    params: dict = field(default_factory=dict)

    def ids(self, split: Optional[str] = None) -> list:
        return [k for k, v in self.splits.items() if split is None or v == split]


def write_manifest(path, m: Manifest) -> None:
    lines = [MANIFEST_HEADER,
             f"category {m.category}",
             f"scale {FMT % m.scale}",
             f"max_segments {m.max_segments}",
             f"max_paths {m.max_paths}",
             f"lambda {m.lam}"]
    for k in sorted(m.params):
        lines.append(f"param {k} {json.dumps(m.params[k])}")
    for sid in sorted(m.splits):
        lines.append(f"sample {sid} {m.splits[sid]}")
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest {path} does not exist")
    fields = {"splits": {}, "params": {}}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            try:
                if key == "sample":
                    sid, split = rest.split()
                    if split not in ("train", "test"):
                        raise ValueError(f"unknown split {split!r}")
                    if sid in fields["splits"]:
                        raise ValueError(f"duplicate sample id {sid!r}")
                    fields["splits"][sid] = split
                elif key == "param":
                    name, _, val = rest.partition(" ")
                    fields["params"][name] = json.loads(val)
                elif key == "category":
                    fields["category"] = rest
                elif key == "scale":
                    fields["scale"] = float(rest)
                elif key in ("max_segments", "max_paths"):
                    fields[key] = int(rest)
                elif key == "lambda":
                    fields["lam"] = int(rest)
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
    if "category" not in fields:
        raise FormatError(path, None, "missing category line")
    return Manifest(**fields)


def load_split(root, manifest: Manifest, split: Optional[str] = None) -> list:
    """Read every sample of a split, failing with the full list of missing ids."""
    root = Path(root)
    ids = manifest.ids(split)
    missing = [sid for sid in ids if not (root / sid).is_dir()]
    if missing:
        raise FileNotFoundError(f"manifest references missing samples: {', '.join(missing)}")
    return [read_sample(root / sid) for sid in ids]
