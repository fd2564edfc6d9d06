import csv
import json

import pytest

from ocmg.cli import main
from ocmg.io import read_paths


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["generate", "--category", "cuboids", "--count", "5", "--seed", "7", "--toy",
                 "--out", str(root), "--workers", "1"]) == 0
    return root


def test_generate_contract_and_determinism(data, tmp_path):
    manifest = (data / "manifest.txt").read_text().splitlines()
    samples = [l for l in manifest if l.startswith("sample ")]
    assert len(samples) == 5
    assert sum(l.endswith(" train") for l in samples) == 4
    assert (data / "config.json").is_file()
    again = tmp_path / "again"
    assert main(["generate", "--category", "cuboids", "--count", "5", "--seed", "7", "--toy",
                 "--out", str(again), "--workers", "2"]) == 0
    a, b = _tree(data), _tree(again)
    a.pop("config.json"), b.pop("config.json")
    assert a == b


def test_usage_errors(tmp_path, monkeypatch):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--category", "shelves", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 2
    monkeypatch.delenv("OCMG_DATA_DIR", raising=False)
    assert main(["evaluate", "--pred", str(tmp_path), "--out", str(tmp_path / "e")]) == 2


def test_data_dir_from_environment(data, tmp_path, monkeypatch):
    monkeypatch.setenv("OCMG_DATA_DIR", str(data))
    assert main(["infer", "--gt-oracle", "--out", str(tmp_path / "p"), "--split", "all"]) == 0


def test_train_log_and_resume(data, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--epochs", "6"]) == 0
    rows = list(csv.DictReader(open(run / "log.csv")))
    assert [int(r["epoch"]) for r in rows] == list(range(6))
    assert (run / "checkpoints" / "epoch00006.ckpt").is_file()
    resumed = tmp_path / "resumed"
    resumed.mkdir()
    (resumed / "log.csv").write_text((run / "log.csv").read_text())
    assert main(["train", "--data", str(data), "--out", str(resumed),
                 "--resume", str(run / "checkpoints" / "epoch00003.ckpt")]) == 0
    rows2 = list(csv.DictReader(open(resumed / "log.csv")))
    assert len(rows2) == 6
    assert abs(float(rows2[-1]["loss_p2s"]) - float(rows[-1]["loss_p2s"])) <= 1e-10
    assert (resumed / "checkpoints" / "epoch00006.ckpt").read_text() == \
        (run / "checkpoints" / "epoch00006.ckpt").read_text()

    pred = tmp_path / "pred"
    assert main(["infer", "--data", str(data), "--checkpoint", str(run / "checkpoints" / "epoch00006.ckpt"),
                 "--out", str(pred)]) == 0
    sid = next(p.name for p in pred.iterdir() if p.is_dir())
    read_paths(pred / sid / "paths.txt")
    timing = json.loads((pred / sid / "timing.json").read_text())
    assert {"forward_ms", "postprocess_ms"} <= set(timing)


def test_oracle_evaluate_identities(data, tmp_path):
    pred = tmp_path / "pred"
    assert main(["infer", "--data", str(data), "--gt-oracle", "--out", str(pred), "--split", "all"]) == 0
    rep = tmp_path / "rep"
    assert main(["evaluate", "--data", str(data), "--pred", str(pred), "--out", str(rep),
                 "--split", "all", "--workers", "1"]) == 0
    rows = list(csv.DictReader(open(rep / "metrics.csv")))
    assert len(rows) == 6 and rows[-1]["sample_id"] == "mean"
    # postprocessed paths pass through normalization and back, hence rounding
    assert all(float(r["pcd"]) < 1e-20 for r in rows)
    assert float(rows[-1]["acc_nop"]) == 1.0 and float(rows[-1]["mae_nop"]) == 0.0
    assert "Acc-NoP" in (rep / "report.txt").read_text()

    gt = tmp_path / "gt"
    for d in data.iterdir():
        if d.is_dir():
            (gt / d.name).mkdir(parents=True)
            (gt / d.name / "paths.txt").write_bytes((d / "paths.txt").read_bytes())
    assert main(["evaluate", "--data", str(data), "--pred", str(gt), "--out", str(rep),
                 "--split", "all", "--workers", "1"]) == 0
    rows = list(csv.DictReader(open(rep / "metrics.csv")))
    assert all(float(r["pcd"]) == 0.0 for r in rows)

    (pred / "cuboid_0002" / "paths.txt").unlink()
    assert main(["evaluate", "--data", str(data), "--pred", str(pred), "--out", str(rep),
                 "--split", "all"]) == 2


def test_plot_outputs(data, tmp_path):
    out = tmp_path / "plot"
    assert main(["plot", "--data", str(data), "--sample", "cuboid_0000", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.json", "coverage.ply", "view_xy.svg", "view_xz.svg", "view_yz.svg"]
    svg = (out / "view_xy.svg").read_text()
    assert svg.count("<polyline") == 6 and "#d62728" in svg
    ply = (out / "coverage.ply").read_text()
    assert "220 40 40" in ply or "40 190 60" in ply
    out2 = tmp_path / "plot2"
    main(["plot", "--data", str(data), "--sample", "cuboid_0000", "--out", str(out2)])
    assert (out2 / "coverage.ply").read_bytes() == (out / "coverage.ply").read_bytes()
    assert main(["plot", "--data", str(data), "--sample", "nope", "--out", str(out)]) == 2
