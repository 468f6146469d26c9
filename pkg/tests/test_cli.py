import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from uascorrect.cli import main
from uascorrect.raster import load_raster

SMALL = {"epochs": 1, "unet": {"input_size": 128, "depth": 1, "base_channels": 2}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(json.dumps(SMALL))
    assert main(["dataset", "--out-dir", str(d / "ds"), "--counts", "shadow=2,glint=2,both=2", "--k", "2"]) == 0
    return d


def test_synth_writes_raster_and_masks(tmp_path):
    out, masks, clean = tmp_path / "d.mbrf", tmp_path / "m.mbrf", tmp_path / "c.mbrf"
    rc = main(["synth", "--size", "64", "--category", "shadow", "--output", str(out),
               "--masks", str(masks), "--clean-out", str(clean), "--seed", "2"])
    assert rc == 0
    deg, m, c = load_raster(out), load_raster(masks), load_raster(clean)
    assert deg.data.shape == c.data.shape == (5, 64, 64)
    assert m.data.shape == (2, 64, 64) and m.data[1].max() == 0
    assert deg.data.min() >= 0 and deg.data.max() <= 1


def test_synth_from_spec(tmp_path):
    clean = tmp_path / "c.mbrf"
    main(["synth", "--size", "32", "--output", str(tmp_path / "x.mbrf"), "--clean-out", str(clean)])
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"shadow": {"angle_deg": 0, "seam_width": 8, "attenuation": 1.0}}))
    assert main(["synth", "--input", str(clean), "--spec", str(spec), "--output", str(tmp_path / "y.mbrf")]) == 0
    assert np.array_equal(load_raster(tmp_path / "y.mbrf").data, load_raster(clean).data)


def test_dataset_manifest(workdir):
    rows = list(csv.DictReader((workdir / "ds" / "manifest.csv").open()))
    assert len(rows) == 6
    assert {r["fold"] for r in rows} == {"0", "1"}
    stats = json.loads((workdir / "ds" / "stats.json").read_text())
    assert len(stats["minimum"]) == 5


def test_train_and_correct(workdir, tmp_path):
    weights = tmp_path / "m.unw"
    rc = main(["train", "--data", str(workdir / "ds" / "manifest.csv"), "--config", str(workdir / "small.json"),
               "--out", str(weights), "--trace", str(tmp_path / "t.json")])
    assert rc == 0 and weights.exists()
    assert len(json.loads((tmp_path / "t.json").read_text())["epoch_loss"]) == 1
    scene = tmp_path / "s.mbrf"
    main(["synth", "--size", "260", "--output", str(scene)])
    out = tmp_path / "fixed.mbrf"
    rc = main(["correct", "--weights", str(weights), "--input", str(scene), "--output", str(out),
               "--stats", str(workdir / "ds" / "stats.json")])
    assert rc == 0
    assert load_raster(out).data.shape == (5, 260, 260)


def test_train_writes_stats_for_correct(workdir, tmp_path):
    weights = tmp_path / "m.unw"
    main(["train", "--data", str(workdir / "ds" / "manifest.csv"), "--config", str(workdir / "small.json"),
          "--out", str(weights)])
    sidecar = tmp_path / "m.unw.stats.json"
    assert json.loads(sidecar.read_text()) == json.loads((workdir / "ds" / "stats.json").read_text())
    scene = tmp_path / "s.mbrf"
    main(["synth", "--size", "200", "--output", str(scene)])
    implicit, explicit = tmp_path / "a.mbrf", tmp_path / "b.mbrf"
    assert main(["correct", "--weights", str(weights), "--input", str(scene), "--output", str(implicit)]) == 0
    assert main(["correct", "--weights", str(weights), "--input", str(scene), "--output", str(explicit),
                 "--stats", str(sidecar)]) == 0
    assert implicit.read_bytes() == explicit.read_bytes()


def test_cv_and_report(workdir, tmp_path):
    out = tmp_path / "cv"
    rc = main(["cv", "--data", str(workdir / "ds" / "manifest.csv"), "--config", str(workdir / "small.json"),
               "--k", "2", "--losses", "mse,mae", "--out-dir", str(out)])
    assert rc == 0
    for name in ("cv_report.json", "table.csv", "folds.csv", "boxplot_ssim.svg", "curve_loss_mae.svg"):
        assert (out / name).exists(), name
    table = (out / "table.csv").read_text()
    (out / "table.csv").unlink()
    assert main(["report", "--out-dir", str(out)]) == 0
    assert (out / "table.csv").read_text() == table


@pytest.mark.parametrize("argv", [
    ["cv", "--losses", "hinge", "--out-dir", "unused"],
    ["train", "--epochs", "0"],
    ["train", "--config", "/nonexistent/config.json"],
    ["dataset", "--out-dir", "unused", "--counts", "shadow=many"],
])
def test_config_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_json_exit_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{epochs: 3")
    assert main(["train", "--config", str(cfg)]) == 2


def test_data_errors_exit_3(tmp_path):
    assert main(["report", "--out-dir", str(tmp_path)]) == 3
    assert main(["train", "--data", str(tmp_path / "missing.csv")]) == 3
    junk = tmp_path / "junk.mbrf"
    junk.write_bytes(b"nope")
    assert main(["correct", "--weights", str(junk), "--input", str(junk), "--output", str(tmp_path / "o")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4(workdir, tmp_path):
    rc = main(["train", "--data", str(workdir / "ds" / "manifest.csv"), "--config", str(workdir / "small.json"),
               "--epochs", "3", "--lr", "1e30", "--out", str(tmp_path / "m.unw")])
    assert rc == 4


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["synth"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "uascorrect", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "dataset", "train", "cv", "correct", "report"):
        assert cmd in proc.stdout
