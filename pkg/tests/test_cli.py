import csv
import json

import numpy as np
import pytest

from crystalseg.cli import main, run_bench
from crystalseg.dataset import read_instances
from crystalseg.pipeline import Instance, InstanceSet
from crystalseg.raster import BitMask, GrayImage, ObjectClass, read_label_map, write_pgm
from crystalseg.dataset import write_instances


@pytest.fixture
def scenes(tmp_path):
    gt = tmp_path / "gt"
    assert main(["synth", "--out", str(gt), "--count", "2", "--seed", "4", "--crystals", "6"]) == 0
    return gt


def test_synth_outputs(scenes):
    names = sorted(p.name for p in scenes.iterdir())
    assert names == sorted(["manifest.json"] + [f"scene_00{i}{s}" for i in range(2) for s in
                                                 (".pgm", "_labels.pgm", "_classes.csv", "_boxes.txt")])
    lm = read_label_map((scenes / "scene_000_labels.pgm").read_bytes())
    rows = list(csv.DictReader(open(scenes / "scene_000_classes.csv")))
    assert lm.n_instances == len(rows) == 6 + 3 + 1
    assert sum(r["class"] == "crystal" for r in rows) == 6


def test_segment_with_oracle_boxes(scenes, tmp_path):
    out = tmp_path / "pred"
    images = [str(scenes / f"scene_00{i}.pgm") for i in range(2)]
    assert main(["segment", *images, "--detections", str(scenes), "--out", str(out), "--overlay"]) == 0
    for i in range(2):
        pred = read_instances(out, f"scene_00{i}")
        assert len(pred.crystals()) == 6
        assert read_label_map((out / f"scene_00{i}_labels.pgm").read_bytes()).n_instances == 6
        assert (out / f"scene_00{i}_overlay.pgm").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "segment" and manifest["config"]["dark_fraction"] == 0.7
    assert all(v >= 0 for v in manifest["timing_s"].values())


def test_segment_baseline_blank(tmp_path):
    img = tmp_path / "blank.pgm"
    img.write_bytes(write_pgm(GrayImage(np.full((64, 64), 180, np.uint8))))
    out = tmp_path / "out"
    assert main(["segment", str(img), "--baseline", "--out", str(out)]) == 0
    assert read_label_map((out / "blank_labels.pgm").read_bytes()).n_instances == 0
    assert (out / "blank_detections.txt").read_text() == ""


def test_segment_missing_detections(tmp_path, caplog):
    img = tmp_path / "a.pgm"
    img.write_bytes(write_pgm(GrayImage(np.zeros((8, 8), np.uint8))))
    rc = main(["segment", str(img), "--detections", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")])
    assert rc == 2
    expected = str(tmp_path / "nowhere" / "a.txt")
    assert expected in caplog.text
    assert expected in json.loads((tmp_path / "o" / "manifest.json").read_text())["errors"][0]


def test_segment_config_file_and_flag_override(scenes, tmp_path):
    cfg = tmp_path / "seg.cfg"
    cfg.write_text("dark_fraction = 0.6\nse_radius = 2\n")
    out = tmp_path / "o"
    img = str(scenes / "scene_000.pgm")
    main(["segment", img, "--detections", str(scenes), "--config", str(cfg), "--out", str(out)])
    conf = json.loads((out / "manifest.json").read_text())["config"]
    assert (conf["dark_fraction"], conf["se_radius"]) == (0.6, 2)
    main(["segment", img, "--detections", str(scenes), "--config", str(cfg), "--dark-fraction", "0.75",
          "--out", str(out)])
    conf = json.loads((out / "manifest.json").read_text())["config"]
    assert (conf["dark_fraction"], conf["se_radius"]) == (0.75, 2)
    cfg.write_text("nonsense = 1\n")
    assert main(["segment", img, "--detections", str(scenes), "--config", str(cfg), "--out", str(out)]) == 2


def test_stage_dump_flag(scenes, tmp_path):
    out = tmp_path / "o"
    main(["segment", str(scenes / "scene_000.pgm"), "--detections", str(scenes), "--stage-dump", "--out", str(out)])
    assert len(list((out / "stages").glob("scene_000_*_largest.pgm"))) == 6


def test_evaluate_identity(scenes, tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", str(scenes), str(scenes), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert (rep["cnt_acc"], rep["cov_err_pct"], rep["size_err_um"], rep["map50"], rep["recall50"]) == \
        (1.0, 0.0, 0.0, 1.0, 1.0)
    conf = np.array(rep["confusion"])
    assert (conf == np.diag(np.diag(conf))).all()
    for name in ("per_image.csv", "confusion_matrix.png", "counts.png", "size_distribution.png", "manifest.json"):
        assert (out / name).stat().st_size > 0
    header = (out / "per_image.csv").read_text().splitlines()[0]
    assert header == "image_id,cnt_pred,cnt_gt,cov_pred,cov_gt,msize_pred,msize_gt"


def _write_count_scene(directory, image_id, n):
    s = InstanceSet(image_id)
    for k in range(n):
        s.instances.append(Instance(k + 1, ObjectClass.CRYSTAL, BitMask(np.ones((2, 2), bool), 3 * k, 0),
                                    BitMask(np.ones((2, 2), bool), 3 * k, 0).extent))
    write_instances(directory, s, 3 * max(n, 1), 2)


def test_evaluate_count_only(tmp_path):
    pred, gt, out = tmp_path / "pred", tmp_path / "gt", tmp_path / "ev"
    pred.mkdir()
    gt.mkdir()
    _write_count_scene(pred, "img1", 9)
    _write_count_scene(pred, "img2", 25)
    (gt / "counts.csv").write_text("image_id,count\nimg1,10\nimg2,20\n")
    assert main(["evaluate", str(pred), str(gt), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["cnt_acc"] == pytest.approx(0.825, abs=1e-12)
    assert rep["cov_err_pct"] is None and rep["size_err_um"] is None
    assert rep["map50"] is None and rep["recall50"] is None


def test_evaluate_id_mismatch(scenes, tmp_path, capsys):
    other = tmp_path / "other"
    other.mkdir()
    _write_count_scene(other, "scene_000", 1)
    assert main(["evaluate", str(other), str(scenes), "--out", str(tmp_path / "ev")]) == 2
    assert "scene_001" in capsys.readouterr().err


def test_evaluate_undefined_metric_exit_code(tmp_path):
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    for d in (pred, gt):
        d.mkdir()
        write_instances(d, InstanceSet("empty"), 4, 4)
    assert main(["evaluate", str(pred), str(gt), "--out", str(tmp_path / "ev")]) == 1
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert rep["cnt_acc"] is None and rep["skipped"]


def test_classify(scenes, tmp_path):
    out = tmp_path / "cl"
    rules = tmp_path / "rules.cfg"
    rules.write_text("a_small = 30\n")
    assert main(["classify", str(scenes / "scene_000.pgm"), str(scenes / "scene_000_labels.pgm"),
                 "--rules", str(rules), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "scene_000_rules.csv")))
    assert list(rows[0]) == ["instance_id", "class", "rule_fired"]
    assert len(rows) == 10
    assert all(r["rule_fired"] == "none" for r in rows if r["class"] == "crystal")
    assert all(r["rule_fired"] in ("R1", "R2", "R3", "R4") for r in rows if r["class"] == "hard_mimic")


def test_bench_zero_boxes():
    res = run_bench(256, 256, 0, 3)
    assert len(res["samples_s"]) == 3
    assert res["box_area_px"] == 0 and res["throughput_mpx_s"] == 0.0


def test_bench_cli(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bench", "--width", "512", "--height", "384", "--boxes", "20", "--repeat", "5",
                 "--out", str(out)]) == 0
    res = json.loads((out / "bench.json").read_text())
    assert len(res["samples_s"]) == 5
    assert res["p95_s"] >= res["median_s"] > 0
    assert (out / "bench_timing.png").exists()
    assert "budget 1.82 s" in capsys.readouterr().out
    assert len((out / "bench_samples.csv").read_text().splitlines()) == 6


def test_unreadable_image(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P7 nonsense")
    assert main(["segment", str(bad), "--baseline", "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "crystalseg", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "crystalseg" in r.stdout
