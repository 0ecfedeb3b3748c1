import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from voxpano import __version__
from voxpano.cli import main
from voxpano.geometry import default_taxonomy
from voxpano.npyio import read_array, read_bundle, write_array

SMALL = {"h": 48, "w": 48, "z": 8, "dx": 0.4, "dy": 0.4, "dz": 0.4}


@pytest.fixture
def scene_dir(tmp_path):
    spec = tmp_path / "grid.yaml"
    spec.write_text(yaml.safe_dump(SMALL))
    out = tmp_path / "scene"
    assert main(["synth", "--seed", "7", "--instances", "6", "--spec", str(spec),
                 "--out", str(out)]) == 0
    return out, spec


def run_process(scene, spec, out, *extra):
    obs = str(scene / "obs.npz")
    return main(["process", "--sem", obs, "--heat", obs, "--reg", obs, "--spec", str(spec),
                 "--out", str(out), *extra])


def test_version_and_help():
    res = subprocess.run([sys.executable, "-m", "voxpano.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run([sys.executable, "-m", "voxpano.cli", "process", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--sem", "--logits", "--heat", "--reg", "--spec", "--taxonomy", "--out",
                 "--tau", "--topk", "--kernel", "--no-center-policy", "--threads"):
        assert flag in res.stdout


def test_process_writes_outputs(scene_dir, tmp_path):
    scene, spec = scene_dir
    out = tmp_path / "pred.npz"
    assert run_process(scene, spec, out) == 0
    bundle = read_bundle(out)
    assert set(bundle) == {"sem", "pano", "pano_classes"}
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    assert manifest["proposal"] == {"kernel": 3, "topk": 100, "tau": 0.3, "per_class_topk": False}
    assert manifest["stats"]["total_ids"] == len(bundle["pano_classes"])
    assert all(v >= 0 for v in manifest["timings_us"].values())
    assert len(manifest["centers"]) == 6


def test_process_shape_mismatch(scene_dir, tmp_path, capsys):
    scene, spec = scene_dir
    write_array(tmp_path / "heat.npy", np.zeros((40, 48, 10), np.float32))
    obs = str(scene / "obs.npz")
    code = main(["process", "--sem", obs, "--heat", str(tmp_path / "heat.npy"), "--reg", obs,
                 "--spec", str(spec), "--out", str(tmp_path / "o.npz")])
    err = capsys.readouterr().err.strip()
    assert code == 1
    assert len(err.splitlines()) == 1 and err.startswith("E_VALIDATION:")
    assert "(40, 48, 10)" in err and "(48, 48, 8)" in err


def test_process_missing_file(tmp_path, capsys):
    code = main(["process", "--sem", str(tmp_path / "nope.npy"), "--heat", "x.npy",
                 "--reg", "y.npy", "--out", str(tmp_path / "o.npz")])
    assert code == 2
    assert capsys.readouterr().err.startswith("E_IO:")


def test_process_truncated_input(scene_dir, tmp_path, capsys):
    scene, spec = scene_dir
    sem = read_bundle(scene / "obs.npz")["sem"]
    write_array(tmp_path / "sem.npy", sem)
    data = (tmp_path / "sem.npy").read_bytes()
    (tmp_path / "sem.npy").write_bytes(data[:-10])
    obs = str(scene / "obs.npz")
    code = main(["process", "--sem", str(tmp_path / "sem.npy"), "--heat", obs, "--reg", obs,
                 "--spec", str(spec), "--out", str(tmp_path / "o.npz")])
    assert code == 2
    assert capsys.readouterr().err.startswith("E_ARRAY_FORMAT:")


def test_process_from_logits(scene_dir, tmp_path):
    scene, spec = scene_dir
    tax = default_taxonomy()
    sem = read_bundle(scene / "obs.npz")["sem"]
    onehot = np.eye(tax.n_s, dtype=np.float32)[sem]          # h, w, z, n_s
    write_array(tmp_path / "logits.npy", onehot.reshape(48, 48, -1))
    obs = str(scene / "obs.npz")
    assert main(["process", "--logits", str(tmp_path / "logits.npy"), "--heat", obs, "--reg", obs,
                 "--spec", str(spec), "--out", str(tmp_path / "a.npz")]) == 0
    assert run_process(scene, spec, tmp_path / "b.npz") == 0
    assert np.array_equal(read_bundle(tmp_path / "a.npz")["pano"],
                          read_bundle(tmp_path / "b.npz")["pano"])


def test_eval_perfect(scene_dir, tmp_path, capsys):
    scene, spec = scene_dir
    out = tmp_path / "pred.npz"
    assert run_process(scene, spec, out) == 0
    capsys.readouterr()
    report = tmp_path / "report.json"
    figs = tmp_path / "figs"
    assert main(["eval", "--pred", str(out), "--gt", str(scene / "gt.npz"), "--spec", str(spec),
                 "--report", str(report), "--figures", str(figs)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split("\t")[:4] == ["class", "name", "kind", "iou"]
    doc = json.loads(report.read_text())
    assert doc["miou"] == 1.0 and doc["pq"] == 1.0
    assert report.with_suffix(".tsv").read_text() == table
    assert (figs / "class_scores.png").stat().st_size > 0
    assert (figs / "bev_panoptic.png").stat().st_size > 0


def test_synth_is_reproducible(tmp_path, capsys):
    spec = tmp_path / "grid.yaml"
    spec.write_text(yaml.safe_dump(SMALL))
    digests = []
    for name in ("a", "b"):
        assert main(["synth", "--seed", "7", "--instances", "4", "--heat-noise", "0.1",
                     "--spec", str(spec), "--out", str(tmp_path / name)]) == 0
        lines = capsys.readouterr().out.splitlines()
        digests.append([l.split("\t")[2] for l in lines])
    assert digests[0] == digests[1]


def test_c2h_all_equal_logits(tmp_path):
    tax = default_taxonomy()
    write_array(tmp_path / "l.npy", np.zeros((4, 3, 2 * tax.n_s), np.float32))
    assert main(["c2h", "--logits", str(tmp_path / "l.npy"), "--out", str(tmp_path / "s.npy")]) == 0
    sem = read_array(tmp_path / "s.npy")
    assert sem.shape == (4, 3, 2) and not sem.any()


def test_c2h_bad_channels(tmp_path, capsys):
    write_array(tmp_path / "l.npy", np.zeros((4, 3, 5), np.float32))
    assert main(["c2h", "--logits", str(tmp_path / "l.npy"), "--out", str(tmp_path / "s.npy")]) == 1
    assert capsys.readouterr().err.startswith("E_VALIDATION:")


def test_encode_targets_matches_synth(scene_dir, tmp_path):
    scene, spec = scene_dir
    out = tmp_path / "targets.npz"
    assert main(["encode-targets", "--gt", str(scene / "gt.npz"), "--spec", str(spec),
                 "--out", str(out)]) == 0
    t = read_bundle(out)
    gt = read_bundle(scene / "gt.npz")
    assert set(t) == {"heat", "reg", "reg_mask"}
    for k in t:
        assert np.array_equal(t[k], gt[k])


def test_bench_small(tmp_path, capsys):
    spec = tmp_path / "grid.yaml"
    spec.write_text(yaml.safe_dump(SMALL))
    report = tmp_path / "bench.json"
    assert main(["bench", "--spec", str(spec), "--instances", "0", "--reps", "3", "--threads", "1",
                 "--report", str(report), "--figures", str(tmp_path / "f")]) == 0
    doc = json.loads(report.read_text())
    assert doc["distance_evaluations"] == 0
    assert (tmp_path / "f" / "stage_latency.png").exists()
    assert "work_ratio" in capsys.readouterr().out


def test_bench_single_class_ratio_is_one(tmp_path):
    spec = tmp_path / "grid.yaml"
    spec.write_text(yaml.safe_dump(SMALL))
    report = tmp_path / "bench.json"
    assert main(["bench", "--spec", str(spec), "--instances", "5", "--reps", "2",
                 "--thing-classes", "car", "--report", str(report)]) == 0
    assert json.loads(report.read_text())["work_ratio"] == 1.0


def test_threads_env(monkeypatch, scene_dir, tmp_path):
    scene, spec = scene_dir
    monkeypatch.setenv("VOXPANO_THREADS", "bogus")
    assert run_process(scene, spec, tmp_path / "o.npz") == 1
    monkeypatch.setenv("VOXPANO_THREADS", "2")
    assert run_process(scene, spec, tmp_path / "o.npz") == 0


def test_bad_taxonomy_file(scene_dir, tmp_path, capsys):
    scene, spec = scene_dir
    bad = tmp_path / "tax.yaml"
    bad.write_text(yaml.safe_dump({"classes": [{"id": 0, "name": "a", "kind": "free"},
                                               {"id": 1, "name": "a", "kind": "thing"}]}))
    assert run_process(scene, spec, tmp_path / "o.npz", "--taxonomy", str(bad)) == 1
    assert capsys.readouterr().err.startswith("E_TAXONOMY:")
