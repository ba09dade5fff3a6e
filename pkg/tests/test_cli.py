import json
import subprocess
import sys

import numpy as np
import pytest

from risurconv.cli import main
from risurconv.cloud import PointCloud, save_xyz
from risurconv.model.data import save_dataset, synth_dataset
from risurconv.nn.checkpoint import read_checkpoint
from risurconv.risp import read_feature_dump

TINY = {"classifier": {"layer_specs": [[64, 6, 8], [32, 6, 12], [16, 6, 16], [1, None, 24]],
                       "fc_widths": [16], "encoder_heads": 4}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    records = [json.loads(line) for line in out.splitlines() if line.strip()]
    return code, records, err


@pytest.fixture(scope="module")
def cloud_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cloud")
    (c,) = synth_dataset(("torus",), per_class=1, n_points=1024, seed=1)
    path = d / "torus.xyz"
    save_xyz(c, path)
    bare = d / "bare.xyz"
    save_xyz(PointCloud(c.points), bare)
    return path, bare


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    save_dataset(synth_dataset(("sphere", "box", "torus"), per_class=3, n_points=96, seed=2), d)
    return d


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


# ---------------------------------------------------------------- extract


def test_extract_shape_echo(capsys, cloud_file, tmp_path):
    out = tmp_path / "f.risp"
    code, recs, err = run(capsys, "extract", "--input", cloud_file[0], "--refs", 256, "--k", 8, "--out", out)
    assert code == 0
    assert (recs[0]["M"], recs[0]["K"], recs[0]["C"]) == (256, 8, 14)
    assert read_feature_dump(out).shape == (256, 8, 14)
    assert "256 x 8 x 14" in err


def test_extract_estimates_missing_normals(capsys, cloud_file, tmp_path):
    out = tmp_path / "f.risp"
    code, _, err = run(capsys, "extract", "--input", cloud_file[1], "--refs", 32, "--k", 8, "--out", out)
    assert code == 1 and "normals" in err
    code, recs, _ = run(capsys, "extract", "--input", cloud_file[1], "--refs", 32, "--k", 8,
                        "--normals", "estimate", "--out", out)
    assert code == 0 and recs[0]["M"] == 32


def test_extract_is_bitwise_repeatable(capsys, cloud_file, tmp_path):
    a, b = tmp_path / "a.risp", tmp_path / "b.risp"
    for out in (a, b):
        run(capsys, "extract", "--input", cloud_file[0], "--refs", 64, "--k", 8, "--out", out)
    assert a.read_bytes() == b.read_bytes()


def test_extract_extended_variant(capsys, cloud_file, tmp_path):
    code, recs, _ = run(capsys, "extract", "--input", cloud_file[0], "--refs", 16, "--k", 8,
                        "--variant", "extended-16", "--out", tmp_path / "e.risp")
    assert code == 0 and recs[0]["C"] == 16


@pytest.mark.parametrize("argv", [
    ["extract", "--input", "missing.xyz", "--refs", "4", "--out", "x"],
    ["extract", "--refs", "4", "--out", "x"],
    ["extract", "--input", "a", "--refs", "4", "--out", "x", "--bogus"],
    ["frobnicate"],
])
def test_bad_invocations_exit_1_with_one_line(capsys, argv, tmp_path):
    code, recs, err = run(capsys, *argv)
    assert code == 1
    assert recs == []
    assert len(err.strip().splitlines()) == 1 and err.startswith("risurconv: error:")


def test_malformed_cloud_reports_line(capsys, tmp_path):
    bad = tmp_path / "bad.xyz"
    bad.write_text("0 0 0 0 0 1\n1 2\n")
    code, _, err = run(capsys, "extract", "--input", bad, "--refs", 1, "--out", tmp_path / "x")
    assert code == 1 and "line 2" in err


# ---------------------------------------------------------------- invariance-check


def test_invariance_check_passes(capsys, cloud_file):
    code, recs, _ = run(capsys, "invariance-check", "--input", cloud_file[0], "--trials", 3, "--tol", 1e-6)
    assert code == 0
    r = recs[0]
    assert r["trials"] == 3 and r["passed"]
    assert r["max_abs_risp"] <= 1e-6 and r["max_abs_logit"] <= 1e-4


def test_invariance_check_negative_control(capsys, cloud_file):
    code, recs, err = run(capsys, "invariance-check", "--input", cloud_file[0], "--trials", 2,
                          "--no-logits", "--debug-corrupt-angles")
    assert code == 2
    assert recs[0]["max_abs_risp"] > 1e-3 and not recs[0]["passed"]
    assert "FAILED" in err


# ---------------------------------------------------------------- synth / train / eval / ablate


def test_synth_counts(capsys, tmp_path):
    code, recs, _ = run(capsys, "synth", "--classes", 5, "--per-class", 50, "--points", 16, "--out", tmp_path)
    assert code == 0 and recs[0]["files"] == 250
    assert len(list(tmp_path.glob("*.xyz"))) == 250


def test_synth_is_seeded(capsys, tmp_path):
    for d in ("a", "b"):
        run(capsys, "synth", "--classes", "sphere,cone", "--per-class", 1, "--points", 16,
            "--seed", 4, "--out", tmp_path / d)
    for f in (tmp_path / "a").glob("*.xyz"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_train_zero_lr_keeps_parameters(capsys, data_dir, tiny_config, tmp_path):
    init, done = tmp_path / "init.ckpt", tmp_path / "done.ckpt"
    code, recs, _ = run(capsys, "train", "--data", data_dir, "--config", tiny_config, "--lr", 0,
                        "--epochs", 1, "--batch-size", 3, "--out", done, "--init-out", init)
    assert code == 0 and recs[0]["epoch"] == 1
    h0, a = read_checkpoint(init)
    h1, b = read_checkpoint(done)
    assert h0 == h1
    kinds = {t["name"]: t["kind"] for t in h0["tensors"]}
    for name, arr in a.items():
        if kinds[name] == "param":
            assert arr.tobytes() == b[name].tobytes(), name


def test_train_then_eval(capsys, data_dir, tiny_config, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    code, recs, _ = run(capsys, "train", "--data", data_dir, "--config", tiny_config, "--epochs", 2,
                        "--batch-size", 3, "--seed", 1, "--out", ckpt)
    assert code == 0 and [r["epoch"] for r in recs] == [1, 2]
    assert all(r["seed"] == 1 for r in recs)
    code, recs, _ = run(capsys, "eval", "--checkpoint", ckpt, "--data", data_dir, "--mode", "zso3")
    assert code == 0
    assert recs[0]["mode"] == "z/so3" and 0.0 <= recs[0]["accuracy"] <= 1.0
    code, recs, _ = run(capsys, "eval", "--checkpoint", ckpt, "--data", data_dir, "--mode", "all")
    assert [r["mode"] for r in recs] == ["z/z", "so3/so3", "z/so3"]
    # an invariant network gives the same answer under every protocol
    assert len({r["accuracy"] for r in recs}) == 1


def test_train_is_deterministic(capsys, data_dir, tiny_config, tmp_path):
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.ckpt"
        _, recs, _ = run(capsys, "train", "--data", data_dir, "--config", tiny_config, "--epochs", 1,
                         "--batch-size", 3, "--seed", 2, "--out", path)
        outs.append(path.read_bytes())
        recs[0].pop("seconds")
    assert outs[0] == outs[1]


def test_config_unknown_key_fails_fast(capsys, data_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"lr": 0.1, "warmup": 3}}))
    code, _, err = run(capsys, "train", "--data", data_dir, "--config", cfg, "--out", tmp_path / "x")
    assert code == 1 and "warmup" in err and len(err.strip().splitlines()) == 1


def test_ablate_surfaces(capsys, tiny_config):
    code, recs, _ = run(capsys, "ablate", "--grid", "surfaces", "--config", tiny_config, "--classes", 2,
                        "--per-class", 3, "--test-per-class", 2, "--points", 96, "--epochs", 1,
                        "--batch-size", 3)
    assert code == 0
    assert [r["row"] for r in recs] == ["1", "2", "3", "4"]
    assert all({"config_hash", "accuracy", "seed"} <= set(r) for r in recs)


def test_console_script_entry_point(cloud_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "risurconv.cli", "invariance-check", "--input",
                           str(cloud_file[0]), "--trials", "1", "--no-logits", "--debug-corrupt-angles",
                           "--quiet"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr == ""
    assert json.loads(proc.stdout)["trials"] == 1


def test_thread_cap_gives_same_logits(cloud_file, monkeypatch):
    from risurconv.cloud import load_cloud
    from risurconv.model import build_classifier, predict_logits, toy_preset

    clouds = [load_cloud(cloud_file[0])] * 3
    net = build_classifier(toy_preset())
    monkeypatch.setenv("RISUR_THREADS", "1")
    a = predict_logits(net, clouds)
    monkeypatch.setenv("RISUR_THREADS", "3")
    b = predict_logits(net, clouds)
    np.testing.assert_array_equal(a, b)
