import json
import os

import numpy as np
import pytest

from safeproj.cli import main


@pytest.fixture()
def nldi_config(tmp_path):
    path = tmp_path / "env.json"
    config = {
        "schema": 1,
        "family": "nldi",
        "seed": 1,
        "d_zero": True,
        "scales": {"cd_scale": 0.2, "g_scale": 0.5},
        "horizon": 40,
    }
    path.write_text(json.dumps(config))
    return str(path)


def test_synth_writes_certificate_and_report(tmp_path, nldi_config):
    out = str(tmp_path / "cert.json")
    rc = main(["synth", "--config", nldi_config, "--alpha", "0.1", "--out", out])
    assert rc == 0
    cert = json.loads(open(out).read())
    assert cert["kind"] == "nldi"
    assert len(cert["P"]) == 25
    report = json.loads(open(out + ".report.json").read())
    assert report["accepted"] is True
    assert report["lmi_residual_max_eig"] <= 1e-6


def test_synth_rerun_byte_identical(tmp_path, nldi_config):
    out1 = str(tmp_path / "c1.json")
    out2 = str(tmp_path / "c2.json")
    assert main(["synth", "--config", nldi_config, "--out", out1]) == 0
    assert main(["synth", "--config", nldi_config, "--out", out2]) == 0
    assert open(out1, "rb").read() == open(out2, "rb").read()


def test_synth_bad_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"family": "not-a-family"}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_synth_missing_file_exit_2(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")]) == 2


def test_fit_bounds_linearish_quadrotor(tmp_path):
    cfg = tmp_path / "quad.json"
    cfg.write_text(json.dumps({
        "family": "quadrotor",
        "bound_fit": {"grid_points": 7},
    }))
    out = str(tmp_path / "bounds.json")
    rc = main(["fit-bounds", "--config", str(cfg), "--out", out])
    assert rc == 0
    payload = json.loads(open(out).read())
    assert not np.any(np.asarray(payload["D"]))


def test_train_eval_adversary_roundtrip(tmp_path, nldi_config):
    cert = str(tmp_path / "cert.json")
    assert main(["synth", "--config", nldi_config, "--out", cert]) == 0
    outdir = str(tmp_path / "run")
    rc = main(["train", "--config", nldi_config, "--method", "robust-mbp",
               "--cert", cert, "--updates", "3", "--seed", "0",
               "--out", outdir])
    assert rc == 0
    ckpt = os.path.join(outdir, "robust-mbp.json")
    assert os.path.exists(ckpt)
    curve = open(os.path.join(outdir, "robust-mbp-curve.csv")).read().splitlines()
    assert curve[0] == "epoch,mean_cost_original,mean_cost_adversarial,instability_count"
    assert len(curve) >= 2
    svg = open(os.path.join(outdir, "robust-mbp-curve.svg")).read()
    assert svg.startswith("<svg")

    eval_csv = str(tmp_path / "eval.csv")
    rc = main(["eval", "--config", nldi_config, "--checkpoint", ckpt,
               "--cert", cert, "--mode", "original", "--episodes", "3",
               "--out", eval_csv])
    assert rc == 0
    lines = open(eval_csv).read().splitlines()
    assert lines[0] == "episode,cost,diverged"
    assert len(lines) == 4

    traj = str(tmp_path / "traj.csv")
    rc = main(["adversary", "--config", nldi_config, "--checkpoint", ckpt,
               "--cert", cert, "--seed", "0", "--out", traj])
    assert rc == 0
    header = open(traj).read().splitlines()[0]
    assert header.startswith("t,x1")


def test_eval_missing_checkpoint_errors(tmp_path, nldi_config):
    rc = main(["eval", "--config", nldi_config, "--checkpoint",
               str(tmp_path / "nope.json"), "--mode", "original",
               "--episodes", "1", "--out", str(tmp_path / "e.csv")])
    assert rc == 2


def test_compare_rejects_empty_methods(tmp_path, nldi_config):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "env_config": nldi_config, "methods": [], "seeds": [0],
    }))
    assert main(["compare", "--spec", str(spec)]) == 2


def test_compare_two_methods(tmp_path, nldi_config):
    spec = tmp_path / "spec.json"
    outdir = str(tmp_path / "cmp")
    spec.write_text(json.dumps({
        "env_config": nldi_config,
        "methods": ["lqr", "robust-lqr"],
        "modes": ["original"],
        "seeds": [0, 1],
        "episodes": 2,
        "out_dir": outdir,
    }))
    assert main(["compare", "--spec", str(spec)]) == 0
    table = open(os.path.join(outdir, "compare.csv")).read().splitlines()
    assert table[0] == "method,mode,mean_cost,instability_count"
    assert len(table) == 3
    rows = {ln.split(",")[0] for ln in table[1:]}
    assert rows == {"lqr", "robust-lqr"}
    detail = open(os.path.join(outdir, "compare-by-seed.csv")).read().splitlines()
    assert len(detail) == 5  # header + 2 methods x 2 seeds


def test_compare_deterministic_outputs(tmp_path, nldi_config):
    spec = tmp_path / "spec.json"
    out1 = str(tmp_path / "cmp1")
    out2 = str(tmp_path / "cmp2")
    body = {
        "env_config": nldi_config,
        "methods": ["robust-lqr"],
        "modes": ["original"],
        "seeds": [0],
        "episodes": 2,
    }
    spec.write_text(json.dumps(body))
    assert main(["compare", "--spec", str(spec), "--out", out1]) == 0
    assert main(["compare", "--spec", str(spec), "--out", out2]) == 0
    for name in ("compare.csv", "compare-by-seed.csv", "certificate.json"):
        b1 = open(os.path.join(out1, name), "rb").read()
        b2 = open(os.path.join(out2, name), "rb").read()
        assert b1 == b2, name
