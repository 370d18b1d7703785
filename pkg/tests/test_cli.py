import json
import os

import numpy as np
import pytest

from stablesde.cli import main, resolve_config, EXIT_OK, EXIT_VALIDATION


FAST = ["n_samples=40", "length=12", "max_epochs=3", "n_steps=15", "d_z=8",
        "n_layers=1", "n_hidden=16"]


def run(args):
    return main([str(a) for a in args])


def test_resolve_config_unknown_keys(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"kind": "lsde", "typo_key": 1, "zzz": 2}))
    with pytest.raises(ValueError, match="unknown config keys: typo_key, zzz"):
        resolve_config(str(cfg_file), [])
    with pytest.raises(ValueError, match="unknown config keys: nope"):
        resolve_config("", ["nope=1"])
    cfg = resolve_config("", ["kind=gsde", "lr=0.01", "early_stopping=false",
                              "depths=[1,2]"])
    assert cfg["kind"] == "gsde" and cfg["lr"] == 0.01
    assert cfg["early_stopping"] is False and cfg["depths"] == [1, 2]


def test_bad_override_forms():
    with pytest.raises(ValueError, match="key=value"):
        resolve_config("", ["justakey"])
    with pytest.raises(ValueError, match="boolean"):
        resolve_config("", ["early_stopping=maybe"])


def test_unknown_key_exit_code(tmp_path):
    assert run(["synth", "--out", tmp_path, "no_such_key=1"]) == EXIT_VALIDATION


def test_missing_config_file_exit_code(tmp_path):
    assert run(["synth", "--config", tmp_path / "absent.json",
                "--out", tmp_path]) == EXIT_VALIDATION


def test_synth_writes_artifacts(tmp_path):
    assert run(["synth", "--out", tmp_path, "n_samples=10", "length=10"]) == EXIT_OK
    assert (tmp_path / "values.csv").exists()
    assert (tmp_path / "labels.csv").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert "data_hash" in report and report["config"]["n_samples"] == 10


def test_corrupt_does_not_mutate_input(tmp_path):
    src = tmp_path / "src"
    dst = tmp_path / "dst"
    run(["synth", "--out", src, "n_samples=10", "length=10"])
    before = (src / "values.csv").read_bytes()
    assert run(["corrupt", "--out", dst, f"data_values={src/'values.csv'}",
                f"data_labels={src/'labels.csv'}", "missing_rate=0.4"]) == EXIT_OK
    assert (src / "values.csv").read_bytes() == before
    assert (dst / "values.csv").exists()


def test_train_eval_pipeline_and_determinism(tmp_path):
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    args = ["train", "--seed", 3] + FAST
    assert run(args + ["--out", out1]) == EXIT_OK
    assert run(args + ["--out", out2]) == EXIT_OK
    m1 = (out1 / "metrics.json").read_bytes()
    m2 = (out2 / "metrics.json").read_bytes()
    assert m1 == m2                      # byte-identical rerun
    assert (out1 / "checkpoint.json").exists()
    assert (out1 / "history.csv").exists()
    assert (out1 / "loss_curves.png").exists()
    assert (out1 / "timing.json").exists()
    # eval reuses the checkpoint
    out3 = tmp_path / "ev"
    assert run(["eval", "--seed", 3, "--out", out3,
                f"checkpoint={out1/'checkpoint.json'}"] + FAST) == EXIT_OK
    ev = json.loads((out3 / "metrics.json").read_text())
    assert "accuracy" in ev["metrics"]


def test_eval_requires_checkpoint(tmp_path):
    assert run(["eval", "--out", tmp_path] + FAST) == EXIT_VALIDATION


def test_convergence_command(tmp_path):
    assert run(["convergence", "--out", tmp_path, "--seed", 1]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert 0.3 < rep["slopes"]["euler"] < 0.7
    assert 0.75 < rep["slopes"]["milstein"] < 1.25
    assert (tmp_path / "convergence.png").exists()
    assert (tmp_path / "convergence_euler.csv").exists()


def test_gradcheck_command(tmp_path):
    assert run(["gradcheck", "--out", tmp_path]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["max_rel_error"] < 1e-4


def test_robustness_command(tmp_path):
    assert run(["robustness", "--out", tmp_path, "--seed", 2,
                "n_samples=24", "length=10", "rho=0.1", "depths=[1,2]",
                "n_exp_seeds=1"]) == EXIT_OK
    assert (tmp_path / "robustness.csv").exists()
    assert (tmp_path / "robustness.png").exists()
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["curves"]) == 3       # one per stable kind
