import json

import numpy as np
import pytest
from click.testing import CliRunner

from pannplast import dataio
from pannplast.cli import main

SMALL = """
[program]
amplitude_tension = 1.01
amplitude_compression = 0.99
cycles = 2
steps_per_branch = 10

[generator]
framework = "AF"

[training]
framework = "AF"
epochs = 2
lr = 0.01
init_perturbation = 0.2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "exp.toml").write_text(SMALL)
    runner = CliRunner()
    res = runner.invoke(main, ["generate", "--config", str(root / "exp.toml"),
                               "--out", str(root / "data")])
    assert res.exit_code == 0, res.output
    return root, runner


def test_generate_writes_artifacts(workspace):
    root, _ = workspace
    names = {p.name for p in (root / "data").iterdir()}
    assert names == {"series.csv", "manifest.json", "config.resolved.json"}
    assert len(dataio.read_series(root / "data" / "series.csv")) == 61


def test_generate_then_simulate_is_exact(workspace):
    root, runner = workspace
    m = dataio.DatasetManifest.load(root / "data" / "manifest.json")
    (root / "gen.json").write_text(json.dumps(m.generator))
    res = runner.invoke(main, ["simulate", "--config", str(root / "exp.toml"), "--params",
                               str(root / "gen.json"), "--out", str(root / "sim")])
    assert res.exit_code == 0, res.output
    a = dataio.read_series(root / "data" / "series.csv")
    b = dataio.read_series(root / "sim" / "series.csv")
    assert float(np.mean((a.sigma11 - b.sigma11) ** 2)) == 0.0


def test_resolved_config_reproduces(workspace):
    root, runner = workspace
    res = runner.invoke(main, ["generate", "--config", str(root / "data" / "config.resolved.json"),
                               "--out", str(root / "again")])
    assert res.exit_code == 0, res.output
    assert (root / "again" / "series.csv").read_bytes() == (root / "data" / "series.csv").read_bytes()


def test_train_stats_evaluate(workspace):
    root, runner = workspace
    res = runner.invoke(main, ["train", "--config", str(root / "exp.toml"), "--data",
                               str(root / "data"), "--framework", "AF", "--seeds", "2",
                               "--out", str(root / "run")])
    assert res.exit_code == 0, res.output
    doc = json.loads((root / "run" / "stats.json").read_text())
    assert {"lowest_loss", "mean_loss", "std_dev"} <= set(doc)
    assert (root / "run" / "loss_history.csv").read_text().startswith("seed,epoch,loss\n")
    assert (root / "run" / "config.resolved.json").exists()

    res = runner.invoke(main, ["stats", str(root / "run")])
    assert res.exit_code == 0, res.output
    again = json.loads(res.output)
    assert again["lowest_loss"] == doc["lowest_loss"] and again["n_seeds"] == 2

    res = runner.invoke(main, ["evaluate", "--params", str(root / "run" / "best_params.json"),
                               "--data", str(root / "data"), "--test-cycles", "3",
                               "--out", str(root / "eval")])
    assert res.exit_code == 0, res.output
    ev = json.loads((root / "eval" / "evaluation.json").read_text())
    assert len(ev["per_cycle_mse"]) == 3 and ev["heldout_mse"] >= 0.0


def test_check_fresh_4nn_passes(workspace):
    root, runner = workspace
    res = runner.invoke(main, ["check", "--config", str(root / "exp.toml"), "--framework", "4NN",
                               "--cycles", "1", "--out", str(root / "check")])
    assert res.exit_code == 0, res.output
    report = json.loads((root / "check" / "check.json").read_text())
    assert report["pass"] and "gradient" in report["checks"]


def test_unknown_flag_rejected(workspace):
    _, runner = workspace
    res = runner.invoke(main, ["generate", "--out", "x", "--bogus", "1"])
    assert res.exit_code == 2


def test_unknown_config_key_rejected(workspace):
    root, runner = workspace
    (root / "bad.json").write_text(json.dumps({"program": {"cycles": 1, "wiggle": 3}}))
    res = runner.invoke(main, ["generate", "--config", str(root / "bad.json"),
                               "--out", str(root / "bad")])
    assert res.exit_code == 2
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "InvalidParameter"


def test_invalid_program_reports_json(workspace):
    root, runner = workspace
    (root / "amp.json").write_text(json.dumps({"program": {"amplitude_tension": 0.9}}))
    res = runner.invoke(main, ["generate", "--config", str(root / "amp.json"),
                               "--out", str(root / "amp")])
    assert res.exit_code == 2
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "InvalidAmplitude"
