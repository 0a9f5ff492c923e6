"""Command-line surface: artifacts, exit codes, environment override."""

import numpy as np
import pytest

from udlflow import io as model_io
from udlflow.classifiers import ReluClassifier
from udlflow.cli import main
from udlflow.flows import build_flow


@pytest.fixture()
def boundary_classifier(tmp_path):
    clf = ReluClassifier.from_arrays(
        [np.array([[1.0, -1.0], [0.0, 0.0]])], [np.array([0.0, 0.0])])
    path = tmp_path / "clf.json"
    model_io.save(clf, path)
    return str(path)


@pytest.fixture()
def flow_file(tmp_path):
    flow = build_flow((2,), n_blocks=2, base_kind="gamma", seed=0)
    flow.perturb(np.random.default_rng(1), scale=0.3)
    path = tmp_path / "flow.json"
    model_io.save(flow, path)
    return str(path)


def test_synth_data(tmp_path, capsys):
    assert main(["synth-data", "--name", "rings", "--n", "50",
                 "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "rings.csv").exists()
    assert (tmp_path / "rings-labels.csv").exists()
    assert "wrote" in capsys.readouterr().out


def test_train_writes_model_and_history(tmp_path):
    rc = main(["train", "--data", "synth:two-moons", "--blocks", "2",
               "--epochs", "2", "--batch", "512", "--lr", "1e-3",
               "--patience", "3", "--out-dir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "model.json").exists()
    history = (tmp_path / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_nll,val_nll,log_det"
    assert len(history) == 3


def test_sample_logprob_validate(tmp_path, flow_file):
    assert main(["sample", "--model", flow_file, "--n", "200",
                 "--out-dir", str(tmp_path)]) == 0
    samples = tmp_path / "samples.csv"
    assert samples.exists()
    assert main(["logprob", "--model", flow_file,
                 "--data", f"csv:{samples}", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "logprob.csv").exists()
    assert main(["validate", "--model", flow_file,
                 "--data", f"csv:{samples}", "--permutations", "20",
                 "--out-dir", str(tmp_path)]) == 0
    for artifact in ("validation.txt", "pp.csv", "pp.svg"):
        assert (tmp_path / artifact).exists()
    assert "verdict=" in (tmp_path / "validation.txt").read_text()
    assert "<svg" in (tmp_path / "pp.svg").read_text()


def test_verify_exit_codes(tmp_path, boundary_classifier, capsys):
    rc = main(["verify", "--classifier", boundary_classifier, "--mode",
               "local", "--center", "0.05,0", "--eps", "0.2",
               "--out-dir", str(tmp_path)])
    assert rc == 1  # boundary crosses the box: falsified
    assert "falsified" in capsys.readouterr().out
    rc = main(["verify", "--classifier", boundary_classifier, "--mode",
               "local", "--center", "1.0,0", "--eps", "0.2",
               "--out-dir", str(tmp_path)])
    assert rc == 0


def test_verify_global_and_export(tmp_path, flow_file, boundary_classifier):
    rc = main(["verify", "--classifier", boundary_classifier, "--model",
               flow_file, "--mode", "global", "--eps", "0.001",
               "--box-halfwidth", "0.02", "--out-dir", str(tmp_path)])
    assert rc in (0, 1)
    rc = main(["export", "--classifier", boundary_classifier, "--model",
               flow_file, "--mode", "global", "--q", "0.5", "--eps", "0.01",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "property.txt").exists()
    assert (tmp_path / "exported-model.json").exists()


def test_bench_csv(tmp_path, flow_file, boundary_classifier):
    rc = main(["bench-robustness", "--model", flow_file, "--classifier",
               boundary_classifier, "--instances", "2", "--budget", "2000",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == "mode,epsilon,verdict,seconds"
    assert len(lines) == 7


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        main(["verify", "--no-such-flag"])
    assert err.value.code == 2


def test_runtime_error_exit_code(tmp_path, capsys):
    rc = main(["sample", "--model", str(tmp_path / "missing.json"),
               "--out-dir", str(tmp_path)])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_out_dir_env_override(tmp_path, monkeypatch):
    override = tmp_path / "env-dir"
    monkeypatch.setenv("UDLFLOW_OUT", str(override))
    assert main(["synth-data", "--name", "checkerboard", "--n", "20",
                 "--out-dir", str(tmp_path / "ignored")]) == 0
    assert (override / "checkerboard.csv").exists()
    assert not (tmp_path / "ignored").exists()
