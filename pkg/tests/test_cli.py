import json

import numpy as np
import pytest

from ttfs_vlsi.cli import main
from ttfs_vlsi.dataio import load_model, read_csv, toy_dataset
from ttfs_vlsi.trainer import evaluate

TOY = """
[run]
seed = 1
[data]
dataset = toy
[model]
hidden = 8
classes = 2
[train]
epochs = 40
batch_size = 16
learning_rate = 0.01
jitter_sigma = 0.0
[grid]
mode = cartesian
[sweep]
grid = 0.25 0.5 1 2
floor = 0.5
"""


def write_config(tmp_path, text=TOY, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert main(["train", "--config", cfg, "--out-dir", str(tmp / "out")]) == 0
    return tmp, cfg, tmp / "out" / "model.json"


def test_train_writes_archive_and_curve(trained):
    tmp, _, model_path = trained
    archive = load_model(model_path)
    assert archive.provenance["seed"] == 1
    assert archive.provenance["config"]["train"]["epochs"] == "40"
    rows = read_csv(tmp / "out" / "train_history.csv")
    losses = [float(r["train_loss"]) for r in rows]
    assert len(losses) == 40
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_train_is_reproducible(trained, tmp_path):
    tmp, cfg, model_path = trained
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "model.json").read_bytes() == model_path.read_bytes()
    assert (tmp_path / "train_history.csv").read_bytes() == (tmp / "out" / "train_history.csv").read_bytes()


def test_seed_flag_overrides_config(trained, tmp_path):
    _, cfg, model_path = trained
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path), "--seed", "2"]) == 0
    assert load_model(tmp_path / "model.json").provenance["seed"] == 2
    assert (tmp_path / "model.json").read_bytes() != model_path.read_bytes()


def test_single_cell_eval_equals_baseline(trained, tmp_path):
    _, cfg, model_path = trained
    assert main(["eval", "--config", cfg, "--out-dir", str(tmp_path), "--model", str(model_path)]) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert len(rows) == 1
    baseline = evaluate(load_model(model_path).model, toy_dataset())
    assert float(rows[0]["accuracy"]) == baseline.accuracy
    assert float(rows[0]["mean_earliest_output_time"]) == baseline.mean_earliest_output_time
    header = (tmp_path / "eval.csv").read_text().splitlines()[0]
    meta = json.loads(header[2:])
    assert meta["seed"] == 1 and "grid" in meta["config"]


def test_eval_grid_rows(trained, tmp_path):
    tmp, _, model_path = trained
    cfg = write_config(
        tmp_path,
        TOY.replace("mode = cartesian", "mode = cartesian\nt_clock_model = none 0.5\nv_min = none -1\nclamp = all hidden"),
    )
    assert main(["eval", "--config", cfg, "--out-dir", str(tmp_path), "--model", str(model_path), "--workers", "2"]) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert [r["cell"] for r in rows] == [str(k) for k in range(8)]
    assert {r["clamp"] for r in rows} == {"none", "all", "hidden"}


def test_sweep_outputs(trained, tmp_path, capsys):
    _, cfg, model_path = trained
    assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path), "--model", str(model_path)]) == 0
    op = json.loads((tmp_path / "operating_point.json").read_text())
    rows = read_csv(tmp_path / "sweep.csv")
    assert list(rows[0]) == [
        "t_model_ms", "w_min", "levels", "accuracy", "mean_spike_time_model_ms", "mean_spike_time_circuit_us", "no_spike_rate",
    ]
    feasible = [float(r["t_model_ms"]) for r in rows if float(r["accuracy"]) >= 0.5]
    assert op["t_model_ms"] == max(feasible)
    assert {"t_model_ms", "accuracy", "floor"} <= set(op)
    assert "circuit parameters" in capsys.readouterr().out


def test_sweep_infeasible_prints_best(trained, tmp_path, capsys):
    _, _, model_path = trained
    cfg = write_config(tmp_path, TOY.replace("floor = 0.5", "floor = 1.01"))
    assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path), "--model", str(model_path)]) == 2
    assert "best" in capsys.readouterr().err


def test_sweep_empty_grid_is_usage_error(trained, tmp_path):
    _, _, model_path = trained
    cfg = write_config(tmp_path, TOY.replace("grid = 0.25 0.5 1 2", "grid ="))
    assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path), "--model", str(model_path)]) == 1


def test_export_traces(trained, tmp_path):
    _, cfg, model_path = trained
    args = ["export-traces", "--config", cfg, "--out-dir", str(tmp_path), "--model", str(model_path)]
    assert main(args + ["--index", "3", "--stats-samples", "16"]) == 0
    assert read_csv(tmp_path / "traces.csv")
    assert len(read_csv(tmp_path / "potential_stats.csv")) == 16


def test_missing_dataset_without_network(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TTFS_VLSI_CACHE", str(tmp_path / "cache"))
    cfg = write_config(tmp_path, "[data]\ndataset = mnist\nmirror = http://127.0.0.1:9/\n")
    assert main(["fetch-data", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1


def test_usage_errors(tmp_path):
    assert main([]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 1
    cfg = write_config(tmp_path, TOY.replace("epochs = 40", "epochz = 40"))
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path)]) == 1
    assert main(["eval", "--model", str(tmp_path / "none.json"), "--out-dir", str(tmp_path)]) == 1


def test_help_exits_cleanly():
    assert main(["--help"]) == 0
