import csv
import json
import xml.etree.ElementTree as ET

import pytest

from latentplan.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out-dir", str(root / "data"), "--n-train", "120", "--n-val", "12", "--seed", "3"]) == 0
    assert main(["fit", "--dataset", str(root / "data" / "train.jsonl"), "--out-dir", str(root / "codec")]) == 0
    assert main(["train", "--dataset", str(root / "data" / "train.jsonl"), "--val-dataset",
                 str(root / "data" / "val.jsonl"), "--codec", str(root / "codec" / "codec.json"),
                 "--out-dir", str(root / "run"), "--steps", "2", "--batch", "4", "--eval-interval", "1"]) == 0
    return root


def model_args(root):
    return ["--dataset", str(root / "data" / "val.jsonl"), "--codec", str(root / "codec" / "codec.json"),
            "--checkpoint", str(root / "run" / "model_best.json")]


def test_pipeline_outputs(workspace):
    assert (workspace / "codec" / "codec.json").exists()
    with (workspace / "codec" / "variance.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in rows] == list(range(1, 17))
    log = (workspace / "run" / "model_log.csv").read_text().splitlines()
    assert len(log) == 3


def test_config_echo(workspace):
    echo = json.loads((workspace / "data" / "gen-data.config.json").read_text())
    assert echo["command"] == "gen-data"
    assert echo["seed"] == 3
    assert echo["settings"]["n_train"] == 120 and echo["settings"]["n_val"] == 12


def test_eval_writes_csv_and_summary(workspace, tmp_path, capsys):
    rc = main(["eval", *model_args(workspace), "--out-dir", str(tmp_path), "--k", "3", "--ddim-steps", "4"])
    assert rc == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["model"]["K"] == 3 and summary["model"]["N"] == 4
    assert summary["model"]["n_scenarios"] == 12
    assert summary["goal_mode"] == "sparse"
    with (tmp_path / "scenarios.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 12
    assert "constant velocity" in capsys.readouterr().out


def test_config_overlay_flags_win(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 5, "ddim-steps": 3, "limit": 4, "seed": 9}))
    out = tmp_path / "out"
    assert main(["eval", *model_args(workspace), "--out-dir", str(out), "--config", str(cfg), "--k", "2"]) == 0
    settings = json.loads((out / "eval.config.json").read_text())["settings"]
    assert (settings["k"], settings["ddim_steps"], settings["limit"], settings["seed"]) == (2, 3, 4, 9)
    assert json.loads((out / "summary.json").read_text())["model"]["n_scenarios"] == 4


def test_sweep_and_ablate(workspace, tmp_path):
    args = model_args(workspace)
    assert main(["sweep", *args, "--out-dir", str(tmp_path), "--k", "2", "--steps", "2,4", "--limit", "3"]) == 0
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "N,min_ade,min_fde,miss_rate"
    rc = main(["ablate", *args, "--endpoint-checkpoint", str(workspace / "run" / "model_final.json"),
               "--out-dir", str(tmp_path), "--k", "2", "--ddim-steps", "2"])
    assert rc == EXIT_OK
    with (tmp_path / "ablation.csv").open() as fh:
        assert [r["goal_mode"] for r in csv.DictReader(fh)] == ["sparse_route", "endpoint", "no_goal"]


def test_sample_and_plots(workspace, tmp_path):
    args = model_args(workspace)
    assert main(["sample", *args, "--out-dir", str(tmp_path), "--k", "3", "--ddim-steps", "2", "--index", "1"]) == 0
    plans = json.loads((tmp_path / "plans.json").read_text())["plans"]
    assert len(plans) == 3 and len(plans[0]) == 80
    for kind in ("fan", "weights"):
        assert main(["plot", "--kind", kind, *args, "--out-dir", str(tmp_path), "--k", "3", "--ddim-steps", "2"]) == 0
        ET.parse(tmp_path / f"{kind}.svg")
    assert main(["plot", "--kind", "variance", "--variance-csv", str(workspace / "codec" / "variance.csv"),
                 "--out-dir", str(tmp_path)]) == 0
    assert 'id="k16-marker"' in (tmp_path / "variance.svg").read_text()


def test_missing_checkpoint_exit_code(workspace, tmp_path, capsys):
    missing = tmp_path / "nowhere" / "ckpt.json"
    args = model_args(workspace)[:4] + ["--checkpoint", str(missing)]
    assert main(["eval", *args, "--out-dir", str(tmp_path)]) == EXIT_DATA
    assert str(missing) in capsys.readouterr().err


def test_corrupt_dataset_exit_code(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["fit", "--dataset", str(bad), "--out-dir", str(tmp_path)]) == EXIT_DATA
    assert "bad.jsonl" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["eval", "--k", "3"],
    ["gen-data", "--out-dir", "x", "--n-train", "many"],
    ["train", "--goal", "waypoints"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_out_of_range_steps_are_usage_errors(workspace, tmp_path):
    args = model_args(workspace)
    assert main(["eval", *args, "--out-dir", str(tmp_path), "--ddim-steps", "501"]) == EXIT_USAGE
    assert main(["eval", *args, "--out-dir", str(tmp_path), "--k", "0"]) == EXIT_USAGE
    assert main(["sweep", *args, "--out-dir", str(tmp_path), "--steps", "10,x"]) == EXIT_USAGE


def test_bad_config_file(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"temperature": 2}))
    assert main(["eval", *model_args(workspace), "--out-dir", str(tmp_path), "--config", str(cfg)]) == EXIT_USAGE
    assert main(["eval", *model_args(workspace), "--out-dir", str(tmp_path), "--config",
                 str(tmp_path / "none.json")]) == EXIT_USAGE


def test_sweep_default_grid(workspace, tmp_path):
    assert main(["sweep", *model_args(workspace), "--out-dir", str(tmp_path), "--k", "1", "--limit", "1"]) == 0
    with (tmp_path / "sweep.csv").open() as fh:
        assert [int(r["N"]) for r in csv.DictReader(fh)] == [10, 20, 50, 100, 200]
