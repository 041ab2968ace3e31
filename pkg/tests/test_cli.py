"""
Tests for the command-line runner.
"""

import json

import pytest

import cli


@pytest.mark.unit
def test_train_event_collects_model_options():
    args = cli.build_parser().parse_args(
        ["--seed", "4", "train", "--data", "obs.csv", "--model", "gmm", "--k", "3"])
    event = cli.build_event(args)
    assert event["seed"] == 4
    assert event["data_path"] == "obs.csv"
    assert event["model"] == {"kind": "gmm", "k": 3}

    args = cli.build_parser().parse_args(
        ["train", "--data", "obs.csv", "--epochs", "0", "--optimizer", "sgd-momentum"])
    assert cli.build_event(args)["model"] == {"kind": "flow", "epochs": 0,
                                              "optimizer": "sgd-momentum"}


@pytest.mark.unit
def test_retrain_flag_is_folded_into_the_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"testbed": "example1"}), encoding="utf-8")
    args = cli.build_parser().parse_args(["--config", str(path), "experiment", "--retrain-per-rep"])
    event = cli.build_event(args)
    assert event["config"] == {"testbed": "example1", "retrain_per_rep": True}


@pytest.mark.unit
def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["launch"])


@pytest.mark.unit
def test_main_prints_the_body_and_returns_the_exit_code(out_dir, capsys):
    code = cli.main(["--seed", "3", "--out", str(out_dir), "generate", "--testbed", "example1",
                     "--n", "5"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["rows"] == 5

    scheme = json.dumps({"kind": "cartesian", "d": 1, "m0": 2, "edges": [["-inf", 0.5, "inf"]]})
    code = cli.main(["--out", str(out_dir), "validate-strata", "--scheme", scheme,
                     "--n-samples", "5000"])
    assert code == 2
