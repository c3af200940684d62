import argparse
import csv
import json

import numpy as np
import pytest

from sscdl import cli
from sscdl.dataset import split_sizes, write_quadruples
from sscdl.diagnostics import check_op_gradients
from sscdl.diffcore import Tensor, ops
from sscdl.diffcore.tensor import make_node
from sscdl.toy import make_toy_ukg

TINY = ["--set", "dim=6", "--set", "batch_size=64", "--set", "k_neg=3", "--set", "t_max=4", "--set", "t_pcdg=2",
        "--set", "t_cdlrl=3", "--set", "eval_every=2", "--set", "alpha=0.01", "--set", "dtype=float64"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    quads, vocab = make_toy_ukg(30, 3, 250, seed=5)
    write_quadruples(d / "data.tsv", quads, vocab)
    return d


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data-dir", str(data_dir), "--out-dir", str(out)] + TINY) == 0
    return out


def test_train_outputs(trained):
    for name in ("config.txt", "metrics.jsonl", "metrics.csv", "best.ckpt", "final.ckpt", "manifest.json"):
        assert (trained / name).exists(), name
    m = json.loads((trained / "manifest.json").read_text())
    assert m["command"] == "train" and m["seed"] == 0 and len(m["config_hash"]) == 64
    assert m["ablation"] == {"mode": "full", "generator": "enabled", "targets": "gaussian-distribution"}
    assert set(m["dataset_hashes"]) == {"data.tsv"}
    assert m["config"]["t_max"] == 4 and m["version"].startswith(cli.__version__)


def test_eval_reproduces_logged_metrics(trained, data_dir, tmp_path, capsys):
    last = json.loads((trained / "metrics.jsonl").read_text().splitlines()[-1])
    rc = cli.main(["eval", "--checkpoint", str(trained / "final.ckpt"), "--data-dir", str(data_dir),
                   "--out-dir", str(tmp_path), "--splits", "valid", "--low-confidence", "--rank-dump"])
    assert rc == 0
    rep = json.loads((tmp_path / "eval_report.json").read_text())["valid"]
    assert rep["mse"] == last["val_mse"] and rep["mae"] == last["val_mae"]
    assert rep["wmrr"] == last["val_wmrr"] and rep["hits@1"] == last["val_hits1"]
    assert "valid/low-confidence" in json.loads(capsys.readouterr().out)
    assert (tmp_path / "ranks_valid.csv").exists() and (tmp_path / "eval_report.csv").exists()


def test_missing_data_is_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert cli.main(["train", "--data-dir", str(missing), "--out-dir", str(tmp_path / "o")] + TINY) == 2
    assert str(missing) in capsys.readouterr().err


def test_corrupt_checkpoint_is_exit_2(trained, data_dir, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    blob = bytearray((trained / "final.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    bad.write_bytes(bytes(blob))
    assert cli.main(["eval", "--checkpoint", str(bad), "--data-dir", str(data_dir)]) == 2
    assert "checksum" in capsys.readouterr().err


def test_vocab_mismatch_is_exit_2(trained, tmp_path):
    other = tmp_path / "other"
    other.mkdir()
    quads, vocab = make_toy_ukg(40, 3, 250, seed=9)
    write_quadruples(other / "data.tsv", quads, vocab)
    assert cli.main(["eval", "--checkpoint", str(trained / "final.ckpt"), "--data-dir", str(other)]) == 2


def test_usage_errors_are_exit_1(data_dir, tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["ablate", "--mode", "no_everything", "--data-dir", str(data_dir), "--out-dir", str(tmp_path)])
    assert e.value.code == 1
    base = ["sweep", "--data-dir", str(data_dir), "--out-dir", str(tmp_path), "--param", "sigma"]
    assert cli.main(base + ["--values", " , "]) == 1
    assert cli.main(base + ["--values", "0.1,-2"]) == 1  # invalid sigma rejected before training
    assert cli.main(["train", "--data-dir", str(data_dir), "--out-dir", str(tmp_path), "--set", "nokey=1"]) == 1
    assert cli.main(["train", "--data-dir", str(data_dir), "--out-dir", str(tmp_path), "--set", "t_max"]) == 1


@pytest.mark.parametrize("mode, generator, targets", [("no_mst", "disabled", "gaussian-distribution"),
                                                      ("no_cdl", "enabled", "one-hot")])
def test_ablate_manifest(data_dir, tmp_path, mode, generator, targets):
    assert cli.main(["ablate", "--mode", mode, "--data-dir", str(data_dir), "--out-dir", str(tmp_path)] + TINY) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["ablation"] == {"mode": mode, "generator": generator, "targets": targets}
    assert m["config"]["ablation"] == mode


def test_sweep_csv(data_dir, tmp_path):
    tiny = [a.replace("t_max=4", "t_max=2").replace("t_cdlrl=3", "t_cdlrl=2") for a in TINY]
    rc = cli.main(["sweep", "--data-dir", str(data_dir), "--out-dir", str(tmp_path), "--param", "w_p",
                   "--values", "0.1,0.3,0.5,0.7,0.9"] + tiny)
    assert rc == 0
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert rows[0] == ["value", "mae", "wmrr"] and [r[0] for r in rows[1:]] == ["0.1", "0.3", "0.5", "0.7", "0.9"]
    for r in rows[1:]:
        assert 0 <= float(r[1]) <= 1 and 0 < float(r[2]) <= 1
    assert (tmp_path / "w_p=0.5" / "manifest.json").exists()


def test_histogram(data_dir, tmp_path):
    out = tmp_path / "h.csv"
    assert cli.main(["histogram", "--data-dir", str(data_dir), "--out", str(out), "--bin-width", "0.25"]) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 5 and sum(int(r[-1]) for r in rows[1:]) == split_sizes(250)[0]


def _broken_exp(a):
    a = Tensor(a) if not isinstance(a, Tensor) else a
    return make_node(np.exp(a.data), (a,), lambda g: (g,))  # wrong: drops the exp factor


def test_check_names_broken_gradient(tmp_path, capsys):
    x = np.linspace(-1, 1, 6).reshape(2, 3)
    cases = {"good_square": ({"a": x}, lambda P: ops.sum(ops.square(P["a"]))),
             "broken_exp": ({"a": x}, lambda P: ops.sum(_broken_exp(P["a"])))}
    args = argparse.Namespace(out_dir=str(tmp_path))
    rc = cli.cmd_check(args, checks={"op gradients": lambda: check_op_gradients(cases)})
    out = capsys.readouterr().out
    assert rc == 3
    assert "broken_exp" in out and "good_square" not in out.split("failed:")[1]
    rep = json.loads((tmp_path / "check_report.json").read_text())
    assert rep["passed"] is False


@pytest.mark.slow
def test_check_command_passes(tmp_path, capsys):
    assert cli.main(["check", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "max relative gradient error" in out and "FAIL" not in out
