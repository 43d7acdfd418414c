import json

import numpy as np
import pytest

from rtesnn import config as rc
from rtesnn.analysis import read_matrix
from rtesnn.cli import main
from rtesnn.errors import ConfigError

SMALL = ["--n-samples", "90", "--hidden", "8", "--epochs", "2", "--steps", "2",
         "--attacks", "pgd:0.05:3", "--matrix-samples", "16", "--surface-resolution", "3"]


def run(tmp_path, command, *extra):
    return main([command, "--out", str(tmp_path), *SMALL, *extra])


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = rc.resolve(p)
    assert cfg == rc.defaults()
    assert len(rc.dump(cfg).splitlines()) == len(rc.KEYS)


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ngamma = 1.5\nseed = 4\n")
    cfg = rc.resolve(p, {"gamma": "3.0"})
    assert cfg["gamma"] == 3.0 and cfg["seed"] == 4


def test_constraint_error_names_key(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("\nepsilon = -1\n")
    with pytest.raises(ConfigError, match="epsilon") as info:
        rc.resolve(p)
    assert "line 2" in str(info.value)


def test_unknown_key_and_type_error(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("seed = 1\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate.*line 2"):
        rc.resolve(p)
    with pytest.raises(ConfigError, match="steps"):
        rc.resolve(None, {"steps": "ten"})


def test_dump_round_trips(tmp_path):
    cfg = rc.resolve(None, {"gamma": "2.5", "hidden": "16,4", "cosine": "true"})
    p = tmp_path / "echo.cfg"
    p.write_text(rc.dump(cfg))
    assert rc.resolve(p) == cfg


def test_parse_attacks():
    items = rc.parse_attacks("fgsm:0.1, pgd:0.05:10, pgd:0.05:20:0.01")
    assert [i[1:] for i in items] == [("fgsm", 0.1, 1, 0.1), ("pgd", 0.05, 10, 0.0125), ("pgd", 0.05, 20, 0.01)]
    with pytest.raises(ValueError):
        rc.parse_attacks("cw:0.1")


def test_train_then_eval_round_trip(tmp_path, capsys):
    assert run(tmp_path, "train") == 0
    for name in ("model.json", "train_log.jsonl", "train_summary.json", "timing.json", "train.config.txt"):
        assert (tmp_path / name).is_file()
    final = json.loads((tmp_path / "train_log.jsonl").read_text().splitlines()[-1])
    assert run(tmp_path, "eval") == 0
    report = json.loads((tmp_path / "eval.json").read_text())
    assert abs(report["clean"] - final["clean_acc"]) <= 1e-9
    assert abs(report["worst_case"] - final["robust_acc"]) <= 1e-9
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["clean"] == report["clean"]


def test_transfer_matrix_zero_budget(tmp_path):
    assert run(tmp_path, "train") == 0
    assert run(tmp_path, "transfer-matrix", "--epsilon", "0") == 0
    values = read_matrix(tmp_path / "matrix.csv")
    assert values.shape == (4, 4) and np.all(values == 0)
    meta = json.loads((tmp_path / "matrix.meta.json").read_text())
    assert meta["epsilon"] == 0.0 and meta["metric"] == "kl"


def test_eval_worst_case_below_both(tmp_path):
    assert run(tmp_path, "train") == 0
    assert run(tmp_path, "eval", "--attacks", "pgd:0:5,pgd:0.05:10") == 0
    report = json.loads((tmp_path / "eval.json").read_text())
    assert len(report["robust"]) == 2
    assert report["worst_case"] <= min(report["robust"].values())


def test_loss_surface_outputs(tmp_path):
    assert run(tmp_path, "train") == 0
    assert run(tmp_path, "loss-surface", "--surface-extent", "0") == 0
    grid = read_matrix(tmp_path / "surface.csv")
    assert grid.shape == (3, 3) and np.all(grid == grid[0, 0])
    meta = json.loads((tmp_path / "surface.meta.json").read_text())
    assert meta["resolution"] == 3


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "eval") == 2
    assert "checkpoint not found" in capsys.readouterr().err
    assert run(tmp_path, "train", "--epsilon", "-1") == 1
    assert "epsilon" in capsys.readouterr().err
    assert run(tmp_path, "train", "--dataset", f"idx:{tmp_path}/missing") == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign here\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert run(tmp_path, "loss-surface", "--checkpoint", str(tmp_path / "nope.json")) == 2


def test_runtime_error_exit(tmp_path):
    # a checkpoint for a 3-feature model cannot score 2-feature blobs
    from rtesnn.snn import LifConfig, SnnModel, save_checkpoint

    save_checkpoint(SnnModel.init([3, 4, 2], LifConfig(), seed=0), tmp_path / "model.json")
    assert run(tmp_path, "eval") == 3


def test_idx_dataset_via_cli(tmp_path):
    from rtesnn.data import write_idx

    rng = np.random.default_rng(0)
    labels = np.repeat([0, 1], 20)
    images = np.where(labels[:, None, None] == 1, 200, 30) + rng.integers(0, 20, (40, 2, 2))
    write_idx(images, labels, tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte")
    out = tmp_path / "out"
    assert main(["train", "--out", str(out), "--dataset", f"idx:{tmp_path}", "--hidden", "8",
                 "--epochs", "1", "--steps", "1", "--attacks", "fgsm:0.05"]) == 0
    assert json.loads((out / "train_summary.json").read_text())["epochs"] == 1
