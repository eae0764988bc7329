import json
import subprocess
import sys

import numpy as np
import pytest

from ovacnn.cli import main
from ovacnn.data import load_csv, write_idx

from synthetic import blocks


@pytest.fixture(scope="module")
def idx_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_idx(blocks(120, seed=21), d / "img.idx", d / "lab.idx")
    return d / "img.idx", d / "lab.idx"


def dataset_flags(idx_files):
    return ["--dataset", "idx", "--images", str(idx_files[0]), "--labels", str(idx_files[1])]


SPLIT = ["--train-size", "60", "--val-size", "30", "--test-size", "30", "--seed", "4"]


def test_train_then_eval(tmp_path, idx_files, capsys):
    out = tmp_path / "run"
    code = main(["train", *dataset_flags(idx_files), *SPLIT, "--model", "mcnn", "--lr", "0.01",
                 "--batch", "30", "--max-epochs", "1", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())[0]
    assert report["config"]["train"]["batch_size"] == 30
    assert report["config"]["split"]["seed"] == 4
    capsys.readouterr()
    code = main(["eval", str(out / "model.ovanet"), *dataset_flags(idx_files), *SPLIT,
                 "--out", str(tmp_path / "ev")])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert result["accuracy"] == report["accuracy"]
    assert result["n_samples"] == 30


def test_train_ensemble_and_eval_directory(tmp_path, idx_files, capsys):
    out = tmp_path / "ens"
    assert main(["train", *dataset_flags(idx_files), *SPLIT, "--model", "bccnn_modified_ensemble",
                 "--lr", "0.005", "--batch", "30", "--max-epochs", "1", "--jobs", "2",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())[0]
    capsys.readouterr()
    assert main(["eval", str(out / "ensemble"), *dataset_flags(idx_files), *SPLIT]) == 0
    assert json.loads(capsys.readouterr().out)["accuracy"] == report["accuracy"]


def test_config_file_with_flag_override(tmp_path, idx_files):
    cfg = {
        "dataset": {"kind": "idx", "images": str(idx_files[0]), "labels": str(idx_files[1])},
        "split": {"train_size": 60, "val_size": 30, "test_size": 30, "seed": 1},
        "model": "mcnn",
        "train": {"max_epochs": 1, "batch_size": 30, "learn_rate": 0.01},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--lr", "0.02", "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())[0]
    assert report["learn_rate"] == 0.02
    assert report["config"]["split"]["seed"] == 1


def test_usage_errors(idx_files, capsys):
    assert main(["train", *dataset_flags(idx_files), "--train-size", "10"]) == 2
    assert "required" in capsys.readouterr().err
    assert main(["train", *dataset_flags(idx_files), *SPLIT, "--max-epochs", "0"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--model", "nonsense"])
    assert info.value.code == 2


def test_missing_file_is_failure(tmp_path, capsys):
    code = main(["eval", str(tmp_path / "none.ovanet"), "--dataset", "csv", "--csv", str(tmp_path / "x.csv")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_convert_usps(tmp_path):
    h5py = pytest.importorskip("h5py")
    src = tmp_path / "usps.h5"
    rng = np.random.default_rng(0)
    with h5py.File(src, "w") as fh:
        for g, n in (("train", 4), ("test", 2)):
            grp = fh.create_group(g)
            grp["data"] = rng.uniform(size=(n, 256))
            grp["target"] = np.arange(n)
    assert main(["convert-usps", str(src), str(tmp_path / "u.csv")]) == 0
    assert len(load_csv(tmp_path / "u.csv")) == 6


def test_suite_command(tmp_path, idx_files, capsys):
    doc = {
        "defaults": {
            "dataset": {"kind": "idx", "images": str(idx_files[0]), "labels": str(idx_files[1])},
            "split": {"train_size": 60, "val_size": 30, "test_size": 30},
            "train": {"max_epochs": 1, "batch_size": 30},
        },
        "experiments": [
            {"name": "a", "table": "Table 1", "model": "mcnn"},
            {"name": "b", "table": "Table 1", "model": "mcnn", "dataset": {"images": "/no/such/file"}},
        ],
    }
    path = tmp_path / "s.suite"
    path.write_text(json.dumps(doc))
    assert main(["suite", str(path)]) == 1
    captured = capsys.readouterr()
    assert "### Table 1" in captured.out and "FAILED b" in captured.err
    doc["experiments"].pop()
    path.write_text(json.dumps(doc))
    assert main(["suite", str(path), "--out", str(tmp_path / "so")]) == 0
    assert (tmp_path / "so" / "table.csv").exists()


def test_gradcheck_command_small(tmp_path, capsys):
    assert main(["gradcheck", "--sizes", "8", "--out", str(tmp_path / "g.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(l.startswith("PASS") for l in lines)
    assert all(r["passed"] for r in json.loads((tmp_path / "g.json").read_text()))


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ovacnn.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "suite", "eval", "convert-usps", "gradcheck"):
        assert cmd in proc.stdout
