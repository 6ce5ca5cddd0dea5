import csv
import subprocess
import sys

import numpy as np
import pytest

from trendgcn.cli import main

TINY = ["--set", "hidden=8", "--set", "d_e=2", "--set", "horizon=4", "--set", "batch_size=32",
        "--set", "max_batches=2", "--epochs", "1"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "synth.stts"
    assert main(["synth", "--out", str(data), "--nodes", "5", "--steps", "400", "--seed", "1"]) == 0
    assert main(["train", "--data", str(data), "--out", str(root / "run"), *TINY]) == 0
    return root, data


def test_train_writes_checkpoint_and_loss_log(workspace):
    root, _ = workspace
    assert (root / "run" / "model.ckpt").exists()
    with open(root / "run" / "loss_log.csv") as fh:
        assert next(csv.reader(fh))[0] == "step"


def test_eval_writes_one_row_per_horizon_plus_average(workspace, tmp_path):
    root, data = workspace
    out = tmp_path / "m.csv"
    # horizon 4 here: 4 horizon rows plus the average
    assert main(["eval", "--checkpoint", str(root / "run" / "model.ckpt"), "--data", str(data),
                 "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "horizon,MAE,RMSE,MAPE" and len(rows) == 1 + 4 + 1


def test_export_graphs_default_steps(workspace, tmp_path):
    root, _ = workspace
    assert main(["export-graphs", "--checkpoint", str(root / "run" / "model.ckpt"), "--out", str(tmp_path)]) == 0
    csvs = sorted(tmp_path.glob("*.csv"))
    assert len(csvs) == 6 and len(list(tmp_path.glob("*.pgm"))) == 6
    for p in csvs:
        assert np.allclose(np.loadtxt(p, delimiter=",").sum(axis=1), 1.0, atol=1e-6)


def test_noise_with_zero_sigma(workspace, tmp_path, capsys):
    _, data = workspace
    out = tmp_path / "noise.csv"
    assert main(["noise", "--data", str(data), "--sigma", "0", "--out", str(out), *TINY]) == 0
    assert "+0.00%/+0.00%" in capsys.readouterr().out
    assert out.read_text().splitlines()[0] == "row,MAE/RMSE"


def test_ablate_subset(workspace, tmp_path):
    _, data = workspace
    out = tmp_path / "abl.csv"
    assert main(["ablate", "--data", str(data), "--only", "static+none", "--only", "variant-C",
                 "--out", str(out), *TINY]) == 0
    with open(out) as fh:
        names = [r["name"] for r in csv.DictReader(fh)]
    assert names == ["static+none", "variant-C"]


def test_gradcheck_primitives(capsys):
    assert main(["gradcheck", "--primitives-only"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_errors_give_nonzero_exit(workspace, tmp_path, capsys):
    root, data = workspace
    bogus = tmp_path / "bogus.stts"
    bogus.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK")
    assert main(["train", "--data", str(bogus), "--out", str(tmp_path / "r")]) != 0
    assert main(["eval", "--checkpoint", str(root / "run" / "model.ckpt"), "--data", str(tmp_path / "none.stts")]) != 0
    assert main(["train", "--data", str(data), "--set", "nonsense=1"]) != 0
    assert "error:" in capsys.readouterr().err


def test_console_entry_point_with_thread_cap(tmp_path):
    env = {"TGCN_THREADS": "1", "PATH": "/usr/bin:/bin"}
    out = tmp_path / "s.stts"
    proc = subprocess.run([sys.executable, "-m", "trendgcn.cli", "synth", "--out", str(out), "--nodes", "3",
                           "--steps", "50"], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
