import json

import pytest

from blcs import cli
from blcs.errors import DegenerateDataset
from blcs.sim_engine import CSV_HEADER, read_csv


def test_train_reports_default_epochs(trained):
    assert trained.code == 0
    assert "epochs: 2000" in trained.stdout
    assert "held-out accuracy:" in trained.stdout
    assert "final loss:" in trained.stdout


def test_run_writes_three_files_and_is_byte_identical(trained, tmp_path):
    for name in ("a", "b"):
        code = cli.main(["run", "--model", str(trained.path), "--seed", "5", "--out", str(tmp_path / name)])
        assert code == 0
    for f in ("metrics.csv", "trace.jsonl", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = read_csv((tmp_path / "a" / "metrics.csv").read_text())
    assert len(rows) == 1 and rows[0]["variant"] == "BLCS"
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["scenario"]["seed"] == 5


def test_missing_topology_exits_2_naming_field(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"load": 10}))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "topology" in capsys.readouterr().err


def test_unreadable_config_exits_2(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
    assert "config" in capsys.readouterr().err


def test_runtime_error_exits_3(trained, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--model", str(trained.path), "--out", str(blocker / "sub")]) == 3


def test_one_point_sweep_gives_two_rows(trained, tmp_path):
    out = tmp_path / "sw"
    code = cli.main(["sweep", "--model", str(trained.path), "--values", "20", "--seeds", "1", "--out", str(out)])
    assert code == 0
    text = (out / "metrics.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert [r["variant"] for r in read_csv(text)] == ["BLCS", "baseline"]


def test_bad_sweep_values_exit_2(trained, tmp_path):
    assert cli.main(["sweep", "--model", str(trained.path), "--values", "30,20", "--out", str(tmp_path)]) == 2
    assert cli.main(["sweep", "--model", str(trained.path), "--values", "x", "--out", str(tmp_path)]) == 2


def test_retrain_same_seed_is_byte_identical(tmp_path, capsys):
    for name in ("m1.json", "m2.json"):
        assert cli.main(["train", "--epochs", "20", "--model", str(tmp_path / name)]) == 0
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    assert "epochs: 20" in capsys.readouterr().out


def test_ratio_zero_training_warns_degenerate(tmp_path):
    cfg = tmp_path / "r0.json"
    cfg.write_text(json.dumps({"topology": "default", "malicious_ratio": 0.0}))
    with pytest.warns(DegenerateDataset):
        code = cli.main(["train", str(cfg), "--epochs", "3", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "model.json").exists()
