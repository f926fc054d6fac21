import json

import pytest

from hostcp.cli import main
from hostcp.dataset import load_csv


def write(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_gen_data(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--n", "20", "--d", "3", "--seed", "1", "--out", str(out)]) == 0
    ds = load_csv(out)
    assert (ds.n, ds.d) == (20, 3)


def test_unknown_key_exits_2(tmp_path):
    assert main(["addition", "--config", write(tmp_path, {"experiment": "addition", "x": 1})]) == 2


def test_missing_config_exits_2(tmp_path):
    assert main(["addition", "--config", str(tmp_path / "none.json")]) == 2


def test_kind_mismatch_exits_2(tmp_path):
    assert main(["removal", "--config", write(tmp_path, {"experiment": "addition"})]) == 2


def test_bad_usage_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["addition"])
    assert exc.value.code == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    from hostcp import cli
    from hostcp.exceptions import ConvergenceError

    def boom(config):
        raise ConvergenceError("no progress", 1.0, 5)

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert main(["addition", "--config", write(tmp_path, {"experiment": "addition"})]) == 3


def test_run_with_seed_override(tmp_path):
    cfg = {"experiment": "ndcg", "dataset": {"n": 150, "d": 3}, "seeds": [0, 1],
           "fractions": [0.1], "trainer": {"epochs": 1, "k": 6}}
    out = tmp_path / "out"
    assert main(["ndcg", "--config", write(tmp_path, cfg), "--out", str(out), "--seed", "4"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [r["seed"] for r in report["rows"]] == [4]
