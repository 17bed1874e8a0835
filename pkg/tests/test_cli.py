import json
import subprocess
import sys

import numpy as np
import pytest

from modeltransfer.cli import main
from modeltransfer.envs import chain_mdp
from modeltransfer.likelihood import TransitionDataset
from modeltransfer.models import SourceSet, mix_tabular, save_model, sources_to_dict


@pytest.fixture
def chain_files(tmp_path):
    src = SourceSet(tuple(chain_mdp(5, s, 0.95) for s in (0.01, 0.2, 0.5)))
    (tmp_path / "sources.json").write_text(json.dumps(sources_to_dict(src)))
    save_model(mix_tabular(src, [0.2, 0.3, 0.5]), tmp_path / "inside.json")
    save_model(chain_mdp(5, 0.9, 0.95), tmp_path / "outside.json")
    return tmp_path


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_tree(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("T: 15\nn_tasks: 2\nalgorithm: psrl\n")
    code, out, _ = run_cli(capsys, "run", "--config", str(cfg), "--seed", "3", "--workers", "1",
                           "--out", str(tmp_path / "o"))
    assert code == 0 and "2 run log" in out
    assert len(list((tmp_path / "o" / "logs").glob("*.jsonl"))) == 2
    assert (tmp_path / "o" / "metrics.csv").exists()
    assert "master_seed: 3" in (tmp_path / "o" / "config.yaml").read_text()


def test_run_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("algorithm: sarsa\n")
    code, _, err = run_cli(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2 and "algorithm" in err
    code, _, err = run_cli(capsys, "run", "--config", str(tmp_path / "missing.yaml"))
    assert code == 2


def test_bounds_from_numbers_and_log(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "bounds", "--eps-estim", "0.1", "--eps-realise", "0", "--gamma", "0.9")
    assert code == 0 and json.loads(out)["performance_gap_bound"] == pytest.approx(30.0)
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("T: 20\nn_tasks: 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    log = next((tmp_path / "o" / "logs").glob("*.jsonl"))
    code, out, _ = run_cli(capsys, "bounds", "--log", str(log))
    d = json.loads(out)
    assert code == 0 and d["weissman_bound"] > 0 and "performance_gap_bound" in d
    code, _, err = run_cli(capsys, "bounds")
    assert code == 2 and "eps" in err


def test_gap(chain_files, capsys):
    code, out, _ = run_cli(capsys, "gap", "--sources", str(chain_files / "sources.json"),
                           "--target", str(chain_files / "inside.json"))
    d = json.loads(out)
    assert code == 0 and d["realisable"] and d["gap"] < 1e-6
    code, out, _ = run_cli(capsys, "gap", "--sources", str(chain_files / "sources.json"),
                           "--target", str(chain_files / "outside.json"))
    d = json.loads(out)
    # slip 0.9 against the nearest hull member slip 0.5: 10 cells with 2 * 0.4 each
    assert not d["realisable"] and d["gap"] == pytest.approx(8.0, abs=1e-6)
    np.testing.assert_allclose(d["weights"], [0, 0, 1], atol=1e-6)


def test_validate(chain_files, capsys):
    good_cfg = chain_files / "good.yaml"
    good_cfg.write_text("T: 5\n")
    bad_cfg = chain_files / "bad.yaml"
    bad_cfg.write_text("n_tasks: 0\n")
    bad_model = chain_files / "bad.json"
    bad_model.write_text(json.dumps({"kind": "tabular", "transitions": [[[0.5, 0.6]], [[1, 0]]],
                                     "rewards": [[0], [0]], "discount": 0.9}))
    data = TransitionDataset()
    data.append(0, 1, 2, 0.5)
    data.to_jsonl(chain_files / "d.jsonl")
    code, out, _ = run_cli(capsys, "validate", str(good_cfg), str(chain_files / "inside.json"),
                           str(chain_files / "sources.json"), str(chain_files / "d.jsonl"))
    assert code == 0 and out.count("ok") == 4
    code, out, _ = run_cli(capsys, "validate", str(bad_cfg), str(bad_model))
    assert code == 1 and out.count("INVALID") == 2 and "n_tasks" in out


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "modeltransfer.cli", "bounds", "--eps-estim", "0",
                          "--eps-realise", "0", "--gamma", "0.5"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["performance_gap_bound"] == 0.0
    res = subprocess.run([sys.executable, "-m", "modeltransfer.cli", "bounds", "--eps-estim", "0",
                          "--eps-realise", "0", "--gamma", "1.5"], capture_output=True, text=True)
    assert res.returncode == 2 and "gamma" in res.stderr
