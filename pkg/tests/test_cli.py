import hashlib
import json

import numpy as np
import pytest

from gaitbo.bo import TrainConfig, read_log, train
from gaitbo.cli import main
from gaitbo.gp import load_model, save_model
from gaitbo.terrain import load_heightmap

from test_bo import synthetic_oracle


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "gpft.json"
    save_model(train(TrainConfig(seed=0, max_iterations=300), synthetic_oracle).gp, path)
    return path


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["predict"]) == 1
    assert main(["train", "--seed", "x"]) == 1


def test_train_writes_model_log_and_summary(tmp_path):
    out = tmp_path / "m.json"
    argv = ["train", "--scenario", "flat", "--seed", "7", "--max-iterations", "3", "-o", str(out)]
    assert main(argv) == 0
    data = json.loads(out.read_text())
    assert data["format_version"] == 1 and len(data["m"]) == 3
    log = read_log(tmp_path / "m_log.csv")
    assert [r["k"] for r in log] == [1, 2, 3]
    summary = json.loads((tmp_path / "m_summary.json").read_text())
    assert summary["converged"] is False and summary["seed"] == 7
    first = (tmp_path / "m_log.csv").read_bytes()
    assert main(argv) == 0
    assert (tmp_path / "m_log.csv").read_bytes() == first


def test_train_warm_start_requires_rough(tmp_path, model_file):
    out = tmp_path / "r.json"
    assert main(["train", "--warm-start", str(model_file), "-o", str(out)]) == 1
    assert not out.exists()
    assert main(["train", "--scenario", "rough", "--warm-start", str(tmp_path / "nope.json"),
                 "-o", str(out)]) == 2
    assert not out.exists()


def test_predict(tmp_path, model_file, capsys):
    before = digest(model_file)
    assert main(["predict", str(model_file), "--goal", "0.0"]) == 0
    out1 = capsys.readouterr().out
    assert main(["predict", str(model_file), "--goal", "0.0"]) == 0
    assert capsys.readouterr().out == out1
    lines = dict(l.split(" ", 1) for l in out1.strip().splitlines())
    assert lines["phases"] in {"1", "3", "5"} and set(lines["schedule"]) <= {"S", "F", "."}
    assert lines["action"].startswith("[")
    assert digest(model_file) == before
    assert main(["predict", str(model_file), "--goal", "1.2"]) == 1
    assert main(["predict", str(tmp_path / "missing.json"), "--goal", "0.5"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["predict", str(bad), "--goal", "0.5"]) == 1


def test_predict_with_terrain_file(tmp_path, model_file, capsys):
    terr = tmp_path / "t.txt"
    assert main(["terrain-gen", "--seed", "5", "-o", str(terr)]) == 0
    capsys.readouterr()
    assert main(["predict", str(model_file), "--goal", "0.8", "--terrain", str(terr)]) == 0
    assert "schedule" in capsys.readouterr().out


def test_transition_map(tmp_path, model_file):
    out = tmp_path / "map.csv"
    assert main(["transition-map", str(model_file), "--resolution", "0.001", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1002
    goals = [float(l.split(",")[0]) for l in lines[1:]]
    assert np.all(np.diff(goals) > 0)
    assert {int(l.split(",")[-2]) for l in lines[1:]} <= {1, 3, 5}
    assert main(["transition-map", str(model_file), "--resolution", "0", "-o", str(out)]) == 1


def test_terrain_gen(tmp_path):
    a, b, c = tmp_path / "a.txt", tmp_path / "b.txt", tmp_path / "c.txt"
    assert main(["terrain-gen", "--seed", "1", "-o", str(a)]) == 0
    assert main(["terrain-gen", "--seed", "1", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    hm = load_heightmap(a)
    assert np.count_nonzero(hm.z_samples) == 3 and np.max(np.abs(hm.z_samples)) <= 0.2
    assert main(["terrain-gen", "--flat", "-o", str(c)]) == 0
    assert not load_heightmap(c).z_samples.any()
    assert main(["terrain-gen", "-o", str(tmp_path / "no" / "dir.txt")]) == 2


def test_eval_errors_leave_no_output(tmp_path, model_file):
    out = tmp_path / "duel"
    assert main(["eval", str(tmp_path / "missing.json"), "--n", "2", "-o", str(out)]) == 2
    assert main(["eval", str(model_file), "--vs", str(tmp_path / "missing.json"), "-o", str(out)]) == 2
    assert main(["eval", str(model_file), "--n", "0", "-o", str(out)]) == 1
    assert list(tmp_path.iterdir()) == []


def test_config_errors(tmp_path):
    bad = tmp_path / "c.toml"
    bad.write_text("[bo]\nrho = 5.0\n")
    assert main(["terrain-gen", "--config", str(bad), "-o", str(tmp_path / "t.txt")]) == 1
    assert main(["terrain-gen", "--config", str(tmp_path / "none.toml")]) == 2


def test_eval_one_round(tmp_path, model_file):
    out = tmp_path / "duel"
    assert main(["eval", str(model_file), "--vs", "baseline", "--n", "1", "--seed", "3",
                 "-o", str(out)]) == 0
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["rounds"] == 1 and summary["player2"] == "baseline"
    assert len(out.with_suffix(".csv").read_text().splitlines()) == 2
