import csv
import json

import pytest
import yaml

from fairdd.cli import main
from fairdd.config import ConfigError, load_config, parse_config
from fairdd.data import ingest_csv

TINY = {
    "run_id": "t",
    "dataset": {"samples_per_cell": 30, "seed": 2},
    "train": {"epochs_per_stage": 1, "batch_size": 16, "hidden_dims": [8], "projector_dim": 8,
              "buffer_capacity": 20},
    "weights": {"alpha": 0.6},
}


@pytest.fixture
def env(tmp_path, monkeypatch):
    monkeypatch.setenv("FAIRDD_OUTPUT_ROOT", str(tmp_path / "out"))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(TINY), encoding="utf-8")
    return tmp_path, cfg


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# config ------------------------------------------------------------------


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config({"train": {"epochs": 3}})
    with pytest.raises(ConfigError, match="top-level"):
        parse_config({"trainer": {}})
    with pytest.raises(ConfigError, match="fate"):
        parse_config({"fate": {"lam": 1.0}})


def test_type_and_value_errors():
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config({"train": {"batch_size": "32"}})
    with pytest.raises(ConfigError):
        parse_config({"mixup": {"enabled": 1}})
    with pytest.raises(ConfigError, match="weights"):
        parse_config({"weights": {"tau": 0}})
    with pytest.raises(ConfigError, match="dataset"):
        parse_config({"dataset": {"rho": 1.5}})


def test_defaults():
    cfg = parse_config({})
    w = cfg.train.weights
    assert (w.alpha, w.beta, w.tau, w.T) == (1.0, 1.0, 0.07, 2.0)
    assert cfg.train.mixup.theta == 0.8 and cfg.train.buffer_capacity == 300
    assert cfg.fate_lambda == 1.0 and cfg.train.stage_order == [1, 0]


def test_snapshot_round_trip(tmp_path):
    cfg = parse_config(TINY)
    assert parse_config(cfg.as_dict()).as_dict() == cfg.as_dict()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.as_dict()))
    assert load_config(p).as_dict() == cfg.as_dict()


def test_output_root_env_override(tmp_path, monkeypatch):
    cfg = parse_config({"output_dir": "elsewhere", "run_id": "x"})
    monkeypatch.delenv("FAIRDD_OUTPUT_ROOT", raising=False)
    assert str(cfg.run_root()) == "elsewhere/x"
    monkeypatch.setenv("FAIRDD_OUTPUT_ROOT", str(tmp_path))
    assert cfg.run_root() == tmp_path / "x"


def test_bad_config_exits_with_error_record(env, capsys):
    tmp, _ = env
    bad = tmp / "bad.yaml"
    bad.write_text("train: {nope: 1}\n")
    code, out, err = run(capsys, "train", "--config", bad)
    assert code == 2
    rec = json.loads(err)
    assert rec["status"] == "error" and rec["error"] == "ConfigError" and "nope" in rec["message"]


# commands ----------------------------------------------------------------


def test_generate_data(env, capsys):
    tmp, cfg = env
    code, out, _ = run(capsys, "generate-data", "--config", cfg)
    assert code == 0
    res = json.loads(out)
    train = ingest_csv(res["train"])
    assert train.feature_dim == 16 and set(train.a) == {0, 1}


def test_train_fate_pipeline(env, capsys):
    tmp, cfg = env
    assert run(capsys, "train", "--config", cfg, "--mode", "vanilla")[0] == 0
    assert run(capsys, "train", "--config", cfg, "--mode", "fairdd")[0] == 0
    runs = tmp / "out" / "t"
    for mode in ("vanilla", "fairdd"):
        d = runs / mode
        for f in ("config.json", "run.json", "epochs.jsonl", "predictions.csv", "metrics.json", "params.json"):
            assert (d / f).exists(), f
    assert (runs / "fairdd" / "buffer.csv").exists()
    code, out, _ = run(capsys, "fate", "--enhanced", runs / "fairdd", "--baseline", runs / "vanilla")
    assert code == 0
    fate = json.loads((runs / "fairdd" / "fate.json").read_text())
    assert set(fate["criteria"]) == {"EOpp0", "EOpp1", "EOdd"}
    assert (runs / "fairdd" / "fate.csv").exists() and (runs / "fairdd" / "fate.png").exists()

    # evaluate reproduces the stored report byte for byte
    stored = (runs / "fairdd" / "metrics.json").read_bytes()
    assert run(capsys, "evaluate", runs / "fairdd", "--out", tmp / "again.json")[0] == 0
    assert (tmp / "again.json").read_bytes() == stored

    code, out, _ = run(capsys, "report", runs / "vanilla", runs / "fairdd")
    assert code == 0 and "EOpp1" in out and len(out.strip().splitlines()) == 3


def test_snapshot_reproduces_run(env, capsys):
    tmp, cfg = env
    run(capsys, "train", "--config", cfg, "--mode", "fairdd")
    first = tmp / "out" / "t" / "fairdd"
    run(capsys, "train", "--config", first / "config.json", "--mode", "fairdd", "--run-dir", tmp / "rerun")
    for f in ("params.json", "predictions.csv", "metrics.json", "epochs.jsonl"):
        assert (first / f).read_bytes() == (tmp / "rerun" / f).read_bytes(), f


def test_fate_names_missing_baseline(env, capsys):
    tmp, cfg = env
    run(capsys, "train", "--config", cfg, "--mode", "fairdd")
    code, _, err = run(capsys, "fate", "--enhanced", tmp / "out" / "t" / "fairdd", "--baseline", tmp / "nowhere")
    assert code == 1
    rec = json.loads(err)
    assert str(tmp / "nowhere" / "predictions.csv") in rec["message"]


def test_ablate_alpha_sweep(env, capsys):
    tmp, cfg = env
    code, out, _ = run(capsys, "ablate", "--config", cfg, "--sweep", "alpha", "--values", "0.2,0.4,0.6,0.8,1.0")
    assert code == 0
    res = json.loads(out)
    assert res["runs"] == 5
    rows = read_rows(res["table"])
    assert [r["value"] for r in rows] == ["0.2", "0.4", "0.6", "0.8", "1.0"]
    assert {"accuracy", "EOpp1", "FATE_EOpp1", "FATE_EOdd"} <= set(rows[0])
    for r in rows:
        snap = json.loads(open(f"{r['run_dir']}/config.json").read())
        assert snap["weights"]["alpha"] == float(r["value"])
    assert (tmp / "out" / "t" / "ablate-alpha" / "ablation.png").exists()


def test_ablate_order_runs_both_orders(env, capsys):
    tmp, cfg = env
    code, out, _ = run(capsys, "ablate", "--config", cfg, "--sweep", "order")
    assert code == 0
    rows = read_rows(json.loads(out)["table"])
    assert len(rows) == 2
    orders = {tuple(json.loads(open(f"{r['run_dir']}/config.json").read())["train"]["stage_order"]) for r in rows}
    assert orders == {(0, 1), (1, 0)}


def test_ablate_reuses_baseline_and_rejects_bad_values(env, capsys):
    tmp, cfg = env
    run(capsys, "train", "--config", cfg, "--mode", "vanilla")
    base = tmp / "out" / "t" / "vanilla"
    code, out, _ = run(capsys, "ablate", "--config", cfg, "--sweep", "mixup", "--baseline", base)
    assert code == 0 and json.loads(out)["runs"] == 2
    assert not (tmp / "out" / "t" / "ablate-mixup" / "baseline").exists()
    code, _, err = run(capsys, "ablate", "--config", cfg, "--sweep", "buffer", "--values", "lots")
    assert code == 1 and "lots" in json.loads(err)["message"]
