import csv
import hashlib
import json

import pytest

from swarmgroups.cli import DEFAULTS, env_overrides, main, resolve_config
from swarmgroups.cvae import LOSS_TERMS, TrajectoryModel
from swarmgroups.errors import ConfigError
from swarmgroups.swarmsim import read_jsonl

TINY = {
    "data": {"n_train": 2, "n_val": 1, "n_test": 1, "sim": {"total_steps": 30, "n_agents_per_group": 3}},
    "model": {"H": 3, "T": 3, "d": 4, "gate_hidden": 4, "z": 2},
    "train": {"epochs": 1, "K": 2},
    "infer": {"t0_start": 12, "t0_stride": 6},
}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def trained(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(tiny_config), "--out-dir", str(out)]) == 0
    assert main(["train", "--config", str(tiny_config), "--out-dir", str(out), "--data", str(out / "dataset.jsonl")]) == 0
    return out


def test_config_layering(tmp_path, tiny_config):
    cfg = resolve_config(tiny_config, {"train": {"epochs": 7}}, {"SWARMGROUPS_MODEL__H": "5", "SWARMGROUPS_TRAIN__K": "3"})
    assert cfg["train"]["epochs"] == 7 and cfg["model"]["H"] == 5 and cfg["train"]["K"] == 3
    assert cfg["train"]["lr"] == DEFAULTS["train"]["lr"]
    assert env_overrides({"SWARMGROUPS_INFER__MODE": "first_order_ablation", "OTHER": "x"}) == {"infer": {"mode": "first_order_ablation"}}
    with pytest.raises(ConfigError) as exc:
        resolve_config(None, {"train": {"epohcs": 1}})
    assert exc.value.field == "train.epohcs"


def test_simulate_desk_run_and_determinism(tmp_path, capsys):
    args = ["simulate", "--n-train", "2", "--n-val", "1", "--n-test", "1", "--seed", "4"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary["sequences"] == 4 and summary["agents"] == 24 and summary["steps"] == 200
    lines = (tmp_path / "a" / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert [json.loads(l)["split"] for l in lines] == ["train", "train", "val", "test"]
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert sha(tmp_path / "a" / "dataset.jsonl") == sha(tmp_path / "b" / "dataset.jsonl")
    manifest = json.loads((tmp_path / "a" / "simulate.manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 4 and "duration_s" in manifest
    assert manifest["config"]["train"]["epochs"] == DEFAULTS["train"]["epochs"]


def test_malformed_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"sim": {"groups": [{"cohesion": 0.1}]}}}))
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "data.sim.groups[0]" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    env_bad = tmp_path / "ok.json"
    env_bad.write_text(json.dumps({"data": {"n_train": 0}}))
    assert main(["simulate", "--config", str(env_bad), "--out-dir", str(tmp_path)]) == 2


def test_train_outputs(trained):
    model = TrajectoryModel.load(trained / "model.ckpt")
    assert model.cfg.H == 3 and model.cfg.d == 4
    with open(trained / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", *LOSS_TERMS, "total", "val_total"]
    assert len(rows) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_3_keeps_checkpoint(tmp_path, tiny_config, monkeypatch, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(tiny_config), "--out-dir", str(out)]) == 0
    monkeypatch.setenv("SWARMGROUPS_TRAIN__LR", "1e300")
    monkeypatch.setenv("SWARMGROUPS_TRAIN__EPOCHS", "4")
    code = main(["train", "--config", str(tiny_config), "--out-dir", str(out), "--data", str(out / "dataset.jsonl")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
    TrajectoryModel.load(out / "model.ckpt")  # last good checkpoint is still loadable


def test_infer_and_eval(trained, tmp_path):
    data = trained / "dataset.jsonl"
    for mode in ("second_order", "first_order_ablation"):
        assert main(["infer", "--config", str(trained.parent / "tiny.json"), "--out-dir", str(trained),
                     "--checkpoint", str(trained / "model.ckpt"), "--data", str(data), "--mode", mode]) == 0
    a = json.loads((trained / "groups_second_order.json").read_text())
    b = json.loads((trained / "groups_first_order_ablation.json").read_text())
    assert [set(r) for r in a] == [{"sequence", "t0", "k", "labels", "mode"}] * len(a)
    assert [{k: v for k, v in r.items() if k not in ("labels", "mode")} for r in a] == \
           [{k: v for k, v in r.items() if k not in ("labels", "mode")} for r in b]
    assert {r["t0"] for r in a} == {12, 18, 24}
    assert main(["eval", "--out-dir", str(trained), "--groups", str(trained / "groups_second_order.json"), "--data", str(data)]) == 0
    report = json.loads((trained / "metrics.json").read_text())
    assert report["reference"]["ari"] == 0.4045 and report["mode"] == "second_order"
    with open(trained / "metrics.csv") as fh:
        assert fh.readline().strip() == "t0,ari_mean,ari_std,nmi_mean,nmi_std,f_mean,f_std"
    assert (trained / "metrics_over_t0.png").stat().st_size > 0


def test_singleton_groups_when_k_equals_n(trained):
    data = trained / "dataset.jsonl"
    assert main(["infer", "--out-dir", str(trained), "--checkpoint", str(trained / "model.ckpt"), "--data", str(data),
                 "--k", "6", "--t0", "10", "--out", str(trained / "single.json")]) == 0
    rec = json.loads((trained / "single.json").read_text())[0]
    assert sorted(rec["labels"]) == list(range(6))


def test_eval_ground_truth_perfect(trained):
    data = trained / "dataset.jsonl"
    seqs = read_jsonl(data)
    recs = [{"sequence": i, "t0": t, "k": 2, "labels": s.labels.tolist(), "mode": "second_order"}
            for i, s in enumerate(seqs) for t in (10, 20)]
    g = trained / "truth.json"
    g.write_text(json.dumps(recs))
    assert main(["eval", "--out-dir", str(trained / "ev"), "--groups", str(g), "--data", str(data)]) == 0
    with open(trained / "ev" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["ari_mean"]) == 1.0 and float(r["ari_std"]) == 0.0 for r in rows)


def test_eval_errors_exit_2(trained, capsys):
    data = trained / "dataset.jsonl"
    empty = trained / "empty.json"
    empty.write_text("[]")
    assert main(["eval", "--out-dir", str(trained), "--groups", str(empty), "--data", str(data)]) == 2
    assert "no group records" in capsys.readouterr().err
    wrong = trained / "wrong.json"
    wrong.write_text(json.dumps([{"sequence": 0, "t0": 10, "k": 2, "labels": [0, 1], "mode": "second_order"}]))
    assert main(["eval", "--out-dir", str(trained), "--groups", str(wrong), "--data", str(data)]) == 2


def test_infer_bad_window_exit_2(trained):
    assert main(["infer", "--out-dir", str(trained), "--checkpoint", str(trained / "model.ckpt"),
                 "--data", str(trained / "dataset.jsonl"), "--t0", "1"]) == 2
    assert main(["infer", "--out-dir", str(trained), "--checkpoint", str(trained / "missing.ckpt"),
                 "--data", str(trained / "dataset.jsonl")]) == 2


def test_pipeline_and_replay(tmp_path, tiny_config):
    run = tmp_path / "p1"
    assert main(["pipeline", "--config", str(tiny_config), "--out-dir", str(run), "--seed", "2"]) == 0
    with open(run / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {(r["swarm"], r["mode"]) for r in rows} == {
        (s, m) for s in "ABC" for m in ("second_order", "first_order_ablation", "position_kmeans")}
    assert main(["replay", str(run / "pipeline.manifest.json"), "--out-dir", str(tmp_path / "p2")]) == 0
    for f in run.iterdir():
        if f.name != "pipeline.manifest.json":
            assert sha(f) == sha(tmp_path / "p2" / f.name), f.name
