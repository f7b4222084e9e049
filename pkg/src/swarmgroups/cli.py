"""Command-line harness: simulate, train, infer, eval, pipeline, replay.

Every command resolves one nested configuration (defaults, then ``--config``
JSON, then ``SWARMGROUPS_<SECTION>__<KEY>`` environment variables, then
explicit flags) and writes a ``<command>.manifest.json`` next to its outputs.
``replay`` re-executes a manifest and reproduces the same output bytes.

Exit codes: 0 success, 2 input/config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .cvae import LOSS_TERMS, ModelConfig, TrainConfig, TrajectoryModel, train
from .errors import ConfigError, InputError, NumericalError, SwarmGroupsError
from .grouping import MODES, groups_overlap, infer_groups, position_kmeans
from .metrics import evaluate
from .swarmsim import SimConfig, make_dataset, read_jsonl, sequence_seeds, simulate, write_jsonl
from .swarmsim import _with_seed

log = logging.getLogger("swarmgroups")

ENV_PREFIX = "SWARMGROUPS_"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# Reference scores of the full-scale model, shown as context only.
REFERENCE_SCORES = {"ari": 0.4045, "nmi": 0.4086, "f": 0.6968}
REFERENCE_NOTE = "published full-scale second-order result; annotation only, not comparable at desk scale"

_TRAIN_KEYS = ("epochs", "lr", "batch_size", "K", "prior_var", "beta1", "beta2", "adam_eps", "weights", "windows_per_sequence")

DEFAULTS = {
    "data": {"swarm": "A", "n_train": 20, "n_val": 2, "n_test": 5, "sim": {}},
    "model": asdict(ModelConfig()),
    "train": {**{k: getattr(TrainConfig(), k) for k in _TRAIN_KEYS}, "windows_per_sequence": 2},
    "infer": {"k": 2, "mode": "second_order", "split": "test", "t0_start": 104, "t0_stride": 8, "t0": None},
    "pipeline": {"eval_swarms": ["A", "B", "C"]},
}

METRIC_COLUMNS = ("t0", "ari_mean", "ari_std", "nmi_mean", "nmi_std", "f_mean", "f_std")


# -- configuration ----------------------------------------------------------

def merge_config(base: dict, override: dict, where: str = "") -> dict:
    """Recursive merge that rejects keys the defaults do not know."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in out:
            raise ConfigError(path, "unknown configuration key")
        if isinstance(out[key], dict) and key not in ("sim", "weights"):
            if not isinstance(value, dict):
                raise ConfigError(path, "expected an object")
            out[key] = merge_config(out[key], value, path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def env_overrides(environ=None) -> dict:
    """``SWARMGROUPS_TRAIN__EPOCHS=3`` becomes ``{"train": {"epochs": 3}}``; values parse as JSON when possible."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        section, sep, key = name[len(ENV_PREFIX):].partition("__")
        if not sep:
            continue
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        # match names case-insensitively so MODEL__H and TRAIN__K work
        section = next((s for s in DEFAULTS if s.lower() == section.lower()), section.lower())
        known = DEFAULTS.get(section, {})
        key = next((k for k in known if k.lower() == key.lower()), key.lower())
        out.setdefault(section, {})[key] = value
    return out


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("--config", "top level must be an object")
    return data


def resolve_config(config_path=None, flags: dict | None = None, environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        cfg = merge_config(cfg, load_config_file(config_path))
    cfg = merge_config(cfg, env_overrides(environ))
    if flags:
        cfg = merge_config(cfg, flags)
    return cfg


def sim_config(cfg: dict, swarm: str | None = None) -> SimConfig:
    d = dict(cfg["data"]["sim"])
    if not isinstance(d, dict):
        raise ConfigError("data.sim", "expected an object")
    if "groups" not in d:
        d["swarm"] = swarm or cfg["data"]["swarm"]
    try:
        return SimConfig.from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"data.sim.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig(**cfg["model"])
    except TypeError as exc:
        raise ConfigError("model", str(exc)) from None


def train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    for key in ("epochs", "batch_size", "K"):
        if not isinstance(t[key], int) or isinstance(t[key], bool):
            raise ConfigError(f"train.{key}", f"must be an integer, got {t[key]!r}")
    wps = t["windows_per_sequence"]
    if wps is not None and (not isinstance(wps, int) or wps < 1):
        raise ConfigError("train.windows_per_sequence", "must be a positive integer or null")
    tc = TrainConfig(seed=seed, **{k: t[k] for k in _TRAIN_KEYS})
    try:
        return tc.validate()
    except ConfigError as exc:
        raise ConfigError(f"train.{exc.field}", str(exc).split(": ", 1)[-1]) from None


# -- file helpers -----------------------------------------------------------

def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
    return path


def _write_csv(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return path


def write_manifest(out_dir: Path, command: str, cfg: dict, seed: int, inputs: dict, outputs: dict, started: float) -> Path:
    manifest = {
        "tool": "swarmgroups",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": cfg,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "duration_s": round(time.monotonic() - started, 3),
    }
    return _write_json(out_dir / f"{command}.manifest.json", manifest)


def _summary(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------

def run_simulate(cfg: dict, seed: int, out_dir: Path, out_path: Path | None = None) -> dict:
    d = cfg["data"]
    for key in ("n_train", "n_val", "n_test"):
        if not isinstance(d[key], int) or d[key] < 1:
            raise ConfigError(f"data.{key}", f"must be a positive integer, got {d[key]!r}")
    tr, va, te = make_dataset(sim_config(cfg), d["n_train"], d["n_val"], d["n_test"], seed)
    path = out_path or out_dir / "dataset.jsonl"
    write_jsonl(path, [*tr, *va, *te])
    seqs = [*tr, *va, *te]
    return {"outputs": {"dataset": path},
            "summary": {"sequences": len(seqs), "agents": seqs[0].n_agents, "steps": seqs[0].total_steps,
                        "splits": {"train": len(tr), "val": len(va), "test": len(te)}}}


def _read_dataset(path) -> list:
    try:
        seqs = read_jsonl(path)
    except FileNotFoundError:
        raise InputError(f"dataset not found: {path}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"malformed dataset {path}: {exc}") from None
    if not seqs:
        raise InputError(f"dataset {path} is empty")
    return seqs


def run_train(cfg: dict, seed: int, out_dir: Path, data: Path, ckpt: Path | None = None) -> dict:
    seqs = _read_dataset(data)
    mcfg, tcfg = model_config(cfg), train_config(cfg, seed)
    train_seqs = [s for s in seqs if s.split in (None, "train")]
    val_seqs = [s for s in seqs if s.split == "val"]
    ckpt = ckpt or out_dir / "model.ckpt"
    loss_path = out_dir / "loss.csv"
    columns = ("epoch", *LOSS_TERMS, "total", "val_total")
    rows = []

    def on_epoch(epoch, rep, val, best):
        rows.append({"epoch": epoch, **rep.as_dict(), "val_total": float(val)})
        _write_csv(loss_path, columns, rows)
        # keep the best-so-far model on disk so a later divergence leaves a usable checkpoint
        TrajectoryModel(mcfg, best).save(ckpt)

    result = train(train_seqs, mcfg, tcfg, val_seqs, on_epoch=on_epoch)
    TrajectoryModel(mcfg, result.params).save(ckpt)
    return {"outputs": {"checkpoint": ckpt, "loss_csv": loss_path},
            "summary": {"epochs": len(result.history), "best_epoch": result.best_epoch,
                        "initial_total": result.history[0].total, "final_total": result.history[-1].total}}


def window_origins(cfg: dict, seq, H: int) -> list[int]:
    inf = cfg["infer"]
    if inf["t0"] is not None:
        return [int(t) for t in inf["t0"]]
    start = max(int(inf["t0_start"]), H)
    return list(range(start, seq.total_steps, int(inf["t0_stride"])))


def run_infer(cfg: dict, seed: int, out_dir: Path, checkpoint: Path, data: Path, out_path: Path | None = None) -> dict:
    inf = cfg["infer"]
    if inf["mode"] not in MODES:
        raise ConfigError("infer.mode", f"must be one of {MODES}")
    try:
        model = TrajectoryModel.load(checkpoint)
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {checkpoint}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"unreadable checkpoint {checkpoint}: {exc}") from None
    seqs = _read_dataset(data)
    records = []
    for i, seq in enumerate(seqs):
        if inf["split"] is not None and seq.split not in (None, inf["split"]):
            continue
        for t0 in window_origins(cfg, seq, model.cfg.H):
            g = infer_groups(model, seq, t0, int(inf["k"]), inf["mode"], seed)
            records.append({"sequence": i, **g.to_dict(t0, inf["mode"])})
    if not records:
        raise InputError("no windows selected: check infer.split, infer.t0_start and the sequence length")
    path = out_path or out_dir / f"groups_{inf['mode']}.json"
    _write_json(path, records)
    return {"outputs": {"groups": path}, "summary": {"windows": len(records), "mode": inf["mode"]}}


def _agg(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


def summarize(per_window: list[dict]) -> dict:
    out = {"windows": len(per_window)}
    for key in ("ari", "nmi", "f"):
        out[f"{key}_mean"], out[f"{key}_std"] = _agg([r[key] for r in per_window]) if per_window else (float("nan"),) * 2
    return out


def score_records(records: list, seqs: list) -> list[dict]:
    """Per-window MetricsReport rows, with an evaluation-only overlap flag."""
    rows = []
    for n, rec in enumerate(records):
        try:
            seq = seqs[rec["sequence"]]
            labels, t0 = rec["labels"], int(rec["t0"])
        except (KeyError, IndexError, TypeError):
            raise InputError(f"group record {n} does not match the dataset") from None
        if len(labels) != seq.n_agents:
            raise InputError(f"group record {n} has {len(labels)} labels but sequence {rec['sequence']} has {seq.n_agents} agents")
        if not 0 <= t0 < seq.total_steps:
            raise InputError(f"group record {n}: t0={t0} outside the sequence")
        rows.append({"sequence": rec["sequence"], "t0": t0, **evaluate(seq.labels, labels).to_dict(),
                     "overlap": groups_overlap(seq.positions[t0], seq.labels)})
    return rows


def per_t0_rows(rows: list[dict]) -> list[dict]:
    out = []
    for t0 in sorted({r["t0"] for r in rows}):
        s = summarize([r for r in rows if r["t0"] == t0])
        out.append({"t0": t0, **{c: s[c] for c in METRIC_COLUMNS[1:]}})
    return out


def run_eval(cfg: dict, seed: int, out_dir: Path, groups: Path, data: Path, prefix: str = "metrics", title: str = "") -> dict:
    from .plotting import plot_metric_curves

    try:
        records = json.loads(Path(groups).read_text())
    except FileNotFoundError:
        raise InputError(f"groups file not found: {groups}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed groups file {groups}: {exc}") from None
    if not isinstance(records, list) or not records:
        raise InputError(f"groups file {groups} contains no group records")
    modes = sorted({r.get("mode") for r in records})
    if len(modes) != 1:
        raise InputError(f"groups file mixes modes {modes}; evaluate one mode at a time")
    rows = score_records(records, _read_dataset(data))
    curve = per_t0_rows(rows)
    report = {
        "reference": {**REFERENCE_SCORES, "note": REFERENCE_NOTE},
        "mode": modes[0],
        "summary": summarize(rows),
        "overlap": summarize([r for r in rows if r["overlap"]]),
        "separated": summarize([r for r in rows if not r["overlap"]]),
        "per_window": rows,
    }
    json_path = _write_json(out_dir / f"{prefix}.json", report)
    csv_path = _write_csv(out_dir / f"{prefix}.csv", METRIC_COLUMNS, curve)
    fig = plot_metric_curves(curve, out_dir / f"{prefix}_over_t0.png", title or modes[0].replace("_", " "))
    return {"outputs": {"metrics_json": json_path, "metrics_csv": csv_path, "figure": fig},
            "summary": {"mode": modes[0], **report["summary"]}}


def _test_set(cfg: dict, seed: int, swarm: str) -> list:
    """Held-out sequences of one swarm preset, reusing the training preset's test seeds."""
    d = cfg["data"]
    seeds = sequence_seeds(seed, d["n_train"] + d["n_val"] + d["n_test"])[d["n_train"] + d["n_val"]:]
    base = sim_config(cfg, swarm)
    out = []
    for s in seeds:
        seq = simulate(_with_seed(base, s))
        seq.split = "test"
        out.append(seq)
    return out


COMPARISON_COLUMNS = ("swarm", "mode", "windows", "ari_mean", "ari_std", "nmi_mean", "nmi_std", "f_mean", "f_std",
                      "overlap_windows", "overlap_ari_mean")


def run_pipeline(cfg: dict, seed: int, out_dir: Path) -> dict:
    from .plotting import plot_comparison

    stage = "simulate"
    try:
        sim = run_simulate(cfg, seed, out_dir, out_dir / f"data_{cfg['data']['swarm']}.jsonl")
        stage = "train"
        trained = run_train(cfg, seed, out_dir, sim["outputs"]["dataset"])
        model = TrajectoryModel.load(trained["outputs"]["checkpoint"])
        table = []
        for swarm in cfg["pipeline"]["eval_swarms"]:
            stage = f"simulate[{swarm}]"
            data_path = out_dir / f"test_{swarm}.jsonl"
            seqs = _test_set(cfg, seed, swarm)
            write_jsonl(data_path, seqs)
            for mode in MODES:
                stage = f"infer[{swarm},{mode}]"
                mcfg = merge_config(cfg, {"infer": {"mode": mode, "split": "test"}})
                inf = run_infer(mcfg, seed, out_dir, trained["outputs"]["checkpoint"], data_path,
                                out_dir / f"groups_{swarm}_{mode}.json")
                stage = f"eval[{swarm},{mode}]"
                ev = run_eval(mcfg, seed, out_dir, inf["outputs"]["groups"], data_path, f"metrics_{swarm}_{mode}",
                              f"Swarm {swarm}, {mode.replace('_', ' ')}")
                table.append(_table_row(swarm, mode, json.loads(Path(ev["outputs"]["metrics_json"]).read_text())))
            stage = f"baseline[{swarm}]"
            records = [{"sequence": i, "t0": t0, "labels": position_kmeans(s, t0, int(cfg["infer"]["k"]), seed).tolist()}
                       for i, s in enumerate(seqs) for t0 in window_origins(cfg, s, model.cfg.H)]
            rows = score_records(records, seqs)
            table.append(_table_row(swarm, "position_kmeans", {"summary": summarize(rows),
                                                              "overlap": summarize([r for r in rows if r["overlap"]])}))
        stage = "report"
        table_csv = _write_csv(out_dir / "comparison.csv", COMPARISON_COLUMNS, table)
        table_json = _write_json(out_dir / "comparison.json",
                                 {"reference": {**REFERENCE_SCORES, "note": REFERENCE_NOTE}, "rows": table})
        fig = plot_comparison(table, out_dir / "comparison_ari.png")
    except SwarmGroupsError as exc:
        exc.stage = stage
        raise
    return {"outputs": {"comparison_csv": table_csv, "comparison_json": table_json, "figure": fig,
                        "checkpoint": trained["outputs"]["checkpoint"]},
            "summary": {"rows": [{k: r[k] for k in ("swarm", "mode", "ari_mean")} for r in table]}}


def _table_row(swarm: str, mode: str, report: dict) -> dict:
    s, o = report["summary"], report["overlap"]
    return {"swarm": swarm, "mode": mode, **{c: s[c] for c in COMPARISON_COLUMNS[2:9]},
            "overlap_windows": o["windows"], "overlap_ari_mean": o["ari_mean"]}


# -- dispatch ---------------------------------------------------------------

def _flags(args) -> dict:
    """Explicit command-line values as a partial config."""
    f: dict = {}
    pick = lambda section, key, value: value is not None and f.setdefault(section, {}).__setitem__(key, value)
    pick("data", "swarm", getattr(args, "swarm", None))
    for key in ("n_train", "n_val", "n_test"):
        pick("data", key, getattr(args, key, None))
    pick("train", "epochs", getattr(args, "epochs", None))
    pick("infer", "k", getattr(args, "k", None))
    pick("infer", "mode", getattr(args, "mode", None))
    pick("infer", "split", getattr(args, "split", None))
    pick("infer", "t0", getattr(args, "t0", None))
    return f


def execute(command: str, cfg: dict, seed: int, out_dir: Path, inputs: dict) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    if command == "simulate":
        res = run_simulate(cfg, seed, out_dir, inputs.get("out"))
    elif command == "train":
        res = run_train(cfg, seed, out_dir, inputs["data"], inputs.get("out"))
    elif command == "infer":
        res = run_infer(cfg, seed, out_dir, inputs["checkpoint"], inputs["data"], inputs.get("out"))
    elif command == "eval":
        res = run_eval(cfg, seed, out_dir, inputs["groups"], inputs["data"])
    elif command == "pipeline":
        res = run_pipeline(cfg, seed, out_dir)
    else:
        raise InputError(f"unknown command {command!r}")
    manifest = write_manifest(out_dir, command, cfg, seed, inputs, res["outputs"], started)
    return {**res, "manifest": manifest}


def replay(manifest_path, out_dir: Path | None = None) -> dict:
    try:
        m = json.loads(Path(manifest_path).read_text())
    except FileNotFoundError:
        raise InputError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed manifest: {exc}") from None
    if m.get("tool") != "swarmgroups" or "command" not in m:
        raise InputError("not a swarmgroups manifest")
    target = Path(out_dir) if out_dir else Path(manifest_path).parent
    inputs = {k: Path(v) for k, v in m["inputs"].items() if k != "out"}
    cfg = merge_config(DEFAULTS, m["config"])
    return execute(m["command"], cfg, int(m["seed"]), target, inputs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out-dir", type=Path, default=Path("runs"), help="directory for outputs and the manifest")
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="swarmgroups", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a labeled trajectory dataset (JSONL)")
    s.add_argument("--swarm", choices=("A", "B", "C"))
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-val", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--out", type=Path, help="dataset path (default OUT_DIR/dataset.jsonl)")

    t = sub.add_parser("train", parents=[common], help="train the model; writes checkpoint and loss CSV")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", type=Path, help="checkpoint path (default OUT_DIR/model.ckpt)")

    i = sub.add_parser("infer", parents=[common], help="infer groups per window; writes groups JSON")
    i.add_argument("--checkpoint", type=Path, required=True)
    i.add_argument("--data", type=Path, required=True)
    i.add_argument("--k", type=int)
    i.add_argument("--mode", choices=MODES)
    i.add_argument("--split", help="only sequences of this split (default test)")
    i.add_argument("--t0", type=int, nargs="+", help="explicit window origins")
    i.add_argument("--out", type=Path, help="groups path (default OUT_DIR/groups_<mode>.json)")

    e = sub.add_parser("eval", parents=[common], help="score groups against ground truth; writes JSON, CSV and a figure")
    e.add_argument("--groups", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)

    sub.add_parser("pipeline", parents=[common], help="simulate, train on one preset, evaluate every preset in both modes")

    r = sub.add_parser("replay", help="re-run a command from its manifest")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out-dir", type=Path, help="where to write (default: the manifest's directory)")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            res = replay(args.manifest, args.out_dir)
        else:
            cfg = resolve_config(args.config, _flags(args))
            inputs = {k: getattr(args, k) for k in ("data", "checkpoint", "groups", "out") if getattr(args, k, None) is not None}
            res = execute(args.command, cfg, args.seed, args.out_dir, inputs)
    except NumericalError as exc:
        _report_error(exc, "numerical failure")
        return EXIT_NUMERIC
    except (InputError, OSError) as exc:
        _report_error(exc, "input error")
        return EXIT_INPUT
    _summary({**res["summary"], "manifest": str(res["manifest"])})
    return EXIT_OK


def _report_error(exc: Exception, kind: str) -> None:
    stage = getattr(exc, "stage", None)
    where = f" in stage {stage}" if stage else ""
    extra = f" (loss term {exc.term})" if getattr(exc, "term", None) else ""
    sys.stderr.write(f"swarmgroups: {kind}{where}: {exc}{extra}\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
