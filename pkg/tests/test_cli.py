import csv
import json
import os

import pytest

from wcfr.cli import main
from wcfr.data import load_csv_dataset


TINY_TOY = {
    "n_train": 40,
    "n_val": 24,
    "n_test": 20,
    "p": 6,
    "p_star": 3,
    "omega": 3,
    "gamma_scale": 1.0,
    "seed": 5,
}

TINY_ARCH = {
    "encoder_hidden": [6],
    "rep_dim": 4,
    "head_hidden": [6],
    "propensity_hidden": [4],
}

TINY_TRAINING = {"batch_size": 16, "lr": 1e-3, "max_epochs": 6, "patience": 6}

TINY_PROP = {"max_epochs": 40}


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return str(path)


def test_generate_writes_splits_and_manifest(tmp_path):
    cfg = write_json(tmp_path / "toy.json", TINY_TOY)
    out = tmp_path / "data"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    ds = load_csv_dataset(str(out / "train.csv"))
    assert ds.n == 40 and ds.p == 6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["gamma_scale"] == 1.0


def test_generate_seed_flag_overrides(tmp_path):
    cfg = write_json(tmp_path / "toy.json", TINY_TOY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["generate", "--config", cfg, "--out", str(out1), "--seed", "9"])
    main(["generate", "--config", cfg, "--out", str(out2), "--seed", "9"])
    assert (out1 / "train.csv").read_text() == (out2 / "train.csv").read_text()


def train_config(tmp_path, **overrides):
    doc = {
        "dataset": {"kind": "toy", "base": TINY_TOY},
        "scheme": "ow",
        "alpha": 0.0,
        "ipm": "wass",
        "architecture": TINY_ARCH,
        "training": TINY_TRAINING,
        "propensity_training": TINY_PROP,
        "seed": 1,
    }
    doc.update(overrides)
    return write_json(tmp_path / "train.json", doc)


def test_train_evaluate_export_pipeline(tmp_path):
    cfg = train_config(tmp_path)
    run_dir = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(run_dir)]) == 0
    for name in ("propensity.json", "model.json", "trace.json"):
        assert (run_dir / name).exists()

    eval_cfg = write_json(
        tmp_path / "eval.json",
        {
            "dataset": {"kind": "toy", "base": TINY_TOY},
            "model": str(run_dir / "model.json"),
            "propensity": str(run_dir / "propensity.json"),
            "scheme": "ow",
            "split": "test",
        },
    )
    out_dir = tmp_path / "eval_out"
    assert main(["evaluate", "--config", eval_cfg, "--out", str(out_dir)]) == 0
    report = json.loads((out_dir / "eval.json").read_text())
    assert report["scheme"] == "ow"
    assert report["n"] == TINY_TOY["n_test"]
    assert report["sqrt_pehe_p"] is not None
    assert (out_dir / "eval.csv").exists()

    export_cfg = write_json(
        tmp_path / "export.json",
        {
            "dataset": {"kind": "toy", "base": TINY_TOY},
            "model": str(run_dir / "model.json"),
            "propensity": str(run_dir / "propensity.json"),
            "scheme": "uniform",
            "split": "train",
        },
    )
    out_csv = tmp_path / "repr.csv"
    assert main(["export-repr", "--config", export_cfg, "--out", str(out_csv)]) == 0
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert len(body) == TINY_TOY["n_train"]
    assert len(header) == TINY_ARCH["rep_dim"] + 3
    assert header[-3:] == ["w", "t", "y"]
    w_col = header.index("w")
    assert all(float(r[w_col]) == 1.0 for r in body)


def test_train_on_csv_dataset(tmp_path):
    gen_cfg = write_json(tmp_path / "toy.json", TINY_TOY)
    data_dir = tmp_path / "data"
    main(["generate", "--config", gen_cfg, "--out", str(data_dir)])
    cfg = train_config(
        tmp_path,
        dataset={
            "kind": "csv",
            "train": str(data_dir / "train.csv"),
            "val": str(data_dir / "val.csv"),
            "test": str(data_dir / "test.csv"),
            "standardize": True,
        },
    )
    run_dir = tmp_path / "run_csv"
    assert main(["train", "--config", cfg, "--out", str(run_dir)]) == 0
    trace = json.loads((run_dir / "trace.json").read_text())
    assert len(trace["trace"]) <= TINY_TRAINING["max_epochs"]


def grid_config(**overrides):
    doc = {
        "name": "tiny",
        "dataset": {
            "kind": "toy",
            "base": TINY_TOY,
            "gamma_grid": [0.0, 2.0],
            "omega_grid": [3],
            "repetitions": 2,
            "base_seed": 0,
        },
        "schemes": ["uniform", "ow"],
        "alpha_grid": [0.0, 1.0],
        "ipm": "wass",
        "architectures": [TINY_ARCH],
        "training": TINY_TRAINING,
        "propensity_training": TINY_PROP,
        "selection_metric": "oracle_pehe",
        "seed": 3,
    }
    doc.update(overrides)
    return doc


def test_grid_runs_selects_and_reports(tmp_path):
    cfg = write_json(tmp_path / "grid.json", grid_config())
    out = tmp_path / "out"
    assert main(["grid", "--config", cfg, "--out", str(out)]) == 0
    records = sorted(os.listdir(out / "records"))
    # 2 gammas x 2 reps x 2 schemes x 2 alphas
    assert len(records) == 16
    selection = json.loads((out / "selection.json").read_text())
    # one winner per (cell, scheme): 4 cells x 2 schemes
    assert len(selection["selected"]) == 8
    assert (out / "long.csv").exists() and (out / "aggregate.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_ok"] == 16 and summary["n_failed"] == 0
    assert any(p.endswith(".png") for p in summary["figures"])
    with open(out / "aggregate.csv", newline="") as fh:
        agg = list(csv.DictReader(fh))
    assert {r["scheme"] for r in agg} == {"uniform", "ow"}
    assert {float(r["gamma"]) for r in agg} == {0.0, 2.0}


def test_grid_resume_is_idempotent(tmp_path):
    cfg = write_json(tmp_path / "grid.json", grid_config())
    out = tmp_path / "out"
    main(["grid", "--config", cfg, "--out", str(out)])
    records_dir = out / "records"
    stamps = {p: os.path.getmtime(records_dir / p) for p in os.listdir(records_dir)}
    contents = {p: (records_dir / p).read_text() for p in os.listdir(records_dir)}
    assert main(["grid", "--config", cfg, "--out", str(out)]) == 0
    assert {p: os.path.getmtime(records_dir / p) for p in os.listdir(records_dir)} == stamps
    assert {p: (records_dir / p).read_text() for p in os.listdir(records_dir)} == contents


def test_grid_rejects_mismatched_config_in_out_dir(tmp_path):
    cfg = write_json(tmp_path / "grid.json", grid_config())
    out = tmp_path / "out"
    main(["grid", "--config", cfg, "--out", str(out)])
    other = grid_config(seed=99)
    cfg2 = write_json(tmp_path / "grid2.json", other)
    with pytest.raises(ValueError, match="different config"):
        main(["grid", "--config", cfg2, "--out", str(out)])


def test_grid_alpha_zero_only_never_evaluates_ipm(tmp_path):
    doc = grid_config(alpha_grid=[0.0])
    doc["dataset"]["gamma_grid"] = [1.0]
    doc["dataset"]["repetitions"] = 1
    cfg = write_json(tmp_path / "grid.json", doc)
    out = tmp_path / "out"
    assert main(["grid", "--config", cfg, "--out", str(out)]) == 0
    for name in os.listdir(out / "traces"):
        trace = json.loads((out / "traces" / name).read_text())["trace"]
        assert all(entry["ipm"] is None for entry in trace)


def test_grid_workers_match_serial_records(tmp_path):
    cfg_doc = grid_config()
    cfg = write_json(tmp_path / "grid.json", cfg_doc)
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    main(["grid", "--config", cfg, "--out", str(serial)])
    main(["grid", "--config", cfg, "--out", str(parallel), "--workers", "2"])
    for name in sorted(os.listdir(serial / "records")):
        a = json.loads((serial / "records" / name).read_text())
        b = json.loads((parallel / "records" / name).read_text())
        a.pop("wall_time"), b.pop("wall_time")
        assert a == b


def test_grid_records_failures_and_continues(tmp_path):
    doc = grid_config()
    doc["dataset"] = {
        "kind": "csv",
        "evaluation": [str(tmp_path / "missing.csv")],
        "has_counterfactuals": True,
    }
    doc["selection_metric"] = "pehe_nn"
    cfg = write_json(tmp_path / "grid.json", doc)
    out = tmp_path / "out"
    rc = main(["grid", "--config", cfg, "--out", str(out)])
    assert rc == 1  # failures reported through the exit code
    records = [
        json.loads((out / "records" / p).read_text())
        for p in os.listdir(out / "records")
    ]
    assert records and all(r["status"] == "failed" for r in records)


def test_verify_subcommand(tmp_path):
    assert main(["verify", "--instances", "50", "--out", str(tmp_path / "v")]) == 0
    report = json.loads((tmp_path / "v" / "verification.json").read_text())
    assert report["pass"] and len(report["suites"]) == 4


def test_verify_zero_instances_trivially_passes(tmp_path):
    assert main(["verify", "--instances", "0"]) == 0


def test_verify_replay_reproduces_report(tmp_path):
    instance = {
        "probs": [0.25, 0.75],
        "e_true": [0.3, 0.6],
        "e_model": [0.4, 0.5],
        "scheme": "ow",
        "xi": 0.1,
    }
    path = write_json(tmp_path / "inst.json", instance)
    import io
    from contextlib import redirect_stdout

    outputs = []
    for _ in range(2):
        buf = io.StringIO()
        with redirect_stdout(buf):
            assert main(["verify", "--replay", path]) == 0
        outputs.append(buf.getvalue())
    assert outputs[0] == outputs[1]


def test_report_from_records_dir(tmp_path):
    cfg = write_json(tmp_path / "grid.json", grid_config())
    out = tmp_path / "out"
    main(["grid", "--config", cfg, "--out", str(out)])
    report_dir = tmp_path / "rep"
    assert main(["report", "--records", str(out), "--out", str(report_dir)]) == 0
    assert (report_dir / "long.csv").exists()
    assert (report_dir / "aggregate.csv").exists()
    figs = os.listdir(report_dir / "figures")
    assert any(f.startswith("pehe_vs_imbalance") for f in figs)
