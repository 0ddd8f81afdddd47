"""Command-line harness.

Subcommands: generate (toy datasets), train, evaluate, grid, export-repr,
verify (theory suites), report. Every command takes --config/--seed/--out
where meaningful; all numeric output uses 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

from .data import drop_covariates, fmt, load_csv_dataset, standardize_splits
from .experiment import (
    ExperimentConfig,
    load_records,
    run_experiment,
    select_records,
)
from .ipm import ipm_spec_from_config
from .metrics import evaluate_model
from .model import (
    TrainConfig,
    export_representations,
    load_cfr,
    save_cfr,
    train_cfr,
    write_representations,
)
from .propensity import (
    PropensityTrainConfig,
    load_propensity,
    save_propensity,
    train_propensity,
)
from .report import emit_report
from .synthetic import ToyConfig, generate_toy, save_toy
from .theory import replay_instance, run_all_suites
from .weights import scheme_from_config


def _read_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_splits(ds_cfg: dict, seed: Optional[int]):
    """Materialize (train, val, test, e_true_test) from a dataset config."""
    kind = ds_cfg.get("kind", "toy")
    if kind == "toy":
        base = dict(ds_cfg.get("base", {}))
        if seed is not None:
            base["seed"] = seed
        toy = generate_toy(ToyConfig(**base))
        return toy.train, toy.val, toy.test, toy.propensity["test"]
    if kind != "csv":
        raise ValueError(f"unknown dataset kind {kind!r}")
    has_cf = bool(ds_cfg.get("has_counterfactuals", True))
    splits = {}
    for name in ("train", "val", "test"):
        path = ds_cfg.get(name)
        splits[name] = load_csv_dataset(path, has_cf) if path else None
    if splits["train"] is None or splits["val"] is None:
        raise ValueError("csv dataset config needs 'train' and 'val' paths")
    cats = ds_cfg.get("categorical_covariates", [])
    if cats:
        splits = {k: (drop_covariates(v, cats) if v is not None else None)
                  for k, v in splits.items()}
    if ds_cfg.get("standardize", False):
        train, val, test = standardize_splits(splits["train"], splits["val"], splits["test"])
        splits = {"train": train, "val": val, "test": test}
    return splits["train"], splits["val"], splits["test"], None


def cmd_generate(args) -> int:
    cfg = _read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    toy = generate_toy(ToyConfig(**cfg))
    paths = save_toy(args.out, toy)
    print(json.dumps(paths, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    train, val, _test, _ = _load_splits(cfg.get("dataset", {"kind": "toy"}), args.seed)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    arch = cfg.get("architecture", {})
    pt = cfg.get("propensity_training", {})
    prop = train_propensity(
        train,
        PropensityTrainConfig(hidden=tuple(arch.get("propensity_hidden", [10])), **pt),
        seed=seed,
    )
    tr = cfg.get("training", {})
    tcfg = TrainConfig(
        alpha=float(cfg.get("alpha", 0.0)),
        ipm=ipm_spec_from_config(cfg.get("ipm", "wass")),
        scheme=scheme_from_config(cfg.get("scheme", "uniform")),
        encoder_hidden=tuple(arch.get("encoder_hidden", [100])),
        rep_dim=int(arch.get("rep_dim", 100)),
        head_hidden=tuple(arch.get("head_hidden", [100])),
        batch_size=min(int(tr.get("batch_size", 200)), train.n),
        lr=float(tr.get("lr", 1e-3)),
        max_epochs=int(tr.get("max_epochs", 600)),
        patience=int(tr.get("patience", 100)),
        snapshot=str(tr.get("snapshot", "best_val")),
        seed=seed,
    )
    result = train_cfr(train, val, tcfg, prop)
    os.makedirs(args.out, exist_ok=True)
    save_propensity(os.path.join(args.out, "propensity.json"), prop)
    save_cfr(os.path.join(args.out, "model.json"), result.model)
    with open(os.path.join(args.out, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "trace": result.trace,
                "best_epoch": result.best_epoch,
                "best_val_loss": result.best_val_loss,
                "aborted": result.aborted,
            },
            fh,
        )
    print(f"trained: best epoch {result.best_epoch}, "
          f"val loss {fmt(result.best_val_loss)}")
    return 0


def _eval_csv_row(path: str, doc: dict) -> None:
    flat = {}
    for k, v in doc.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                flat[f"{k}_{k2}"] = v2
        else:
            flat[k] = v
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(flat.keys())
        writer.writerow(
            [fmt(v) if isinstance(v, float) else ("" if v is None else v) for v in flat.values()]
        )


def cmd_evaluate(args) -> int:
    cfg = _read_config(args.config)
    train, val, test, e_true_test = _load_splits(cfg["dataset"], args.seed)
    split = cfg.get("split", "test")
    data = {"train": train, "val": val, "test": test}[split]
    if data is None:
        raise ValueError(f"requested split {split!r} is not available")
    e_true = e_true_test if split == "test" else None
    model = load_cfr(cfg["model"])
    prop = load_propensity(cfg["propensity"])
    scheme = scheme_from_config(cfg.get("scheme", "uniform"))
    report = evaluate_model(model, prop, scheme, data, train, e_true)
    os.makedirs(args.out, exist_ok=True)
    doc = report.to_dict()
    with open(os.path.join(args.out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    _eval_csv_row(os.path.join(args.out, "eval.csv"), doc)
    print(json.dumps(doc))
    return 0


def cmd_export_repr(args) -> int:
    cfg = _read_config(args.config)
    train, val, test, _ = _load_splits(cfg["dataset"], args.seed)
    split = cfg.get("split", "train")
    data = {"train": train, "val": val, "test": test}[split]
    model = load_cfr(cfg["model"])
    prop = load_propensity(cfg["propensity"])
    scheme = scheme_from_config(cfg.get("scheme", "uniform"))
    header, table = export_representations(model, prop, scheme, data)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    write_representations(args.out, header, table)
    print(f"wrote {table.shape[0]} rows x {table.shape[1]} columns to {args.out}")
    return 0


def cmd_grid(args) -> int:
    cfg = ExperimentConfig.from_dict(_read_config(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    records = run_experiment(cfg, args.out, workers=args.workers)
    selection = select_records(records, cfg)
    paths = emit_report(records, selection, args.out)
    n_failed = sum(1 for r in records if r.get("status") == "failed")
    print(f"{len(records)} records ({n_failed} failed); report in {paths['long_csv']}")
    return 0 if n_failed == 0 else 1


def cmd_verify(args) -> int:
    if args.replay:
        report = replay_instance(args.replay)
        print(json.dumps(report, indent=2))
        return 0 if report["pass"] else 1
    n = args.instances
    report = run_all_suites(
        balance_instances=n,
        divergence_instances=n,
        ipm_instances=n // 2,
        sandwich_instances=n // 2,
        seed=args.seed if args.seed is not None else 0,
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        out_path = os.path.join(args.out, "verification.json")
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        for suite in report["suites"]:
            worst = suite.get("worst_instance")
            if worst is not None:
                wpath = os.path.join(args.out, f"violation_{suite['suite']}.json")
                with open(wpath, "w", encoding="utf-8") as fh:
                    json.dump(worst, fh, indent=2)
    print(json.dumps({s["suite"]: s["pass"] for s in report["suites"]} | {"pass": report["pass"]}))
    return 0 if report["pass"] else 1


def cmd_report(args) -> int:
    records = load_records(args.records)
    sel_path = os.path.join(args.records, "selection.json")
    if os.path.exists(sel_path):
        with open(sel_path, "r", encoding="utf-8") as fh:
            selection = json.load(fh)
    else:
        cfg_path = os.path.join(args.records, "config.json")
        with open(cfg_path, "r", encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_dict(json.load(fh)["config"])
        selection = select_records(records, cfg)
    paths = emit_report(records, selection, args.out or args.records)
    print(json.dumps({k: v for k, v in paths.items()}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wcfr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset triple")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit propensity and outcome models")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate saved models on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="run a full experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("export-repr", help="export representations and weights")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_repr)

    p = sub.add_parser("verify", help="run the theory verification suites")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--replay", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="emit CSV/JSON summaries and figures")
    p.add_argument("--records", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
