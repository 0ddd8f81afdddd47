"""Config-driven experiment harness: dataset cells x schemes x alpha/
architecture grid, with per-cell propensity fitting, validation-based
selection, test-split evaluation, and crash-resumable record storage.

Every record is one JSON file named by its grid coordinates; reruns skip
cells whose records already exist, so killing and restarting a grid never
duplicates or loses work. All seeds are derived deterministically from
the experiment seed and the grid coordinates.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import (
    Dataset,
    drop_covariates,
    load_csv_dataset,
    split_dataset,
    standardize_splits,
)
from .ipm import ipm_spec_from_config, ipm_spec_name
from .metrics import evaluate_model, pehe, pehe_nn_proxy
from .model import TrainConfig, predict_ite, save_cfr, train_cfr
from .propensity import (
    PropensityTrainConfig,
    load_propensity,
    save_propensity,
    train_propensity,
)
from .synthetic import ToyConfig, generate_toy
from .weights import scheme_from_config

SELECTION_METRICS = ("oracle_pehe", "pehe_nn", "val_loss")

DEFAULT_ARCH = {
    "encoder_hidden": [100],
    "rep_dim": 100,
    "head_hidden": [100],
    "propensity_hidden": [10],
}

DEFAULT_TRAINING = {
    "batch_size": 200,
    "lr": 1e-3,
    "max_epochs": 600,
    "patience": 100,
    "snapshot": "best_val",
}

DEFAULT_PROP_TRAINING = {
    "lr": 1e-3,
    "max_epochs": 2000,
    "plateau_window": 20,
    "plateau_rel_tol": 1e-4,
}

TOY_ALPHA_GRID = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0]


def real_data_alpha_grid() -> list[float]:
    """The half-decade ladder 10^(k/2), k = -10..6, used for real datasets."""
    return [float(10.0 ** (k / 2.0)) for k in range(-10, 7)]


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: dict = field(default_factory=lambda: {"kind": "toy"})
    schemes: list = field(default_factory=lambda: ["uniform", "mw", "ow"])
    alpha_grid: list = field(default_factory=lambda: list(TOY_ALPHA_GRID))
    ipm: object = "wass"
    architectures: list = field(default_factory=lambda: [dict(DEFAULT_ARCH)])
    training: dict = field(default_factory=lambda: dict(DEFAULT_TRAINING))
    propensity_training: dict = field(default_factory=lambda: dict(DEFAULT_PROP_TRAINING))
    selection_metric: str = "oracle_pehe"
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.schemes or not self.alpha_grid or not self.architectures:
            raise ValueError("schemes, alpha_grid, and architectures must be non-empty")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(
                f"selection_metric must be one of {SELECTION_METRICS}, "
                f"got {self.selection_metric!r}"
            )
        self.training = {**DEFAULT_TRAINING, **self.training}
        self.propensity_training = {**DEFAULT_PROP_TRAINING, **self.propensity_training}
        self.architectures = [{**DEFAULT_ARCH, **a} for a in self.architectures]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment config fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ipm"] = self.ipm if isinstance(self.ipm, (str, dict)) else ipm_spec_name(self.ipm)
        return doc


def config_hash(doc: dict) -> str:
    """Stable under key reordering: canonical JSON, sorted keys."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _derived_seed(base: int, *coords: int) -> int:
    ss = np.random.SeedSequence(entropy=base, spawn_key=tuple(coords))
    return int(ss.generate_state(1)[0])


@dataclass
class Cell:
    """One dataset realization in the grid."""

    cell_id: str
    index: int
    role: str = "evaluation"  # "tuning" cells only steer pooled selection
    gamma: Optional[float] = None
    omega: Optional[int] = None
    rep: Optional[int] = None
    path: Optional[str] = None
    data_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def build_cells(config: ExperimentConfig) -> list[Cell]:
    ds = config.dataset
    kind = ds.get("kind", "toy")
    cells: list[Cell] = []
    if kind == "toy":
        base_seed = int(ds.get("base_seed", config.seed))
        gammas = [float(g) for g in ds.get("gamma_grid", [0.0])]
        omegas = [int(o) for o in ds.get("omega_grid", [20])]
        reps = int(ds.get("repetitions", 1))
        idx = 0
        for gi, gamma in enumerate(gammas):
            for oi, omega in enumerate(omegas):
                for rep in range(reps):
                    cells.append(
                        Cell(
                            cell_id=f"g{gamma:g}_o{omega}_r{rep}",
                            index=idx,
                            gamma=gamma,
                            omega=omega,
                            rep=rep,
                            data_seed=_derived_seed(base_seed, gi, oi, rep),
                        )
                    )
                    idx += 1
    elif kind == "csv":
        idx = 0
        for role in ("tuning", "evaluation"):
            for path in ds.get(role, []):
                cells.append(
                    Cell(
                        cell_id=f"{role[:4]}_{idx}_{os.path.splitext(os.path.basename(path))[0]}",
                        index=idx,
                        role=role,
                        path=path,
                        data_seed=_derived_seed(int(ds.get("split_seed", config.seed)), idx),
                    )
                )
                idx += 1
        if not cells:
            raise ValueError("csv dataset config names no files")
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    return cells


def materialize_cell(config: ExperimentConfig, cell: Cell):
    """Return (train, val, test, e_true_test or None) for a cell."""
    ds = config.dataset
    if ds.get("kind", "toy") == "toy":
        base = dict(ds.get("base", {}))
        base["gamma_scale"] = cell.gamma
        base["omega"] = cell.omega
        base["seed"] = cell.data_seed
        toy = generate_toy(ToyConfig(**base))
        return toy.train, toy.val, toy.test, toy.propensity["test"]
    full = load_csv_dataset(cell.path, bool(ds.get("has_counterfactuals", True)))
    cats = ds.get("categorical_covariates", [])
    if cats:
        full = drop_covariates(full, cats)
    frac = ds.get("split", {"train": 0.56, "val": 0.24})
    n_train = int(round(full.n * float(frac["train"])))
    n_val = int(round(full.n * float(frac["val"])))
    rng = np.random.default_rng(cell.data_seed)
    train, val, test = split_dataset(full, n_train, n_val, rng)
    if ds.get("standardize", True):
        train, val, test = standardize_splits(train, val, test)
    return train, val, test, None


def _train_config(config: ExperimentConfig, scheme, alpha, arch, seed) -> TrainConfig:
    tr = config.training
    return TrainConfig(
        alpha=float(alpha),
        ipm=ipm_spec_from_config(config.ipm),
        scheme=scheme,
        encoder_hidden=tuple(arch["encoder_hidden"]),
        rep_dim=int(arch["rep_dim"]),
        head_hidden=tuple(arch["head_hidden"]),
        batch_size=int(tr["batch_size"]),
        lr=float(tr["lr"]),
        max_epochs=int(tr["max_epochs"]),
        patience=int(tr["patience"]),
        snapshot=str(tr.get("snapshot", "best_val")),
        seed=seed,
    )


def _prop_config(config: ExperimentConfig, arch) -> PropensityTrainConfig:
    pt = config.propensity_training
    return PropensityTrainConfig(
        hidden=tuple(arch["propensity_hidden"]),
        lr=float(pt["lr"]),
        max_epochs=int(pt["max_epochs"]),
        plateau_window=int(pt["plateau_window"]),
        plateau_rel_tol=float(pt["plateau_rel_tol"]),
    )


def record_key(cell: Cell, scheme_kind: str, ai: int, ki: int) -> str:
    return f"{cell.cell_id}__{scheme_kind}__a{ai}__arch{ki}"


def _atomic_json(path: str, doc: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def run_cell(config: ExperimentConfig, cell: Cell, out_dir: str) -> list[dict]:
    """Train and evaluate every grid point of one dataset cell.

    The propensity model is fitted once per (cell, architecture) and
    cached on disk; grid points whose record file already exists are
    skipped. Failures are recorded per grid point and do not stop the run.
    """
    records_dir = os.path.join(out_dir, "records")
    traces_dir = os.path.join(out_dir, "traces")
    prop_dir = os.path.join(out_dir, "propensity")
    models_dir = os.path.join(out_dir, "models")
    for d in (records_dir, traces_dir, prop_dir, models_dir):
        os.makedirs(d, exist_ok=True)
    chash = config_hash(config.to_dict())

    wanted = []
    for si, scheme_entry in enumerate(config.schemes):
        scheme = scheme_from_config(scheme_entry)
        for ai, alpha in enumerate(config.alpha_grid):
            for ki in range(len(config.architectures)):
                key = record_key(cell, scheme.kind, ai, ki)
                if not os.path.exists(os.path.join(records_dir, key + ".json")):
                    wanted.append((si, scheme, ai, float(alpha), ki, key))
    out: list[dict] = []
    if not wanted:
        return out

    try:
        train, val, test, e_true_test = materialize_cell(config, cell)
    except Exception as exc:  # dataset-level failure: record every grid point
        for _si, scheme, ai, alpha, ki, key in wanted:
            record = {
                "config_hash": chash,
                "key": key,
                "cell": cell.to_dict(),
                "scheme": scheme.kind,
                "alpha": alpha,
                "alpha_index": ai,
                "arch_index": ki,
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "wall_time": 0.0,
            }
            _atomic_json(os.path.join(records_dir, key + ".json"), record)
            out.append(record)
        return out
    prop_cache: dict[int, object] = {}

    def propensity_for(ki: int):
        if ki in prop_cache:
            return prop_cache[ki]
        path = os.path.join(prop_dir, f"{cell.cell_id}__arch{ki}.json")
        if os.path.exists(path):
            model = load_propensity(path)
        else:
            model = train_propensity(
                train,
                _prop_config(config, config.architectures[ki]),
                seed=_derived_seed(config.seed, cell.index, 10_000 + ki),
            )
            save_propensity(path, model)
        prop_cache[ki] = model
        return model

    for si, scheme, ai, alpha, ki, key in wanted:
        started = time.time()
        record = {
            "config_hash": chash,
            "key": key,
            "cell": cell.to_dict(),
            "scheme": scheme.kind,
            "alpha": alpha,
            "alpha_index": ai,
            "arch_index": ki,
            "status": "ok",
            "error": None,
        }
        try:
            prop = propensity_for(ki)
            seed = _derived_seed(config.seed, cell.index, si, ai, ki)
            tcfg = _train_config(config, scheme, alpha, config.architectures[ki], seed)
            if tcfg.batch_size > train.n:
                tcfg.batch_size = train.n
            result = train_cfr(train, val, tcfg, prop)
            model = result.model

            selection = {"val_loss": result.best_val_loss}
            selection["pehe_nn_val"] = pehe_nn_proxy(model, val)
            if val.has_truth:
                selection["oracle_pehe_val"] = pehe(val.tau_true(), predict_ite(model, val.x))
            report = evaluate_model(model, prop, scheme, test, train, e_true_test)

            record.update(
                {
                    "seed": seed,
                    "selection": selection,
                    "eval": report.to_dict(),
                    "best_epoch": result.best_epoch,
                    "epochs_run": len(result.trace),
                    "aborted": result.aborted,
                    "wall_time": time.time() - started,
                }
            )
            _atomic_json(os.path.join(traces_dir, key + ".json"), {"trace": result.trace})
            record["trace_path"] = os.path.join("traces", key + ".json")
            save_cfr(os.path.join(models_dir, key + ".json"), model)
        except Exception as exc:  # recorded, run continues
            record["status"] = "failed"
            record["error"] = f"{type(exc).__name__}: {exc}"
            record["wall_time"] = time.time() - started
        _atomic_json(os.path.join(records_dir, key + ".json"), record)
        out.append(record)
    return out


def _run_cell_payload(payload) -> int:
    config_doc, cell_doc, out_dir = payload
    config = ExperimentConfig.from_dict(config_doc)
    cell = Cell(**cell_doc)
    return len(run_cell(config, cell, out_dir))


def load_records(out_dir: str) -> list[dict]:
    records_dir = os.path.join(out_dir, "records")
    records = []
    if os.path.isdir(records_dir):
        for name in sorted(os.listdir(records_dir)):
            if name.endswith(".json"):
                with open(os.path.join(records_dir, name), "r", encoding="utf-8") as fh:
                    records.append(json.load(fh))
    return records


def _metric_value(record: dict, metric: str) -> float:
    sel = record.get("selection", {})
    key = {"oracle_pehe": "oracle_pehe_val", "pehe_nn": "pehe_nn_val", "val_loss": "val_loss"}[
        metric
    ]
    value = sel.get(key)
    return float("inf") if value is None else float(value)


def select_records(records: list[dict], config: ExperimentConfig) -> dict:
    """Mark the winning grid point per (cell, scheme).

    Toy grids select per dataset cell. CSV grids with tuning cells select
    one (alpha, architecture) per scheme by the mean metric over the
    tuning cells, then apply it to every evaluation cell.
    """
    metric = config.selection_metric
    ok = [r for r in records if r.get("status") == "ok"]
    selected: set[str] = set()
    kind = config.dataset.get("kind", "toy")
    has_tuning = any(r["cell"].get("role") == "tuning" for r in ok)
    if kind == "csv" and has_tuning:
        by_combo: dict[tuple, list[float]] = {}
        for r in ok:
            if r["cell"].get("role") == "tuning":
                combo = (r["scheme"], r["alpha_index"], r["arch_index"])
                by_combo.setdefault(combo, []).append(_metric_value(r, metric))
        best: dict[str, tuple] = {}
        for (scheme, ai, ki), vals in sorted(by_combo.items()):
            mean = float(np.mean(vals))
            if scheme not in best or mean < best[scheme][0]:
                best[scheme] = (mean, ai, ki)
        for r in ok:
            if r["cell"].get("role") == "evaluation":
                choice = best.get(r["scheme"])
                if choice and (r["alpha_index"], r["arch_index"]) == choice[1:]:
                    selected.add(r["key"])
    else:
        groups: dict[tuple, list[dict]] = {}
        for r in ok:
            groups.setdefault((r["cell"]["cell_id"], r["scheme"]), []).append(r)
        for group in groups.values():
            winner = min(group, key=lambda r: _metric_value(r, metric))
            if np.isfinite(_metric_value(winner, metric)):
                selected.add(winner["key"])
    return {"metric": metric, "selected": sorted(selected)}


def run_experiment(
    config: ExperimentConfig, out_dir: str, workers: int = 1
) -> list[dict]:
    """Execute the grid (resuming any existing records) and persist the
    selection summary. Returns all records."""
    os.makedirs(out_dir, exist_ok=True)
    doc = config.to_dict()
    chash = config_hash(doc)
    cfg_path = os.path.join(out_dir, "config.json")
    if os.path.exists(cfg_path):
        with open(cfg_path, "r", encoding="utf-8") as fh:
            existing = json.load(fh)
        if existing.get("hash") != chash:
            raise ValueError(
                f"{out_dir} already holds records for a different config "
                f"(hash {existing.get('hash')}, new {chash})"
            )
    else:
        _atomic_json(cfg_path, {"hash": chash, "config": doc})

    cells = build_cells(config)
    payloads = [(doc, cell.to_dict(), out_dir) for cell in cells]
    if workers > 1 and len(payloads) > 1:
        with multiprocessing.Pool(processes=workers) as pool:
            list(pool.imap_unordered(_run_cell_payload, payloads))
    else:
        for payload in payloads:
            _run_cell_payload(payload)

    records = load_records(out_dir)
    selection = select_records(records, config)
    _atomic_json(os.path.join(out_dir, "selection.json"), selection)
    return records
