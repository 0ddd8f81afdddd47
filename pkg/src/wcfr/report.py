"""Report emission: long-format and aggregated CSVs, a JSON summary, and
rendered figures for the benchmark curves.

Aggregation is mean and standard error (sample std / sqrt(reps)) over the
selected record per (cell, scheme), grouped by scheme and, when present,
the generator's imbalance and confounding coordinates.
"""

from __future__ import annotations

import json
import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

LONG_METRICS = (
    "sqrt_pehe_p",
    "pehe_p",
    "ate_error_p",
    "ate_g_hat",
    "ate_error_g",
    "ate_dr",
    "ate_error_dr",
    "dr_shift",
    "pehe_nn",
)

AGG_METRICS = ("sqrt_pehe_p", "ate_error_p", "ate_error_g", "ate_error_dr", "pehe_nn")


def records_frame(records: list[dict], selected: Optional[set] = None) -> pd.DataFrame:
    """Flatten records into a long-format table, one row per record."""
    rows = []
    for r in records:
        cell = r.get("cell", {})
        row = {
            "key": r.get("key"),
            "cell_id": cell.get("cell_id"),
            "role": cell.get("role", "evaluation"),
            "gamma": cell.get("gamma"),
            "omega": cell.get("omega"),
            "rep": cell.get("rep"),
            "scheme": r.get("scheme"),
            "alpha": r.get("alpha"),
            "arch_index": r.get("arch_index"),
            "status": r.get("status"),
            "error": r.get("error"),
            "seed": r.get("seed"),
            "wall_time": r.get("wall_time"),
            "selected": bool(selected and r.get("key") in selected),
        }
        sel = r.get("selection", {})
        row["val_loss"] = sel.get("val_loss")
        row["pehe_nn_val"] = sel.get("pehe_nn_val")
        row["oracle_pehe_val"] = sel.get("oracle_pehe_val")
        ev = r.get("eval") or {}
        for m in LONG_METRICS:
            row[m] = ev.get(m)
        rows.append(row)
    return pd.DataFrame(rows)


def aggregate_frame(df: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error of the selected records per group."""
    picked = df[df["selected"] & (df["status"] == "ok")]
    if picked.empty:
        return pd.DataFrame()
    group_cols = ["scheme"]
    for col in ("gamma", "omega"):
        if picked[col].notna().any():
            group_cols.append(col)
    out_rows = []
    for keys, grp in picked.groupby(group_cols, dropna=False):
        keys = keys if isinstance(keys, tuple) else (keys,)
        row = dict(zip(group_cols, keys))
        row["reps"] = len(grp)
        for m in AGG_METRICS:
            vals = grp[m].dropna().to_numpy(dtype=float)
            if vals.size:
                row[f"{m}_mean"] = float(vals.mean())
                row[f"{m}_stderr"] = (
                    float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
                )
        out_rows.append(row)
    return pd.DataFrame(out_rows).sort_values(group_cols).reset_index(drop=True)


def _write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


SCHEME_COLORS = {
    "uniform": "tab:gray",
    "ipw": "tab:red",
    "truncipw": "tab:green",
    "mw": "tab:blue",
    "ow": "tab:orange",
}


def _curve_figure(agg: pd.DataFrame, omega, metric: str, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    sub = agg if omega is None else agg[agg["omega"] == omega]
    for scheme, grp in sub.groupby("scheme"):
        grp = grp.sort_values("gamma")
        x = grp["gamma"].to_numpy(dtype=float)
        y = grp[f"{metric}_mean"].to_numpy(dtype=float)
        err = grp[f"{metric}_stderr"].to_numpy(dtype=float)
        color = SCHEME_COLORS.get(scheme)
        ax.plot(x, y, marker="o", label=scheme, color=color)
        ax.fill_between(x, y - err, y + err, alpha=0.2, color=color)
    ax.set_xlabel("imbalance parameter")
    ax.set_ylabel(metric.replace("_", " "))
    title = "selected models" if omega is None else f"confounding overlap = {omega:g}"
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _ablation_figure(long_df: pd.DataFrame, omega, path: str) -> None:
    """Best-alpha improvement over alpha = 0, per scheme, against imbalance."""
    ok = long_df[(long_df["status"] == "ok") & long_df["sqrt_pehe_p"].notna()]
    sub = ok if omega is None else ok[ok["omega"] == omega]
    if sub.empty:
        return
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for scheme, grp in sub.groupby("scheme"):
        gammas, deltas = [], []
        for gamma, cell_grp in grp.groupby("gamma"):
            per_cell = []
            for _, one in cell_grp.groupby("cell_id"):
                base = one[one["alpha"] == 0.0]
                chosen = one[one["selected"]]
                if base.empty or chosen.empty:
                    continue
                per_cell.append(
                    float(base["sqrt_pehe_p"].iloc[0]) - float(chosen["sqrt_pehe_p"].iloc[0])
                )
            if per_cell:
                gammas.append(float(gamma))
                deltas.append(float(np.mean(per_cell)))
        if gammas:
            order = np.argsort(gammas)
            ax.plot(
                np.asarray(gammas)[order],
                np.asarray(deltas)[order],
                marker="s",
                label=scheme,
                color=SCHEME_COLORS.get(scheme),
            )
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("imbalance parameter")
    ax.set_ylabel("sqrt PEHE improvement from the IPM term")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _bar_figure(agg: pd.DataFrame, metric: str, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    schemes = agg["scheme"].tolist()
    means = agg[f"{metric}_mean"].to_numpy(dtype=float)
    errs = agg.get(f"{metric}_stderr")
    errs = errs.to_numpy(dtype=float) if errs is not None else None
    colors = [SCHEME_COLORS.get(s, "tab:blue") for s in schemes]
    ax.bar(schemes, means, yerr=errs, capsize=4, color=colors)
    ax.set_ylabel(metric.replace("_", " "))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(records: list[dict], selection: dict, out_dir: str) -> dict:
    """Write long.csv, aggregate.csv, summary.json and figures; returns the
    emitted file map."""
    if not records:
        raise ValueError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    selected = set(selection.get("selected", []))
    long_df = records_frame(records, selected)
    agg = aggregate_frame(long_df)

    paths = {
        "long_csv": os.path.join(out_dir, "long.csv"),
        "aggregate_csv": os.path.join(out_dir, "aggregate.csv"),
        "summary_json": os.path.join(out_dir, "summary.json"),
    }
    _write_csv(long_df, paths["long_csv"])
    _write_csv(agg, paths["aggregate_csv"])

    figures = []
    if not agg.empty and "sqrt_pehe_p_mean" in agg.columns:
        if "gamma" in agg.columns and agg["gamma"].notna().any():
            omegas = sorted(agg["omega"].dropna().unique()) if "omega" in agg.columns else [None]
            for omega in omegas or [None]:
                tag = "all" if omega is None else f"omega{omega:g}"
                fp = os.path.join(fig_dir, f"pehe_vs_imbalance_{tag}.png")
                _curve_figure(agg, omega, "sqrt_pehe_p", fp)
                figures.append(fp)
                fa = os.path.join(fig_dir, f"ipm_ablation_{tag}.png")
                _ablation_figure(long_df, omega, fa)
                if os.path.exists(fa):
                    figures.append(fa)
        else:
            fp = os.path.join(fig_dir, "per_scheme.png")
            _bar_figure(agg, "sqrt_pehe_p", fp)
            figures.append(fp)
    paths["figures"] = figures

    summary = {
        "n_records": len(records),
        "n_ok": int((long_df["status"] == "ok").sum()),
        "n_failed": int((long_df["status"] == "failed").sum()),
        "n_selected": len(selected),
        "selection_metric": selection.get("metric"),
        "files": {k: v for k, v in paths.items() if k != "figures"},
        "figures": figures,
    }
    with open(paths["summary_json"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return paths
