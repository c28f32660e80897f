"""Figure builders over the harness CSV/JSON export contracts.

Strictly file-to-file: rows come from accuracy.csv / policies.csv, per-link
vectors from the simulate/predict JSON documents.  Five figure kinds:
accuracy_vs_load, queue_vs_load, dutycycle_vs_load, perlink_scatter, and
queue_vs_overload.  Aggregations (medians, 25/75 bands, percent change vs
the baseline policy) are recomputed from per-instance rows here, so charts
stay consistent with any downstream re-aggregation of the same files.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "twinplots"   # deterministic SVG ids

FIGURE_KINDS = (
    "accuracy_vs_load",
    "queue_vs_load",
    "dutycycle_vs_load",
    "perlink_scatter",
    "queue_vs_overload",
)

_POLICY_STYLE = {
    "baseline": ("#555555", "o"),
    "priority": ("#1f77b4", "s"),
    "priority_gating": ("#d62728", "^"),
}


class ColumnError(ValueError):
    """A required CSV column is missing."""


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            row = {}
            for key, val in raw.items():
                if val in ("", None):
                    row[key] = None
                    continue
                try:
                    row[key] = float(val)
                except ValueError:
                    row[key] = val
            rows.append(row)
        return rows


def _require(rows: list[dict], columns: list[str], path: str) -> None:
    if not rows:
        return
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise ColumnError(f"{path} is missing required columns: {missing}")


def _save(fig, out_path: str) -> str:
    fig.savefig(out_path, metadata={"Date": None} if out_path.endswith(".svg") else None)
    plt.close(fig)
    return out_path


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    var_a, var_b = (da * da).sum(), (db * db).sum()
    if var_a == 0.0 or var_b == 0.0:
        return None
    return float((da * db).sum() / math.sqrt(var_a * var_b))


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# accuracy_vs_load


def accuracy_series(rows: list[dict]) -> dict:
    """(input_config, rounds) -> {loads, pearson means, rmse means}."""
    series: dict = {}
    for row in rows:
        key = (row["input_config"], int(row["rounds"]))
        series.setdefault(key, {}).setdefault(row["load"], []).append(
            (row["pearson"], row["rmse"])
        )
    out = {}
    for key, by_load in series.items():
        loads = sorted(by_load)
        pearsons = [
            float(np.mean([p for p, _ in by_load[l] if p is not None])) for l in loads
        ]
        rmses = [float(np.mean([r for _, r in by_load[l]])) for l in loads]
        out[key] = {"loads": loads, "pearson": pearsons, "rmse": rmses}
    return out


def plot_accuracy(csv_path: str, out_path: str) -> dict:
    """Pearson (solid, left axis) and RMSE (dashed, right axis) vs load."""
    rows = read_rows(csv_path)
    _require(rows, ["load", "rounds", "input_config", "pearson", "rmse"], csv_path)
    series = accuracy_series(rows)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax2 = ax.twinx()
    if not series:
        warnings.warn(f"{csv_path} has no data rows; rendering empty axes")
    for (config, rounds), data in sorted(series.items()):
        label = f"{config} B, M={rounds}"
        line, = ax.plot(data["loads"], data["pearson"], marker="o", label=label)
        ax2.plot(data["loads"], data["rmse"], marker="x", linestyle="--",
                 color=line.get_color())
    ax.set_xlabel("traffic load")
    ax.set_ylabel("Pearson correlation (solid)")
    ax2.set_ylabel("RMSE (dashed)")
    ax.set_title("Model accuracy vs traffic load")
    if series:
        ax.legend(loc="center right", fontsize=8)
    fig.tight_layout()
    return {"out": _save(fig, out_path), "series": series}


# ---------------------------------------------------------------------------
# queue_vs_load / dutycycle_vs_load


def policy_series(rows: list[dict], metric: str) -> dict:
    """policy -> {loads, median, p25, p75}; plus percent change vs baseline."""
    cells: dict = {}
    for row in rows:
        cells.setdefault(row["policy"], {}).setdefault(row["load"], []).append(row[metric])
    out = {}
    for policy, by_load in cells.items():
        loads = sorted(by_load)
        values = [np.asarray(by_load[l], dtype=np.float64) for l in loads]
        out[policy] = {
            "loads": loads,
            "median": [float(np.median(v)) for v in values],
            "p25": [float(np.percentile(v, 25)) for v in values],
            "p75": [float(np.percentile(v, 75)) for v in values],
        }
    base = out.get("baseline")
    if base:
        for policy, data in out.items():
            data["change_pct"] = [
                100.0 * (m - b) / b if b else 0.0
                for m, b in zip(data["median"], base["median"])
            ]
    return out


def _policy_chart(csv_path: str, out_path: str, metric: str, title: str,
                  ylabel: str, log_scale: bool) -> dict:
    rows = read_rows(csv_path)
    _require(rows, ["load", "policy", metric], csv_path)
    series = policy_series(rows, metric)
    if not series:
        warnings.warn(f"{csv_path} has no data rows; rendering empty axes")
    fig, ax = plt.subplots(figsize=(6, 4))
    # Percent change axis appears once a non-baseline policy can be compared.
    pct_axis = "baseline" in series and len(series) > 1
    ax2 = ax.twinx() if pct_axis or set(series) == {"baseline"} else None
    for policy, data in sorted(series.items()):
        color, marker = _POLICY_STYLE.get(policy, ("#2ca02c", "d"))
        ax.plot(data["loads"], data["median"], marker=marker, color=color, label=policy)
        ax.fill_between(data["loads"], data["p25"], data["p75"], color=color, alpha=0.15)
        if ax2 is not None and "change_pct" in data:
            ax2.plot(data["loads"], data["change_pct"], linestyle=":", color=color,
                     linewidth=1)
    ax.set_xlabel("traffic load")
    ax.set_ylabel(ylabel)
    if log_scale and series:
        ax.set_yscale("symlog")
    if ax2 is not None:
        ax2.set_ylabel("% change vs baseline (dotted)")
    ax.set_title(title)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return {"out": _save(fig, out_path), "series": series, "pct_axis": ax2 is not None}


def plot_queue_vs_load(csv_path: str, out_path: str) -> dict:
    return _policy_chart(
        csv_path, out_path, "max_queue",
        "Worst terminal queue vs traffic load", "max terminal queue length",
        log_scale=True,
    )


def plot_dutycycle_vs_load(csv_path: str, out_path: str) -> dict:
    return _policy_chart(
        csv_path, out_path, "max_duty",
        "Per-instance maximum duty cycle vs traffic load", "max link duty cycle",
        log_scale=False,
    )


def plot_policies(csv_path: str, out_prefix: str) -> dict:
    """Both policy charts; file names derive from the prefix."""
    queue = plot_queue_vs_load(csv_path, f"{out_prefix}_queue.svg")
    duty = plot_dutycycle_vs_load(csv_path, f"{out_prefix}_duty.svg")
    return {"queue": queue, "duty": duty}


# ---------------------------------------------------------------------------
# perlink_scatter / queue_vs_overload


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def plot_perlink(prediction_path: str, simresult_path: str, out_path: str) -> dict:
    """Empirical vs predicted duty cycles with the y=x reference; the
    annotation recomputes Pearson/RMSE from the two vectors."""
    predicted = np.asarray(_load_json(prediction_path)["duty_cycles"], dtype=np.float64)
    empirical = np.asarray(_load_json(simresult_path)["duty_cycles"], dtype=np.float64)
    if len(predicted) == 0 or len(empirical) == 0:
        raise ValueError("per-link vectors must be non-empty")
    if len(predicted) != len(empirical):
        raise ValueError(
            f"link count mismatch: {prediction_path} has {len(predicted)}, "
            f"{simresult_path} has {len(empirical)}"
        )
    corr = pearson(empirical, predicted)
    err = rmse(empirical, predicted)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    top = float(max(predicted.max(), empirical.max(), 1e-6)) * 1.05
    ax.plot([0, top], [0, top], color="#999999", linewidth=1, label="y = x")
    ax.scatter(empirical, predicted, s=14, alpha=0.7, color="#1f77b4")
    corr_text = "undefined" if corr is None else f"{corr:.4f}"
    ax.annotate(f"Pearson {corr_text}\nRMSE {err:.4f}", xy=(0.05, 0.9),
                xycoords="axes fraction", fontsize=9)
    ax.set_xlabel("empirical duty cycle")
    ax.set_ylabel("predicted duty cycle")
    ax.set_title("Per-link duty cycles")
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    return {"out": _save(fig, out_path), "pearson": corr, "rmse": err}


def plot_queue_vs_overload(twin_path: str, simresult_paths: list[str],
                           out_path: str) -> dict:
    """Terminal queue length against the twin's overload index, one series
    per simulation result (e.g. per scheduling policy)."""
    twin = _load_json(twin_path)
    if "overload_index" not in twin:
        raise ColumnError(f"{twin_path} lacks 'overload_index'")
    rho = np.asarray(twin["overload_index"], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 4))
    series = {}
    for path in simresult_paths:
        doc = _load_json(path)
        queues = np.asarray(doc["terminal_queues"], dtype=np.float64)
        if len(queues) != len(rho):
            raise ValueError(f"link count mismatch between {twin_path} and {path}")
        label = doc.get("label") or path.rsplit("/", 1)[-1].removesuffix(".json")
        ax.scatter(rho, queues + 1.0, s=12, alpha=0.6, label=label)
        series[label] = len(queues)
    ax.axvline(1.0, color="#999999", linewidth=1, linestyle="--")
    ax.set_yscale("log")
    ax.set_xlabel("predicted overload index")
    ax.set_ylabel("terminal queue length + 1")
    ax.set_title("Congestion vs predicted overload")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return {"out": _save(fig, out_path), "series": series}


# ---------------------------------------------------------------------------


@dataclass
class FigureSpec:
    """One figure request: kind, input files, output image path."""

    kind: str
    inputs: list[str] = field(default_factory=list)
    out: str = "figure.svg"

    def validate(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; pick from {FIGURE_KINDS}")
        if not self.inputs:
            raise ValueError("at least one input file is required")
        if self.kind == "perlink_scatter" and len(self.inputs) != 2:
            raise ValueError("perlink_scatter needs exactly: prediction.json simresult.json")

    def render(self) -> dict:
        self.validate()
        if self.kind == "accuracy_vs_load":
            return plot_accuracy(self.inputs[0], self.out)
        if self.kind == "queue_vs_load":
            return plot_queue_vs_load(self.inputs[0], self.out)
        if self.kind == "dutycycle_vs_load":
            return plot_dutycycle_vs_load(self.inputs[0], self.out)
        if self.kind == "perlink_scatter":
            return plot_perlink(self.inputs[0], self.inputs[1], self.out)
        twins, sims = [], []
        for path in self.inputs:
            (twins if "overload_index" in _load_json(path) else sims).append(path)
        if len(twins) != 1 or not sims:
            raise ValueError(
                "queue_vs_overload needs one twin prediction (with overload_index) "
                "and at least one simulation result"
            )
        return plot_queue_vs_overload(twins[0], sims, self.out)
