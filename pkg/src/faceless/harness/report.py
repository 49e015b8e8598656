"""CSV / JSON result tables and plot-data files."""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from pathlib import Path

from ..errors import FacelessError
from .pipeline import ExperimentResult

CSV_COLUMNS = ("scenario", "tau", "obfuscation", "domain_mode", "mode", "accuracy", "naive",
               "eer_accuracy", "nodes", "edges_pruned", "seconds")


class ReportError(FacelessError, OSError):
    exit_code = 4


def summary_row(result: ExperimentResult) -> dict:
    cfg = result.config
    scenario = cfg["scenario"]
    return {
        "scenario": scenario,
        "tau": cfg["tau"] if scenario == "S1" else "",
        "obfuscation": "visible" if scenario in ("S0", "S1") else cfg["obfuscation"],
        "domain_mode": cfg["domain"],
        "mode": cfg["mode"],
        "accuracy": result.accuracy,
        "naive": result.naive_baseline_accuracy,
        "eer_accuracy": "" if result.eer_accuracy is None else result.eer_accuracy,
        "nodes": result.graph.get("nodes"),
        "edges_pruned": result.graph.get("after_negative_pruning") if result.graph.get(
            "after_negative_pruning") is not None else result.graph.get("after_album_pruning"),
        "seconds": round(sum(result.timings.values()), 3),
    }


def plot_data(results) -> dict:
    """Accuracy series for external plotting.

    The x axis is tau when every result is an S1 run with varying tau, the
    scenario otherwise. One series per remaining setting combination.
    """
    rows = [summary_row(r) for r in results]
    tau_sweep = all(r["scenario"] == "S1" for r in rows) and len({r["tau"] for r in rows}) > 1
    x_name = "tau" if tau_sweep else "scenario"
    xs = []
    series = OrderedDict()
    for row in rows:
        x = row["tau"] if tau_sweep else row["scenario"]
        if x not in xs:
            xs.append(x)
        if tau_sweep:
            name = f"{row['mode']}/{row['domain_mode']}"
        else:
            name = f"{row['mode']}/{row['domain_mode']}/{row['obfuscation']}"
        series.setdefault(name, {})[x] = row["accuracy"]
    return {
        "x_label": x_name,
        "x": xs,
        "series": {name: [pts.get(x) for x in xs] for name, pts in series.items()},
    }


def emit_report(results, path, format="csv") -> Path:
    """Write a results table and a ``<stem>.plot.json`` companion next to it."""
    path = Path(path)
    results = list(results)
    try:
        if format == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
                writer.writeheader()
                for r in results:
                    writer.writerow(summary_row(r))
        elif format == "json":
            with open(path, "w") as fh:
                json.dump([r.to_dict() for r in results], fh, sort_keys=True, indent=1)
        else:
            raise ReportError(f"unknown report format {format!r}")
        plot_path = path.with_suffix(".plot.json")
        with open(plot_path, "w") as fh:
            json.dump(plot_data(results), fh, indent=1)
    except OSError as exc:
        raise ReportError(f"cannot write report to {path}: {exc}") from exc
    return plot_path


def load_results(path) -> list:
    path = Path(path)
    data = json.loads(path.read_text())
    if isinstance(data, dict):
        data = [data]
    return [ExperimentResult.from_dict(d) for d in data]
