"""Merge finished run directories into plot-ready CSV series: the per-cycle
fuel-economy learning curve and the final evaluation timeseries."""

from __future__ import annotations

import csv
from pathlib import Path


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty csv")
    return rows[0], rows[1:]


def _run_label(run_dir: Path) -> str:
    cfg_path = run_dir / "config.cfg"
    if cfg_path.exists():
        for line in cfg_path.read_text().splitlines():
            if line.startswith("agent"):
                return line.split("=", 1)[1].strip()
    return run_dir.name


def export_plot_data(run_dirs: list[Path], out_dir: Path) -> list[Path]:
    """Emit learning_curve and timeseries CSVs combining the given runs.

    Learning curve columns: cycle, then mpg_<label> per run plus the first
    run's baseline.  Timeseries columns: time, then velocity/gear/torque per
    label (from each run's final greedy-evaluation step log).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = []
    curves = {}
    steps = {}
    baseline = None
    for run in run_dirs:
        label = _run_label(run)
        if label in curves:
            label = f"{label}_{run.name}"
        labels.append(label)
        header, rows = _read_csv(run / "learning_curve.csv")
        idx = {name: i for i, name in enumerate(header)}
        curves[label] = {int(r[idx["cycle"]]): r[idx["mpg"]] for r in rows}
        if baseline is None and rows:
            baseline = rows[0][idx["baseline_mpg"]]
        steps_path = run / "steps.csv"
        if steps_path.exists():
            s_header, s_rows = _read_csv(steps_path)
            s_idx = {name: i for i, name in enumerate(s_header)}
            steps[label] = [(r[s_idx["time"]], r[s_idx["velocity"]],
                             r[s_idx["gear"]], r[s_idx["torque_applied"]])
                            for r in s_rows]

    written = []
    curve_path = out_dir / "fig_learning_curve.csv"
    all_cycles = sorted(set().union(*(c.keys() for c in curves.values())))
    header = ["cycle"] + [f"mpg_{lb}" for lb in labels] + ["mpg_baseline"]
    lines = [",".join(header)]
    for cyc in all_cycles:
        row = [str(cyc)] + [curves[lb].get(cyc, "") for lb in labels]
        row.append(baseline or "")
        lines.append(",".join(row))
    curve_path.write_text("\n".join(lines) + "\n")
    written.append(curve_path)

    if steps:
        ts_path = out_dir / "fig_timeseries.csv"
        first = next(iter(steps.values()))
        header = ["time"]
        for lb in steps:
            header += [f"velocity_{lb}", f"gear_{lb}", f"torque_{lb}"]
        lines = [",".join(header)]
        for i in range(len(first)):
            row = [first[i][0]]
            for lb in steps:
                row += list(steps[lb][i][1:]) if i < len(steps[lb]) \
                    else ["", "", ""]
            lines.append(",".join(row))
        ts_path.write_text("\n".join(lines) + "\n")
        written.append(ts_path)
    return written
