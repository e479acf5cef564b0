"""Turn a directory of run CSVs into SVG charts and summary tables."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import svg

METRICS = ("value", "entropy_state", "entropy_marginal")
TITLES = {"value": "Policy value", "entropy_state": "Policy entropy (per state)",
          "entropy_marginal": "Policy entropy (action histogram)"}


class ReportError(RuntimeError):
    pass


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def discover_runs(metrics_dir) -> dict:
    """{agent: {seed: run_dir}} for every ``<agent>/seed_<n>/metrics.csv``."""
    root = Path(metrics_dir)
    runs = defaultdict(dict)
    for m in sorted(root.glob("*/seed_*/metrics.csv")):
        run_dir = m.parent
        seed = int(run_dir.name.split("_", 1)[1])
        runs[run_dir.parent.name][seed] = run_dir
    if not runs:
        raise ReportError(f"no runs found under {root}")
    return {agent: dict(sorted(seeds.items())) for agent, seeds in sorted(runs.items())}


def load_run(run_dir):
    rows = _read_csv(Path(run_dir) / "metrics.csv")
    hist = defaultdict(dict)
    hpath = Path(run_dir) / "histograms.csv"
    if hpath.exists():
        for row in _read_csv(hpath):
            hist[int(row["step"])][int(row["action"])] = int(row["count"])
    hists = {step: [bins[a] for a in sorted(bins)] for step, bins in sorted(hist.items())}
    meta_path = Path(run_dir) / "run.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return rows, hists, meta


def _mean_curve(runs_rows, metric):
    """Mean across seeds at the steps every seed reached."""
    by_step = defaultdict(list)
    for rows in runs_rows:
        for row in rows:
            by_step[int(row["step"])].append(float(row[metric]))
    n = len(runs_rows)
    steps = [s for s in sorted(by_step) if len(by_step[s]) == n]
    return steps, [repr(float(np.mean(by_step[s]))) for s in steps]


def pick_checkpoints(steps, n=5):
    steps = sorted(steps)
    if len(steps) <= n:
        return steps
    idx = np.linspace(0, len(steps) - 1, n).round().astype(int)
    return [steps[i] for i in sorted(set(idx))]


def render_report(metrics_dir, out_dir) -> dict:
    """Write charts, ``mean_curves.csv``, ``summary.csv`` and ``summary.md``.

    Returns a dict listing the files written.
    """
    runs = discover_runs(metrics_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = {agent: {seed: load_run(d) for seed, d in seeds.items()}
            for agent, seeds in runs.items()}
    written = []

    mean_rows = []
    for metric in METRICS:
        series = []
        for i, (agent, seeds) in enumerate(data.items()):
            color = svg.PALETTE[i % len(svg.PALETTE)]
            for seed, (rows, _, _) in seeds.items():
                series.append({"label": f"{agent} seed {seed}", "color": color,
                               "opacity": 0.25, "width": 1, "legend": False,
                               "xs": [r["step"] for r in rows], "ys": [r[metric] for r in rows]})
            steps, means = _mean_curve([rows for rows, _, _ in seeds.values()], metric)
            series.append({"label": f"{agent} (mean of {len(seeds)})", "color": color,
                           "xs": [str(s) for s in steps], "ys": means})
            mean_rows += [(agent, s, metric, m) for s, m in zip(steps, means)]
        path = out / f"{metric}.svg"
        path.write_text(svg.line_chart(series, TITLES[metric], "interactions", metric),
                        encoding="utf-8")
        written.append(path)

    with open(out / "mean_curves.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["agent", "step", "metric", "mean"])
        w.writerows(mean_rows)
    written.append(out / "mean_curves.csv")

    for agent, seeds in data.items():
        seed, (rows, hists, _) = next(iter(seeds.items()))
        if not hists:
            continue
        chosen = pick_checkpoints(hists)
        top = max(max(hists[s]) for s in chosen) or 1
        for kind in ("sorted", "unsorted"):
            panels = []
            for step in chosen:
                counts = hists[step]
                if kind == "sorted":
                    counts = sorted(counts, reverse=True)
                panels.append((f"step {step}", counts))
            title = f"{agent} (seed {seed}) {kind} action-selection histograms"
            path = out / f"hist_{kind}_{agent}.svg"
            path.write_text(svg.bar_panels(panels, title, ymax=top), encoding="utf-8")
            written.append(path)

    summary = []
    for agent, seeds in data.items():
        for seed, (rows, _, meta) in seeds.items():
            last = rows[-1] if rows else {}
            summary.append({
                "agent": agent, "seed": seed, "status": meta.get("status", "unknown"),
                "final_step": last.get("step", ""),
                "final_value": last.get("value", ""),
                "final_entropy_state": last.get("entropy_state", ""),
                "final_entropy_marginal": last.get("entropy_marginal", ""),
                "min_entropy_state": min((r["entropy_state"] for r in rows), key=float, default=""),
                "min_entropy_marginal": min((r["entropy_marginal"] for r in rows), key=float,
                                            default=""),
            })
    cols = list(summary[0])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    written.append(out / "summary.csv")

    header = Path(metrics_dir) / "experiment.json"
    lines = ["# Run summary", ""]
    if header.exists():
        h = json.loads(header.read_text())
        c = h.get("config", {})
        lines += [f"_{h.get('note', '')}_", "",
                  f"- environment: `{json.dumps(c.get('env', {}), sort_keys=True)}`",
                  f"- interactions per run: {c.get('total_interactions')}",
                  f"- checkpoint every: {c.get('eval_every')}",
                  f"- eval-set size: {c.get('eval_size')}", ""]
    lines.append("| " + " | ".join(cols) + " |")
    lines.append("|" + "---|" * len(cols))
    for row in summary:
        lines.append("| " + " | ".join(str(row[c]) for c in cols) + " |")
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(out / "summary.md")
    return {"files": [str(p) for p in written], "rows": len(summary)}
