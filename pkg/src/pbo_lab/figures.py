"""Plot-data extraction for the four standard result figures.

Each figure reads previously written run directories, emits a tidy CSV with
one row per (method, iteration, seed) observation, and renders a simple SVG
line chart. Figures never recompute results; missing runs are reported as
validation errors listing what is absent.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ConfigError

__all__ = ["FIGURES", "make_figure", "discover_runs"]

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")


def discover_runs(results_dir) -> list[dict]:
    """All per-seed runs below a results directory, parsed from run.json."""
    results_dir = Path(results_dir)
    runs = []
    for run_json in sorted(results_dir.glob("**/run.json")):
        with open(run_json) as fh:
            info = json.load(fh)
        seed_dir = run_json.parent
        metrics = _read_csv_rows(seed_dir / "metrics.csv")
        runs.append(
            {
                "dir": seed_dir,
                "seed": info["seed"],
                "method": info["method"],
                "config": info["config"],
                "metrics": metrics,
            }
        )
    return runs


def _read_csv_rows(path) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        return [dict(zip(header, line.strip().split(","))) for line in fh if line.strip()]


def _runs_for_env(runs, environment):
    return [r for r in runs if r["config"]["environment"] == environment]


def _metric_rows(runs):
    rows = []
    for run in runs:
        k_train = run["config"]["bellman_iterations"]
        for rec in run["metrics"]:
            rows.append(
                (run["method"], k_train, int(rec["k"]), float(rec["value"]), run["seed"])
            )
    return rows


def _mean_series(rows):
    """method -> (ks, mean values across seeds)."""
    series = {}
    methods = sorted({(r[0], r[1]) for r in rows})
    for method, k_train in methods:
        ks = sorted({r[2] for r in rows if (r[0], r[1]) == (method, k_train)})
        means = []
        for k in ks:
            vals = [r[3] for r in rows if (r[0], r[1]) == (method, k_train) and r[2] == k]
            means.append(float(np.mean(vals)))
        series[f"{method} (K={k_train})"] = (ks, means)
    return series


def _svg_line_chart(series: dict, title: str, xlabel: str, ylabel: str) -> str:
    width, height, pad = 640, 420, 60
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        xs_all, ys_all = [0, 1], [0, 1]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 16}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="18" y="{height / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:.1f})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10" '
        f'text-anchor="middle">{x_lo:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" '
        f'text-anchor="middle">{x_hi:.3g}</text>',
        f'<text x="{pad - 6}" y="{height - pad}" font-size="10" '
        f'text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{pad - 6}" y="{pad + 4}" font-size="10" text-anchor="end">{y_hi:.3g}</text>',
    ]
    for i, (label, (xs, ys)) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>'
        )
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = pad + 16 * i
        parts.append(f'<rect x="{width - pad - 150}" y="{ly - 9}" width="12" height="3" fill="{color}"/>')
        parts.append(f'<text x="{width - pad - 132}" y="{ly - 4}" font-size="11">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _write(path: Path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _write_rows(path: Path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _require(runs, what: str):
    if not runs:
        raise ConfigError("figure", f"missing runs: {what}")


def fig_error_curves(results_dir, out_dir, environment, figure_name, value_column):
    runs = _runs_for_env(discover_runs(results_dir), environment)
    _require(runs, f"no {environment} runs under {results_dir}")
    rows = _metric_rows(runs)
    csv_path = Path(out_dir) / f"{figure_name}.csv"
    _write_rows(csv_path, ["method", "K", "k", value_column, "seed"], rows)
    ylabel = {"l2_error": "distance to optimum", "return": "discounted return"}[value_column]
    svg = _svg_line_chart(
        _mean_series(rows), f"{environment}: {ylabel} vs iterations", "iteration k", ylabel
    )
    svg_path = Path(out_dir) / f"{figure_name}.svg"
    _write(svg_path, svg)
    return [csv_path, svg_path]


def fig_parameter_trajectories(results_dir, out_dir):
    """Operator-parameter paths in the 2-d quadratic coefficient plane."""
    runs = _runs_for_env(discover_runs(results_dir), "lqr")
    _require(runs, f"no lqr runs under {results_dir}")
    rows = []
    series = {}
    methods = sorted({r["method"] for r in runs})
    for method in methods:
        candidates = [r for r in runs if r["method"] == method]
        run = min(candidates, key=lambda r: r["seed"])  # one representative path
        snaps = np.array(
            [
                [float(rec["w_0"]), float(rec["w_1"])]
                for rec in _read_csv_rows(run["dir"] / "snapshots.csv")
            ]
        )
        for point, (a, b) in enumerate(snaps):
            rows.append((method, point, "%.17g" % a, "%.17g" % b))
        series[method] = (list(snaps[:, 0]), list(snaps[:, 1]))

    from .environments import LqrEnv
    from .evaluation import lqr_optimal_params

    cfg0 = runs[0]["config"]
    optimum = lqr_optimal_params(LqrEnv(gamma=cfg0["gamma"]), fixed_aa=cfg0["fixed_aa"])
    rows.append(("optimal", 0, "%.17g" % optimum[0], "%.17g" % optimum[1]))
    series["optimal"] = ([optimum[0]], [optimum[1]])

    csv_path = Path(out_dir) / "fig7.csv"
    _write_rows(csv_path, ["method", "point", "coef_ss", "coef_sa"], rows)
    svg_path = Path(out_dir) / "fig7.svg"
    _write(
        svg_path,
        _svg_line_chart(
            series, "parameter-space trajectories", "state coefficient", "cross coefficient"
        ),
    )
    return [csv_path, svg_path]


FIGURES = {
    "fig4": lambda results, out: fig_error_curves(results, out, "chain_walk", "fig4", "l2_error"),
    "fig6": lambda results, out: fig_error_curves(results, out, "lqr", "fig6", "l2_error"),
    "fig7": fig_parameter_trajectories,
    "fig8": lambda results, out: fig_error_curves(results, out, "car_on_hill", "fig8", "return"),
}


def make_figure(name: str, results_dir, out_dir) -> list[Path]:
    if name not in FIGURES:
        raise ConfigError("figure", f"unknown figure {name!r}; choose from {sorted(FIGURES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return FIGURES[name](results_dir, out_dir)
