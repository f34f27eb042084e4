"""Aggregate trace CSVs across seeds, fit slopes and draw SVG line charts."""

import csv
import glob
import math
import os
import warnings
from collections import defaultdict

import numpy as np

from ..evaluation import read_trace, slope_fit

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def load_traces(trace_dir):
    """``{algo: [records of one seed, ...]}`` for every trace file in the directory."""
    runs = defaultdict(list)
    for path in sorted(glob.glob(os.path.join(trace_dir, "*.csv"))):
        name = os.path.basename(path)
        if name in ("aggregate.csv", "slopes.csv", "rstar.csv"):
            continue
        try:
            recs = read_trace(path)
        except (ValueError, StopIteration):
            continue
        if recs:
            runs[recs[0].algo].append(recs)
    return runs


def _metric_table(recs):
    m = len(recs[0].risks)
    cols = {"mer": [r.mer for r in recs], "mwer": [r.mwer for r in recs]}
    for i in range(m):
        cols[f"risk_{i + 1}"] = [r.risks[i] for r in recs]
        cols[f"excess_{i + 1}"] = [r.excess[i] for r in recs]
    return np.array([r.t for r in recs], dtype=float), {k: np.array(v) for k, v in cols.items()}


def aggregate(seed_runs, algo=""):
    """Mean and standard error across seeds on a common checkpoint grid.

    When the seeds disagree on their checkpoints, every run is resampled
    (linearly in ``log t``) onto the coarsest grid.
    """
    tables = [_metric_table(r) for r in seed_runs]
    grids = [t for t, _ in tables]
    base = min(grids, key=len)
    if any(len(g) != len(base) or not np.array_equal(g, base) for g in grids):
        warnings.warn(f"{algo}: checkpoint grids differ across seeds; resampling to the coarsest")
    out = {}
    for key in tables[0][1]:
        vals = np.array([cols[key] if np.array_equal(t, base)
                         else np.interp(np.log(base), np.log(t), cols[key]) for t, cols in tables])
        n = len(vals)
        # centre on the first seed so identical runs give an exact mean and zero SE
        dev = vals - vals[0]
        mean = vals[0] + dev.mean(axis=0)
        se = dev.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(base))
        out[key] = (mean, se)
    return base, out, len(tables)


def _slope(t, v):
    lo = max(10.0, float(t[0]))
    keep = t >= lo
    if keep.sum() < 10:
        return float("nan"), lo
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            return slope_fit(t[keep], v[keep]), lo
        except ValueError:
            return float("nan"), lo


def _fmt(x):
    return "{:.9g}".format(float(x))


def cmd_report(trace_dir):
    runs = load_traces(trace_dir)
    if not runs:
        raise FileNotFoundError(f"no trace files in {trace_dir}")
    agg = {algo: aggregate(seed_runs, algo) for algo, seed_runs in sorted(runs.items())}

    keys = list(next(iter(agg.values()))[1].keys())
    with open(os.path.join(trace_dir, "aggregate.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["algo", "t", "n_seeds"] + [f"{k}_{s}" for k in keys for s in ("mean", "se")])
        for algo, (t, cols, n) in agg.items():
            for j, tj in enumerate(t):
                row = [algo, int(tj), n]
                for k in keys:
                    mean, se = cols.get(k, (np.full(len(t), np.nan),) * 2)
                    row += [_fmt(mean[j]), _fmt(se[j])]
                wr.writerow(row)

    slopes = []
    with open(os.path.join(trace_dir, "slopes.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["algo", "metric", "t_min", "t_max", "slope"])
        for algo, (t, cols, _) in agg.items():
            for k in ("mer", "mwer"):
                s, lo = _slope(t, cols[k][0])
                slopes.append((algo, k, s))
                wr.writerow([algo, k, int(lo), int(t[-1]), _fmt(s)])

    charts = []
    for k in ("mer", "mwer"):
        series = {a: (t, cols[k][0]) for a, (t, cols, _) in agg.items()}
        for log in (True, False):
            name = f"{k}_{'loglog' if log else 'linear'}.svg"
            with open(os.path.join(trace_dir, name), "w", encoding="utf-8") as fh:
                fh.write(line_chart(series, k.upper(), log))
            charts.append(name)
    return agg, slopes, charts


def line_chart(series, ylabel, log=True, width=640, height=400):
    """Self-contained SVG with one polyline per series."""
    pad_l, pad_r, pad_t, pad_b = 70, 150, 20, 45
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    pts = {}
    for name, (t, v) in series.items():
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        ok = np.isfinite(v) & (t > 0)
        if log:
            ok &= v > 0
        pts[name] = (t[ok], v[ok])
    xs = np.concatenate([p[0] for p in pts.values()] or [np.ones(1)])
    ys = np.concatenate([p[1] for p in pts.values()] or [np.ones(1)])
    if len(xs) == 0:
        xs, ys = np.ones(1), np.ones(1)
    fx = np.log10 if log else (lambda a: np.asarray(a, dtype=float))
    x0, x1 = float(fx(xs).min()), float(fx(xs).max())
    y0, y1 = float(fx(ys).min()), float(fx(ys).max())
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1

    def sx(a):
        return pad_l + (fx(a) - x0) / (x1 - x0) * pw

    def sy(a):
        return pad_t + ph - (fx(a) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for k in range(5):
        fxv = x0 + (x1 - x0) * k / 4
        fyv = y0 + (y1 - y0) * k / 4
        px = pad_l + pw * k / 4
        py = pad_t + ph - ph * k / 4
        xl = 10 ** fxv if log else fxv
        yl = 10 ** fyv if log else fyv
        out.append(f'<line x1="{px:.1f}" y1="{pad_t + ph}" x2="{px:.1f}" y2="{pad_t + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{px:.1f}" y="{pad_t + ph + 16}" text-anchor="middle">{xl:.3g}</text>')
        out.append(f'<line x1="{pad_l - 4}" y1="{py:.1f}" x2="{pad_l}" y2="{py:.1f}" stroke="#444"/>')
        out.append(f'<text x="{pad_l - 6}" y="{py + 4:.1f}" text-anchor="end">{yl:.3g}</text>')
    out.append(f'<text x="{pad_l + pw / 2}" y="{height - 8}" text-anchor="middle">'
               f'iteration t{" (log)" if log else ""}</text>')
    out.append(f'<text x="14" y="{pad_t + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {pad_t + ph / 2})">{ylabel}{" (log)" if log else ""}</text>')
    for j, (name, (t, v)) in enumerate(pts.items()):
        color = COLORS[j % len(COLORS)]
        if len(t):
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, v))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = pad_t + 14 + 16 * j
        out.append(f'<line x1="{width - pad_r + 10}" y1="{ly}" x2="{width - pad_r + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad_r + 34}" y="{ly + 4}">{name}</text>')
    out.append("</svg>\n")
    return "\n".join(out)
