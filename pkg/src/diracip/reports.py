"""Report files: CSV tables, JSON summaries and log-log SVG plots.

Everything written here is deterministic: floats use ``repr``, keys are
sorted, and plots carry no timestamps unless one is passed explicitly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .fitting import loglog_slope


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return repr(v)
    return str(v)


def rows_to_csv(rows, columns, config_hash):
    """CSV text with ``config_hash`` as the last column of every row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(columns) + ["config_hash"])
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns] + [config_hash])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def summary_json(experiment, config_hash, rows, passed, checks=None, extra=None):
    doc = {"experiment": experiment, "config_hash": config_hash, "rows": rows, "pass": bool(passed)}
    if checks is not None:
        doc["checks"] = checks
    if extra:
        doc.update(extra)
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


# --------------------------------------------------------------------------
# plots


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    fit: bool = True


@dataclass
class Plot:
    name: str
    title: str
    series: list = field(default_factory=list)
    xlabel: str = "h"
    ylabel: str = ""


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _decades(lo, hi):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return a, b


def loglog_svg(plot: Plot, width=520, height=380, timestamp=None):
    """Log-log scatter of each series with its least-squares line; slopes in the legend."""
    pts = [(np.asarray(s.x, float), np.asarray(s.y, float)) for s in plot.series]
    ok = [(x > 0) & (y > 0) & np.isfinite(y) for x, y in pts]
    xs = np.concatenate([x[m] for (x, _), m in zip(pts, ok)] or [np.array([1.0])])
    ys = np.concatenate([y[m] for (_, y), m in zip(pts, ok)] or [np.array([1.0])])
    if xs.size == 0:
        xs, ys = np.array([0.1, 1.0]), np.array([0.1, 1.0])
    x0, x1 = _decades(xs.min(), xs.max())
    y0, y1 = _decades(ys.min(), ys.max())
    ml, mr, mt, mb = 70, 170, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + ph - (math.log10(v) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{ml + pw / 2:.1f}" y="20" text-anchor="middle" font-size="13">{_esc(plot.title)}</text>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(plot.xlabel)}</text>',
           f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(plot.ylabel)}</text>']
    for e in range(x0, x1 + 1):
        px = ml + (e - x0) / (x1 - x0) * pw
        out.append(f'<line x1="{px:.1f}" y1="{mt}" x2="{px:.1f}" y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{px:.1f}" y="{mt + ph + 16}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        py = mt + ph - (e - y0) / (y1 - y0) * ph
        out.append(f'<line x1="{ml}" y1="{py:.1f}" x2="{ml + pw}" y2="{py:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{py + 4:.1f}" text-anchor="end">1e{e}</text>')
    for i, (s, (x, y), m) in enumerate(zip(plot.series, pts, ok)):
        c = _COLORS[i % len(_COLORS)]
        for a, b in zip(x[m], y[m]):
            out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="3" fill="{c}"/>')
        label = s.label
        if s.fit and m.sum() >= 2:
            k = loglog_slope(x[m], y[m])
            c0 = np.mean(np.log(y[m]) - k * np.log(x[m]))
            a, b = x[m].min(), x[m].max()
            out.append(f'<line x1="{X(a):.2f}" y1="{Y(math.exp(c0) * a**k):.2f}" x2="{X(b):.2f}" '
                       f'y2="{Y(math.exp(c0) * b**k):.2f}" stroke="{c}"/>')
            label = f"{label} (slope {k:.3f})"
        ly = mt + 14 + 16 * i
        out.append(f'<circle cx="{ml + pw + 12}" cy="{ly - 4}" r="3" fill="{c}"/>')
        out.append(f'<text x="{ml + pw + 20}" y="{ly}">{_esc(label)}</text>')
    if timestamp is not None:
        out.append(f'<text x="{width - 6}" y="{height - 4}" text-anchor="end" font-size="9">{_esc(timestamp)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
