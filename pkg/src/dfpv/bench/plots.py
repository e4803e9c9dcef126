"""Hand-written SVG 1.1 plots of error versus sample size.

Each plot has a log10 error axis, one median line per estimator and a shaded
interquartile band. Numbers are formatted with ``%.6g`` and series are drawn
in a fixed order, so identical summaries give identical bytes.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Sequence
from xml.sax.saxutils import escape

from .experiment import SummaryRow

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 80, 170, 40, 60
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
FLOOR = 1e-12


def _f(x: float) -> str:
    return "%.6g" % x


def _finite(s: SummaryRow) -> bool:
    return all(math.isfinite(v) for v in (s.median, s.q25, s.q75))


def _log(v: float) -> float:
    return math.log10(max(v, FLOOR))


def render_svg(rows: Sequence[SummaryRow], title: str, ylabel: str = "MSE") -> str:
    """SVG document for one (dgp, metric) group of summary rows."""
    series: Dict[str, List[SummaryRow]] = {}
    for r in rows:
        if _finite(r):
            series.setdefault(r.estimator, []).append(r)
    for pts in series.values():
        pts.sort(key=lambda r: r.size)

    sizes = sorted({r.size for pts in series.values() for r in pts}) or [1]
    lows = [_log(r.q25) for pts in series.values() for r in pts] or [0.0]
    highs = [_log(r.q75) for pts in series.values() for r in pts] or [1.0]
    y0, y1 = math.floor(min(lows)), math.ceil(max(highs))
    if y1 <= y0:
        y1 = y0 + 1
    x0, x1 = math.log10(sizes[0]), math.log10(sizes[-1])
    plot_w, plot_h = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(size: float) -> float:
        if x1 == x0:
            return LEFT + plot_w / 2
        return LEFT + (math.log10(size) - x0) / (x1 - x0) * plot_w

    def py(value: float) -> float:
        return TOP + (y1 - _log(value)) / (y1 - y0) * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_f(WIDTH / 2)}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
    ]
    for e in range(y0, y1 + 1):
        y = py(10.0**e)
        out.append(f'<line x1="{LEFT}" y1="{_f(y)}" x2="{LEFT + plot_w}" y2="{_f(y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_f(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">1e{e}</text>')
    for s in sizes:
        x = px(s)
        out.append(f'<line x1="{_f(x)}" y1="{TOP + plot_h}" x2="{_f(x)}" y2="{TOP + plot_h + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{TOP + plot_h + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{s}</text>')
    out.append(f'<text x="{_f(LEFT + plot_w / 2)}" y="{HEIGHT - 18}" text-anchor="middle" font-family="sans-serif" font-size="12">sample size per stage</text>')
    out.append(
        f'<text x="18" y="{_f(TOP + plot_h / 2)}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {_f(TOP + plot_h / 2)})">{escape(ylabel)} (log scale)</text>'
    )

    for k, (name, pts) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        upper = [(px(r.size), py(r.q75)) for r in pts]
        lower = [(px(r.size), py(r.q25)) for r in reversed(pts)]
        if len(pts) == 1:
            x, yt = upper[0]
            yb = lower[0][1]
            out.append(f'<rect x="{_f(x - 6)}" y="{_f(yt)}" width="12" height="{_f(max(yb - yt, 0.0))}" fill="{color}" fill-opacity="0.2"/>')
        else:
            poly = " ".join(f"{_f(x)},{_f(y)}" for x, y in upper + lower)
            out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_f(px(r.size))},{_f(py(r.median))}" for r in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        for r in pts:
            out.append(f'<circle cx="{_f(px(r.size))}" cy="{_f(py(r.median))}" r="3" fill="{color}"/>')
        ly = TOP + 10 + 18 * k
        lx = LEFT + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(summary: Sequence[SummaryRow], output_dir) -> Dict[str, Path]:
    """Write one SVG per (dgp, metric) found in ``summary``; returns name -> path."""
    groups: Dict[tuple, List[SummaryRow]] = {}
    for r in summary:
        groups.setdefault((r.dgp, r.metric), []).append(r)
    out = Path(output_dir)
    files = {}
    for (dgp, metric), rows in groups.items():
        path = out / f"{dgp}_{metric}.svg"
        label = "squared error" if metric.startswith("ope") else "MSE"
        path.write_text(render_svg(rows, f"{dgp}: {metric}", label))
        files[f"plot:{dgp}_{metric}"] = path
    return files
