"""Minimal self-contained SVG line plots.

Output is a pure function of the input numbers, so regenerating a plot
from the same CSV gives a byte-identical file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#e377c2",
    "#17becf",
    "#7f7f7f",
    "#bcbd22",
)

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=130, top=40, bottom=55)


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    dashed: bool = False


@dataclass
class Plot:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    ylim: tuple | None = None
    markers: list = field(default_factory=list)

    def add(self, *args, **kwargs):
        self.series.append(Series(*args, **kwargs))
        return self

    def render(self):
        return render(self)

    def save(self, path):
        Path(path).write_text(self.render(), encoding="utf-8")


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=6):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _label(v):
    return f"{v:.6g}"


def render(plot: Plot):
    xs, ys = [], []
    for s in plot.series:
        xs.append(np.asarray(s.x, dtype=float))
        for arr in (s.y, s.lower, s.upper):
            if arr is not None:
                ys.append(np.asarray(arr, dtype=float))
    allx = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    ally = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    allx, ally = allx[np.isfinite(allx)], ally[np.isfinite(ally)]
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    if plot.ylim is not None:
        y0, y1 = map(float, plot.ylim)
    else:
        y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
        pad = 0.05 * (y1 - y0) if y1 > y0 else max(abs(y0) * 0.05, 0.5)
        y0, y1 = y0 - pad, y1 + pad
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        y = min(max(y, y0), y1)
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(plot.title)}</text>',
    ]
    for t in _ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{_fmt(X)}" y1="{MARGIN["top"]}" x2="{_fmt(X)}" y2="{MARGIN["top"] + ph}" stroke="#eeeeee"/>')
        out.append(f'<text x="{_fmt(X)}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{_label(t)}</text>')
    for t in _ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{MARGIN["left"]}" y1="{_fmt(Y)}" x2="{MARGIN["left"] + pw}" y2="{_fmt(Y)}" stroke="#eeeeee"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{_fmt(Y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    out.append(
        f'<text x="{MARGIN["left"] + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(plot.xlabel)}</text>'
    )
    cy = MARGIN["top"] + ph / 2
    out.append(
        f'<text x="18" y="{cy:.2f}" text-anchor="middle" transform="rotate(-90 18 {cy:.2f})">{escape(plot.ylabel)}</text>'
    )
    for k, s in enumerate(plot.series):
        color = PALETTE[k % len(PALETTE)]
        x = np.asarray(s.x, dtype=float)
        if s.lower is not None and s.upper is not None:
            lo, hi = np.asarray(s.lower, dtype=float), np.asarray(s.upper, dtype=float)
            ok = np.isfinite(x) & np.isfinite(lo) & np.isfinite(hi)
            if ok.any():
                pts = [f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[ok], hi[ok])]
                pts += [f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[ok][::-1], lo[ok][::-1])]
                out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        y = np.asarray(s.y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if ok.any():
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[ok], y[ok]))
            dash = ' stroke-dasharray="5,3"' if s.dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>')
        ly = MARGIN["top"] + 14 + 18 * k
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}">{escape(s.label)}</text>')
    for label, xv, yv in plot.markers:
        out.append(f'<circle cx="{_fmt(px(xv))}" cy="{_fmt(py(yv))}" r="3" fill="black"/>')
        out.append(f'<text x="{_fmt(px(xv) + 5)}" y="{_fmt(py(yv) - 5)}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
