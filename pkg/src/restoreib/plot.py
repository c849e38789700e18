"""Minimal deterministic SVG line/scatter plots.

Output depends only on the inputs: coordinates are printed with fixed
precision and no timestamps or random ids are emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

__all__ = ["Series", "plot_svg", "save_svg"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=170, top=40, bottom=55)


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]
    style: str = "line"  # line | scatter | dashed
    color: str | None = None
    extra: dict = field(default_factory=dict)


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        if t >= lo - 1e-9 * step:
            ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.6g}"


def plot_svg(series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Render series into an SVG document string. Empty input gives bare axes."""
    pts = [(x, y) for s in series for x, y in zip(s.xs, s.ys) if math.isfinite(x) and math.isfinite(y)]
    if pts:
        x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
        y_lo, y_hi = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(v):
        return x0 + (v - x_lo) / (x_hi - x_lo) * (x1 - x0)

    def sy(v):
        return y0 - (v - y_lo) / (y_hi - y_lo) * (y0 - y1)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for t in _nice_ticks(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(sx(t))}" y1="{y0}" x2="{_fmt(sx(t))}" y2="{y0 + 5}" stroke="black"/>')
        out.append(
            f'<text x="{_fmt(sx(t))}" y="{y0 + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{_label(t)}</text>'
        )
    for t in _nice_ticks(y_lo, y_hi):
        out.append(f'<line x1="{x0 - 5}" y1="{_fmt(sy(t))}" x2="{x0}" y2="{_fmt(sy(t))}" stroke="black"/>')
        out.append(
            f'<text x="{x0 - 8}" y="{_fmt(sy(t) + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">{_label(t)}</text>'
        )
    out.append(
        f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        xy = [(sx(x), sy(y)) for x, y in zip(s.xs, s.ys) if math.isfinite(x) and math.isfinite(y)]
        if s.style in ("line", "dashed") and len(xy) > 1:
            dash = ' stroke-dasharray="6,4"' if s.style == "dashed" else ""
            path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in xy)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        if s.style in ("line", "scatter"):
            for a, b in xy:
                out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 10 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(path, series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "") -> Path:
    path = Path(path)
    path.write_text(plot_svg(series, title, xlabel, ylabel))
    return path
