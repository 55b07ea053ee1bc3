"""Minimal SVG line plots, so figures need no plotting dependency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)


@dataclass
class Series:
    label: str
    x: list
    y: list
    color: str | None = None
    dashed: bool = False
    markers: bool = False


@dataclass
class Plot:
    title: str
    xlabel: str = ""
    ylabel: str = ""
    series: list = field(default_factory=list)
    logy: bool = False

    def add(self, label, x, y, **kw) -> "Plot":
        self.series.append(Series(label, list(x), list(y), **kw))
        return self


def _finite(v) -> bool:
    return v is not None and math.isfinite(v)


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render(plot: Plot) -> str:
    """The SVG document for ``plot`` (deterministic for identical input)."""
    tf = (lambda v: math.log10(v) if v > 0 else None) if plot.logy else (lambda v: v)
    pts = [[(x, tf(y)) for x, y in zip(s.x, s.y) if _finite(x) and _finite(y) and tf(y) is not None] for s in plot.series]
    xs = [p[0] for ps in pts for p in ps]
    ys = [p[1] for ps in pts for p in ps]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def X(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return MARGIN["top"] + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(plot.title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{X(t):.2f}" y1="{MARGIN["top"] + ph}" x2="{X(t):.2f}" y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(
            f'<text x="{X(t):.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle" font-size="11" font-family="sans-serif">{_fmt(t)}</text>'
        )
    for t in _ticks(y0, y1):
        label = _fmt(10**t) if plot.logy else _fmt(t)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{Y(t):.2f}" x2="{MARGIN["left"]}" y2="{Y(t):.2f}" stroke="black"/>')
        out.append(
            f'<text x="{MARGIN["left"] - 8}" y="{Y(t) + 4:.2f}" text-anchor="end" font-size="11" font-family="sans-serif">{label}</text>'
        )
    out.append(
        f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12" font-family="sans-serif">{escape(plot.xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})" '
        f'text-anchor="middle" font-size="12" font-family="sans-serif">{escape(plot.ylabel)}</text>'
    )
    for i, (s, ps) in enumerate(zip(plot.series, pts)):
        color = s.color or PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="4 3"' if s.dashed else ""
        if len(ps) > 1:
            path = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in ps)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        if s.markers or len(ps) == 1:
            out += [f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{color}"/>' for a, b in ps]
        if s.label:
            ly = MARGIN["top"] + 14 * (i + 1)
            lx = MARGIN["left"] + pw + 10
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{lx + 22}" y="{ly}" font-size="11" font-family="sans-serif">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(plot: Plot, path) -> Path:
    p = Path(path)
    p.write_text(render(plot))
    return p
