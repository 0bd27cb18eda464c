"""Minimal SVG output: p-value cross plots and bar charts."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .anova import SIGNIFICANCE, AnovaTable

_FONT = 'font-family="sans-serif" font-size="11"'


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _write(path, width: float, height: float, body: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
            f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">')
    path.write_text("\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n",
                    encoding="utf-8")


def _x_labels(labels: Sequence[str], xs: Sequence[float], y: float) -> list[str]:
    return [f'<text x="{_fmt(x)}" y="{_fmt(y)}" {_FONT} text-anchor="end" '
            f'transform="rotate(-60 {_fmt(x)} {_fmt(y)})">{escape(lab)}</text>'
            for lab, x in zip(labels, xs)]


def pvalue_plot(table: AnovaTable, path, include_intercept: bool = False) -> None:
    """One cross per term at its p-value, with a dashed line at the 0.05 threshold."""
    terms = [t for t in table.terms if include_intercept or t.label != "Intercept"]
    step, left, top, plot_h, bottom = 28.0, 60.0, 40.0, 260.0, 160.0
    width = left + step * max(len(terms), 1) + 30
    height = top + plot_h + bottom
    y_of = lambda p: top + plot_h * (1.0 - p)  # noqa: E731
    body = [
        f'<text x="{_fmt(width / 2)}" y="20" {_FONT} text-anchor="middle">{escape(table.formula or table.dependent)}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{_fmt(width - 20)}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(tick)
        body.append(f'<line x1="{left - 4}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" stroke="black"/>')
        body.append(f'<text x="{left - 6}" y="{_fmt(y + 4)}" {_FONT} text-anchor="end">{tick:g}</text>')
    body.append(f'<text x="14" y="{_fmt(top + plot_h / 2)}" {_FONT} text-anchor="middle" '
                f'transform="rotate(-90 14 {_fmt(top + plot_h / 2)})">p-value</text>')
    ty = y_of(SIGNIFICANCE)
    body.append(f'<line x1="{left}" y1="{_fmt(ty)}" x2="{_fmt(width - 20)}" y2="{_fmt(ty)}" '
                f'stroke="red" stroke-dasharray="4 3"/>')
    xs = []
    for i, t in enumerate(terms):
        x = left + step * (i + 0.5)
        xs.append(x)
        p = min(max(t.p_value, 0.0), 1.0) if math.isfinite(t.p_value) else 1.0
        y = y_of(p)
        color = "blue" if t.significant else "black"
        body.append(f'<path d="M{_fmt(x - 4)} {_fmt(y - 4)} L{_fmt(x + 4)} {_fmt(y + 4)} '
                    f'M{_fmt(x - 4)} {_fmt(y + 4)} L{_fmt(x + 4)} {_fmt(y - 4)}" stroke="{color}" stroke-width="1.5"/>')
    body += _x_labels([t.label for t in terms], xs, top + plot_h + 12)
    _write(path, width, height, body)


def bar_chart(labels: Sequence[str], values: Sequence[float], path, title: str = "", ylabel: str = "") -> None:
    """Vertical bars from a zero baseline; non-finite values are drawn as empty slots."""
    finite = [v for v in values if math.isfinite(v)]
    lo = min([0.0, *finite])
    hi = max([0.0, *finite])
    if hi == lo:
        hi = lo + 1.0
    step, left, top, plot_h, bottom = 22.0, 60.0, 40.0, 240.0, 170.0
    width = left + step * max(len(values), 1) + 30
    height = top + plot_h + bottom
    y_of = lambda v: top + plot_h * (hi - v) / (hi - lo)  # noqa: E731
    y0 = y_of(0.0)
    body = [
        f'<text x="{_fmt(width / 2)}" y="20" {_FONT} text-anchor="middle">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{_fmt(y0)}" x2="{_fmt(width - 20)}" y2="{_fmt(y0)}" stroke="black"/>',
        f'<text x="14" y="{_fmt(top + plot_h / 2)}" {_FONT} text-anchor="middle" '
        f'transform="rotate(-90 14 {_fmt(top + plot_h / 2)})">{escape(ylabel)}</text>',
    ]
    for v in (lo, hi):
        body.append(f'<text x="{left - 6}" y="{_fmt(y_of(v) + 4)}" {_FONT} text-anchor="end">{v:.3g}</text>')
    xs = []
    for i, v in enumerate(values):
        x = left + step * i + 3
        xs.append(x + (step - 6) / 2)
        if not math.isfinite(v):
            continue
        y = min(y_of(v), y0)
        body.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(step - 6)}" '
                    f'height="{_fmt(abs(y_of(v) - y0))}" fill="steelblue"/>')
    body += _x_labels(list(labels), xs, top + plot_h + 12)
    _write(path, width, height, body)
