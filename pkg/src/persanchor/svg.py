"""Tiny deterministic SVG charts for run reports."""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        self.x0, self.x1 = _span(xs)
        self.y0, self.y1 = _span(ys)

    def px(self, x: float) -> float:
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y: float) -> float:
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _span(values: Sequence[float]) -> tuple[float, float]:
    vals = [float(v) for v in values]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _frame(title: str, xlabel: str, ylabel: str, ax: _Axes) -> list[str]:
    b = HEIGHT - MARGIN
    r = WIDTH - MARGIN
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text class="title" x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line class="axis" x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>',
        f'<line class="axis" x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>',
        f'<text class="xlabel" x="{WIDTH / 2}" y="{HEIGHT - 14}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text class="ylabel" x="16" y="{HEIGHT / 2}" transform="rotate(-90 16 {HEIGHT / 2})" '
        f'text-anchor="middle" font-size="12">{escape(ylabel)}</text>',
        f'<text class="tick" x="{MARGIN}" y="{b + 16}" font-size="10">{ax.x0:.3g}</text>',
        f'<text class="tick" x="{r}" y="{b + 16}" text-anchor="end" font-size="10">{ax.x1:.3g}</text>',
        f'<text class="tick" x="{MARGIN - 4}" y="{b}" text-anchor="end" font-size="10">{ax.y0:.3g}</text>',
        f'<text class="tick" x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" font-size="10">{ax.y1:.3g}</text>',
    ]


def _legend(names: Sequence[str]) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = MARGIN + 14 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect class="legend" x="{WIDTH - MARGIN - 120}" y="{y - 8}" width="8" height="8" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 108}" y="{y}" font-size="10">{escape(name)}</text>')
    return out


def scatter_svg(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    *,
    title: str,
    xlabel: str,
    ylabel: str,
    fits: Mapping[str, tuple[float, float]] | None = None,
) -> str:
    """Scatter plot with one ``<circle>`` per point and optional fit lines.

    ``fits`` maps a series name to ``(slope, intercept)``.
    """
    xs = [x for sx, _ in series.values() for x in sx]
    ys = [y for _, sy in series.values() for y in sy]
    ax = _Axes(xs, ys)
    parts = _frame(title, xlabel, ylabel, ax)
    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<g class="series" data-name="{escape(name)}" fill="{color}" fill-opacity="0.5">')
        parts.extend(
            f'<circle cx="{_fmt(ax.px(x))}" cy="{_fmt(ax.py(y))}" r="1.5"/>' for x, y in zip(sx, sy)
        )
        parts.append("</g>")
        if fits and name in fits:
            slope, icpt = fits[name]
            parts.append(
                f'<line class="fit" x1="{_fmt(ax.px(ax.x0))}" y1="{_fmt(ax.py(slope * ax.x0 + icpt))}" '
                f'x2="{_fmt(ax.px(ax.x1))}" y2="{_fmt(ax.py(slope * ax.x1 + icpt))}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
    parts.extend(_legend(list(series)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart_svg(
    series: Mapping[str, Sequence[float]],
    *,
    title: str,
    xlabel: str,
    ylabel: str,
    dashed: Sequence[str] = (),
) -> str:
    """One ``<polyline>`` per series, x being the position in the sequence."""
    longest = max((len(v) for v in series.values()), default=1)
    ys = [y for v in series.values() for y in v]
    ax = _Axes([0, max(longest - 1, 1)], ys)
    parts = _frame(title, xlabel, ylabel, ax)
    for i, (name, values) in enumerate(series.items()):
        if not values:
            continue
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in enumerate(values))
        dash = ' stroke-dasharray="5,4"' if name in dashed else ""
        parts.append(
            f'<polyline class="series" data-name="{escape(name)}" points="{pts}" '
            f'fill="none" stroke="{color}" stroke-width="2"{dash}/>'
        )
    parts.extend(_legend(list(series)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
