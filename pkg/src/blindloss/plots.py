"""Minimal SVG charts: loss curves and per-class bars. No renderer dependency."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 360
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _frame(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]


def _label(x, y, text, anchor="middle", size=10) -> str:
    return (f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-family="sans-serif" '
            f'font-size="{size}">{escape(str(text))}</text>')


def line_chart(series: dict, title: str = "", xlabel: str = "iteration") -> str:
    """One polyline per named series of y values against their index."""
    svg = _frame(title)
    finite = [v for ys in series.values() for v in ys if math.isfinite(v)]
    if not finite:
        return "\n".join(svg + ["</svg>"]) + "\n"
    lo, hi = min(finite), max(finite)
    if hi == lo:
        hi = lo + 1.0
    n = max(len(ys) for ys in series.values())
    span_x = WIDTH - 2 * MARGIN
    span_y = HEIGHT - 2 * MARGIN

    def px(i):
        return MARGIN + span_x * (i / max(n - 1, 1))

    def py(v):
        return HEIGHT - MARGIN - span_y * (v - lo) / (hi - lo)

    for k, (name, ys) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        step = max(1, len(ys) // 400)
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(ys) if i % step == 0 and math.isfinite(v))
        svg.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        svg.append(f'<rect x="{WIDTH - MARGIN - 110}" y="{MARGIN + 14 * k - 8}" width="10" height="10" fill="{color}"/>')
        svg.append(_label(WIDTH - MARGIN - 95, MARGIN + 14 * k + 1, name, anchor="start"))
    svg.append(_label(MARGIN - 5, HEIGHT - MARGIN, f"{lo:.3g}", anchor="end"))
    svg.append(_label(MARGIN - 5, MARGIN + 4, f"{hi:.3g}", anchor="end"))
    svg.append(_label(WIDTH / 2, HEIGHT - 15, xlabel))
    svg.append(_label(WIDTH - MARGIN, HEIGHT - MARGIN + 14, n - 1))
    svg.append("</svg>")
    return "\n".join(svg) + "\n"


def bar_chart(labels: list, values: list, title: str = "", ymax: float = 1.0) -> str:
    """Vertical bars; ``None`` values are drawn as an empty slot marked n/a."""
    svg = _frame(title)
    n = max(len(values), 1)
    slot = (WIDTH - 2 * MARGIN) / n
    span_y = HEIGHT - 2 * MARGIN
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = MARGIN + i * slot
        if v is None:
            svg.append(_label(x + slot / 2, HEIGHT - MARGIN - 5, "n/a"))
        else:
            h = span_y * max(0.0, min(v, ymax)) / ymax
            svg.append(f'<rect x="{x + slot * 0.15:.1f}" y="{HEIGHT - MARGIN - h:.1f}" width="{slot * 0.7:.1f}" '
                       f'height="{h:.1f}" fill="{COLORS[i % len(COLORS)]}"/>')
            svg.append(_label(x + slot / 2, HEIGHT - MARGIN - h - 4, f"{v:.3f}"))
        svg.append(_label(x + slot / 2, HEIGHT - MARGIN + 14, lab))
    svg.append(_label(MARGIN - 5, MARGIN + 4, f"{ymax:g}", anchor="end"))
    svg.append("</svg>")
    return "\n".join(svg) + "\n"
