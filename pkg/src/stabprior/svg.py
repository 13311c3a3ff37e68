"""Minimal SVG heat maps and line plots.

Plots are built from plain numbers read back from CSV files, never from
model state, so every figure can be regenerated from the CSV outputs alone.
"""
from __future__ import annotations

import math
from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _colour(t: float) -> str:
    """Dark (0) to yellow (1) ramp; ``nan`` maps to grey."""
    if math.isnan(t):
        return "#bbbbbb"
    t = min(max(t, 0.0), 1.0)
    r = int(round(40 + 215 * t))
    g = int(round(20 + 210 * t**0.8))
    b = int(round(90 * (1.0 - t)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(values, row_labels, col_labels, title: str = "", vmin: float = 0.0, vmax: float = 1.0,
            row_name: str = "", col_name: str = "") -> str:
    """``values[i][j]`` is drawn in row ``i`` (top to bottom) and column ``j``."""
    cell, left, top = 48, 90, 50
    width = left + cell * len(col_labels) + 20
    height = top + cell * len(row_labels) + 60
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    span = (vmax - vmin) or 1.0
    for i, row in enumerate(values):
        y = top + i * cell
        out.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4:.1f}" text-anchor="end">{escape(str(row_labels[i]))}</text>')
        for j, v in enumerate(row):
            x = left + j * cell
            v = float("nan") if v is None else float(v)
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_colour((v - vmin) / span)}"/>')
            label = "" if math.isnan(v) else _num(v)
            out.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" text-anchor="middle" fill="#ffffff">{label}</text>')
    base = top + cell * len(row_labels)
    for j, lab in enumerate(col_labels):
        out.append(f'<text x="{left + j * cell + cell / 2:.1f}" y="{base + 16}" text-anchor="middle">{escape(str(lab))}</text>')
    if col_name:
        out.append(f'<text x="{left + cell * len(col_labels) / 2:.1f}" y="{base + 40}" text-anchor="middle">{escape(col_name)}</text>')
    if row_name:
        out.append(f'<text x="14" y="{top + cell * len(row_labels) / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + cell * len(row_labels) / 2:.1f})">{escape(row_name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "", log_y: bool = False,
              width: int = 520, height: int = 340) -> str:
    """``series`` is a list of ``(label, xs, ys, dashed)`` tuples."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    pts = []
    for _, xs, ys, _ in series:
        for x, y in zip(xs, ys):
            if y is None or (log_y and y <= 0) or not math.isfinite(y):
                continue
            pts.append((x, math.log10(y) if log_y else y))
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>']
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        xv = x0 + (x1 - x0) * k / 4
        ylab = f"1e{yv:.1f}" if log_y else f"{yv:.3g}"
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{ylab}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2:.1f})">'
               f'{escape(ylabel + (" (log10)" if log_y else ""))}</text>')
    for idx, (label, xs, ys, dashed) in enumerate(series):
        colour = PALETTE[idx % len(PALETTE)]
        coords = [f"{sx(x):.2f},{sy(math.log10(y) if log_y else y):.2f}" for x, y in zip(xs, ys)
                  if y is not None and math.isfinite(y) and not (log_y and y <= 0)]
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        if coords:
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{" ".join(coords)}"/>')
        ly = top + 14 * idx + 8
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{colour}"{dash}/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
