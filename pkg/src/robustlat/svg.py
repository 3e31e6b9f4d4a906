"""Minimal dependency-free SVG line and scatter plots.

CSV exports stay the authoritative output; these are quick-look renderings
with fixed deterministic formatting.
"""

from __future__ import annotations

import math

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 60, 20, 30, 45


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _axes(xs, ys, title, xlabel, ylabel):
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0

    def sx(x):
        return _ML + (x - xmin) / (xmax - xmin) * (_W - _ML - _MR)

    def sy(y):
        return _H - _MB - (y - ymin) / (ymax - ymin) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="black"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{_W / 2:.1f}" y="{_H - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{_H / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_H / 2:.1f})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xmin + frac * (xmax - xmin)
        yv = ymin + frac * (ymax - ymin)
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{_H - _MB + 16}" text-anchor="middle" '
            f'font-size="10">{_fmt(xv)}</text>'
        )
        parts.append(
            f'<text x="{_ML - 6}" y="{sy(yv):.1f}" text-anchor="end" '
            f'font-size="10">{_fmt(yv)}</text>'
        )
    return parts, sx, sy


def line_plot(path, xs, ys, *, title="", xlabel="", ylabel="") -> None:
    xs, ys = list(xs), list(ys)
    if len(xs) != len(ys) or not xs:
        raise ValueError("line plot needs equal-length non-empty x and y")
    parts, sx, sy = _axes(xs, ys, title, xlabel, ylabel)
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts.append(
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>'
    )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def scatter_plot(path, xs, ys, *, values=None, title="", xlabel="", ylabel="") -> None:
    """Scatter with optional per-point values mapped to dot radius."""
    xs, ys = list(xs), list(ys)
    if len(xs) != len(ys) or not xs:
        raise ValueError("scatter plot needs equal-length non-empty x and y")
    parts, sx, sy = _axes(xs, ys, title, xlabel, ylabel)
    if values is None:
        radii = [2.5] * len(xs)
    else:
        vals = [float(v) for v in values]
        top = max(max(vals), 1e-12)
        radii = [1.5 + 4.0 * math.sqrt(max(v, 0.0) / top) for v in vals]
    for x, y, r in zip(xs, ys, radii):
        parts.append(
            f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="{r:.2f}" '
            f'fill="steelblue" fill-opacity="0.6"/>'
        )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
