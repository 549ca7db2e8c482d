"""Minimal static SVG line charts (no plotting dependencies).

Byte-identical output for identical data: floats are formatted with
repr-stable rounding and no timestamps or ids are embedded.
"""

from __future__ import annotations

import math


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_line_chart(series, title="", x_label="", y_label="",
                      width=640, height=400, markers=()) -> str:
    """Render named series to an SVG string.

    ``series`` is a list of (name, xs, ys); ``markers`` is a list of
    (name, x, y) drawn as crosses (used for divergence events).
    """
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 45
    plot_w = width - pad_l - pad_r
    plot_h = height - pad_t - pad_b

    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if math.isfinite(y)]
    ys_all += [y for _, _, y in markers if math.isfinite(y)]
    xs_all += [x for _, x, _ in markers]
    if not xs_all or not ys_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return pad_l + plot_w * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return pad_t + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

    colors = ["#1f6fb2", "#c44e52", "#55a868", "#8172b2", "#937860", "#da8bc3"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width/2:.1f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - pad_b + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{_fmt(xv)}</text>'
        )
        parts.append(
            f'<text x="{pad_l - 6}" y="{sy(yv):.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{_fmt(yv)}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{width/2:.1f}" y="{height - 8}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{x_label}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="14" y="{height/2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11" '
            f'transform="rotate(-90 14 {height/2:.1f})">{y_label}</text>'
        )
    for i, (name, xs, ys) in enumerate(series):
        color = colors[i % len(colors)]
        pts = [
            f"{sx(x):.2f},{sy(y):.2f}"
            for x, y in zip(xs, ys)
            if math.isfinite(y)
        ]
        if pts:
            parts.append(
                f'<polyline points="{" ".join(pts)}" fill="none" '
                f'stroke="{color}" stroke-width="1.5"/>'
            )
        ly = pad_t + 14 + 14 * i
        parts.append(
            f'<line x1="{width - pad_r - 130}" y1="{ly}" x2="{width - pad_r - 110}" '
            f'y2="{ly}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - pad_r - 105}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="10">{name}</text>'
        )
    for name, x, y in markers:
        cx, cy = sx(x), sy(y if math.isfinite(y) else y_hi)
        parts.append(
            f'<path d="M {cx-4:.1f} {cy-4:.1f} L {cx+4:.1f} {cy+4:.1f} '
            f'M {cx-4:.1f} {cy+4:.1f} L {cx+4:.1f} {cy-4:.1f}" '
            'stroke="#222" stroke-width="1.6"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
