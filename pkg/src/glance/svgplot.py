"""Dependency-free SVG line charts for sweep outputs."""

from __future__ import annotations

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 420
ML, MR, MT, MB = 60, 20, 40, 50


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in vals]


def line_chart(series: dict[str, list[tuple[float, float]]], title: str,
               xlabel: str, ylabel: str, path, y_range=None) -> None:
    """Write a simple multi-series line chart with axes and a legend."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    if y_range is not None:
        y_lo, y_hi = y_range
    else:
        y_lo, y_hi = min(ys), max(ys)
        if y_lo == y_hi:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W/2}" y="22" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{ML}" y1="{H-MB}" x2="{W-MR}" y2="{H-MB}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H-MB}" stroke="black"/>',
        f'<text x="{(ML+W-MR)/2}" y="{H-12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{(MT+H-MB)/2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MT+H-MB)/2})">{ylabel}</text>',
    ]
    for i in range(5):
        yv = y_lo + (y_hi - y_lo) * i / 4
        ypix = _scale([yv], y_lo, y_hi, H - MB, MT)[0]
        parts.append(f'<line x1="{ML-4}" y1="{ypix:.1f}" x2="{ML}" y2="{ypix:.1f}" stroke="black"/>')
        parts.append(f'<text x="{ML-8}" y="{ypix+4:.1f}" text-anchor="end">{yv:.2f}</text>')
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        xpix = _scale([xv], x_lo, x_hi, ML, W - MR)[0]
        parts.append(f'<line x1="{xpix:.1f}" y1="{H-MB}" x2="{xpix:.1f}" y2="{H-MB+4}" stroke="black"/>')
        parts.append(f'<text x="{xpix:.1f}" y="{H-MB+18}" text-anchor="middle">{xv:g}</text>')
    for idx, (name, pts) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        px = _scale([p[0] for p in pts], x_lo, x_hi, ML, W - MR)
        py = _scale([p[1] for p in pts], y_lo, y_hi, H - MB, MT)
        coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MT + 16 * idx
        parts.append(f'<line x1="{W-MR-110}" y1="{ly}" x2="{W-MR-86}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{W-MR-80}" y="{ly+4}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
