"""Minimal SVG line plots for run outputs. Presentation only."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def line_plot(x, series: Sequence[tuple[str, np.ndarray]], title: str = "", width: int = 720,
              height: int = 320, max_points: int = 2000, logy: bool = False) -> str:
    x = np.asarray(x, dtype=float)
    stride = max(1, len(x) // max_points)
    xs = x[::stride]
    ys = [(name, np.asarray(y, dtype=float)[::stride]) for name, y in series]
    if logy:
        ys = [(name, np.log10(np.maximum(y, 1e-16))) for name, y in ys]
    finite = np.concatenate([y[np.isfinite(y)] for _, y in ys]) if ys else np.zeros(1)
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 30
    w, h = width - pad_l - pad_r, height - pad_t - pad_b
    x0, x1 = float(xs[0]), float(xs[-1]) if xs[-1] > xs[0] else float(xs[0]) + 1.0

    def px(v):
        return pad_l + (v - x0) / (x1 - x0) * w

    def py(v):
        return pad_t + (hi - v) / (hi - lo) * h

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect x="{pad_l}" y="{pad_t}" width="{w}" height="{h}" fill="none" stroke="#999"/>',
             f'<text x="{width / 2}" y="18" text-anchor="middle">{escape(title)}</text>']
    for v in np.linspace(lo, hi, 5):
        label = f"1e{v:.1f}" if logy else f"{v:.3g}"
        parts.append(f'<text x="{pad_l - 4}" y="{py(v) + 4:.1f}" text-anchor="end">{label}</text>')
    for v in np.linspace(x0, x1, 6):
        parts.append(f'<text x="{px(v):.1f}" y="{height - 10}" text-anchor="middle">{v:.3g}</text>')
    for k, (name, y) in enumerate(ys):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(y)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(xs[ok], y[ok]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{pad_l + 8}" y="{pad_t + 14 + 13 * k}" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_run_plots(res, out: Path) -> list[Path]:
    written = []
    mon = res.monitor
    for j in range(len(mon.groups)):
        svg = line_plot(mon.times, [("residual", mon.residuals[j]), ("threshold", mon.thresholds[j])],
                        title=f"group {j + 1}: residual of the current subset")
        path = out / f"residual_group{j + 1}.svg"
        path.write_text(svg)
        written.append(path)
    svg = line_plot(mon.times, [("|xhat - x|_inf", res.errors)], title="state estimation error", logy=True)
    path = out / "error.svg"
    path.write_text(svg)
    written.append(path)
    return written
