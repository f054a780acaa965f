"""Dependency-free SVG line charts of truth vs forecast."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .inference import SequenceResult

PANEL_W, PANEL_H, PAD = 320, 180, 28


def _polyline(xs, ys, x0, y0, colour, dash=""):
    pts = " ".join(f"{x0 + x:.2f},{y0 + y:.2f}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{colour}" stroke-width="1.6"{extra} points="{pts}"/>'


def forecast_svg(results: Sequence[SequenceResult], src: Sequence[np.ndarray], columns: int = 2) -> str:
    """One panel per sequence: source (blue), true target (green), forecast (red, dashed)."""
    n = len(results)
    rows = (n + columns - 1) // columns
    width, height = columns * PANEL_W, rows * PANEL_H
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k, (res, s) in enumerate(zip(results, src)):
        x0 = (k % columns) * PANEL_W + PAD
        y0 = (k // columns) * PANEL_H + PAD
        w, h = PANEL_W - 2 * PAD, PANEL_H - 2 * PAD
        n_src, n_all = len(s), len(s) + len(res.truth)
        sx = lambda t: w * t / (n_all - 1)  # noqa: E731
        sy = lambda v: h * (1.0 - (np.clip(v, -1.5, 1.5) + 1.5) / 3.0)  # noqa: E731
        t_src = np.arange(n_src)
        t_tgt = np.arange(n_src - 1, n_all)
        parts.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#bbb"/>')
        parts.append(f'<line x1="{x0}" y1="{y0 + sy(0.0):.2f}" x2="{x0 + w}" y2="{y0 + sy(0.0):.2f}" stroke="#ddd"/>')
        parts.append(_polyline(sx(t_src), sy(np.asarray(s)), x0, y0, "#1f77b4"))
        parts.append(_polyline(sx(t_tgt), sy(np.r_[s[-1], res.truth]), x0, y0, "#2ca02c"))
        parts.append(_polyline(sx(t_tgt), sy(np.r_[s[-1], res.forecast]), x0, y0, "#d62728", "4 3"))
        label = escape(f"w={res.freq:.3f}  SSE={res.sse:.3g}")
        parts.append(f'<text x="{x0}" y="{y0 - 8}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
