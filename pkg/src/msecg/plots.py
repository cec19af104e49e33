"""Dependency-free SVG waveform overlays."""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#222222", "#1f77b4", "#d62728", "#2ca02c", "#9467bd")
DASHES = ("", "6,3", "", "2,2", "")


def render_svg(t: np.ndarray, series: Mapping[str, np.ndarray], title: str = "",
               annotations: Sequence[str] = (), width: int = 900, height: int = 320) -> str:
    """One ``<polyline>`` per series over a shared time axis, with a legend."""
    t = np.asarray(t, dtype=np.float64)
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    for k, v in ys.items():
        if v.shape != t.shape:
            raise ValueError(f"series {k!r} has shape {v.shape}, time axis {t.shape}")
    left, right, top, bottom = 50, 150, 30, 30
    pw, ph = width - left - right, height - top - bottom
    lo = min(float(v.min()) for v in ys.values())
    hi = max(float(v.max()) for v in ys.values())
    if hi == lo:
        hi, lo = hi + 1.0, lo - 1.0
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] != t[0] else float(t[0]) + 1.0
    sx = lambda x: left + (x - t0) / (t1 - t0) * pw  # noqa: E731
    sy = lambda y: top + (hi - y) / (hi - lo) * ph  # noqa: E731

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>']
    if title:
        out.append(f'<text x="{left}" y="{top - 10}" font-size="13">{escape(title)}</text>')
    for i, (name, y) in enumerate(ys.items()):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, y))
        color, dash = COLORS[i % len(COLORS)], DASHES[i % len(DASHES)]
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.2"{dash_attr} points="{pts}"/>')
        ly = top + 15 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"{dash_attr}/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}" font-size="12">{escape(name)}</text>')
    for j, note in enumerate(annotations):
        y = top + 15 + 18 * (len(ys) + 1 + j)
        out.append(f'<text x="{left + pw + 10}" y="{y}" font-size="11">{escape(note)}</text>')
    out.append(f'<text x="{left}" y="{height - 8}" font-size="11">t = {t0:.2f} .. {t1:.2f} s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
