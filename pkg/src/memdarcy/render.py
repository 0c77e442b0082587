"""Optional SVG snapshots: pressure heatmap with a velocity quiver.

Pure string output so headless runs need no plotting library.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _color(v: float) -> str:
    # blue -> white -> red on [-1, 1]
    v = float(np.clip(v, -1.0, 1.0))
    if v < 0:
        r = g = int(255 * (1 + v))
        b = 255
    else:
        r = 255
        g = b = int(255 * (1 - v))
    return f"#{r:02x}{g:02x}{b:02x}"


def snapshot_svg(P: np.ndarray, uc: np.ndarray, n: int, title: str = "", size: int = 400) -> str:
    """SVG text for cell pressures ``P`` (n*n) and cell velocities ``uc`` (n*n, 2)."""
    P = np.asarray(P, dtype=float).reshape(n, n)
    U = np.asarray(uc, dtype=float).reshape(n, n, 2)
    px = size / n
    pmax = max(float(np.abs(P).max()), 1e-300)
    umax = max(float(np.linalg.norm(U, axis=2).max()), 1e-300)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" viewBox="0 0 {size} {size + 20}">']
    for j in range(n):
        for i in range(n):
            y = size - (j + 1) * px
            out.append(f'<rect x="{i * px:.2f}" y="{y:.2f}" width="{px:.2f}" height="{px:.2f}" fill="{_color(P[j, i] / pmax)}"/>')
    step = max(1, n // 16)
    L = 0.9 * px * step
    for j in range(0, n, step):
        for i in range(0, n, step):
            cx, cy = (i + 0.5) * px, size - (j + 0.5) * px
            dx, dy = L * U[j, i] / umax
            out.append(f'<line x1="{cx:.2f}" y1="{cy:.2f}" x2="{cx + dx:.2f}" y2="{cy - dy:.2f}" stroke="black" stroke-width="1"/>')
    out.append(f'<text x="4" y="{size + 15}" font-size="12">{title} |P|max={pmax:.3g} |u|max={umax:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_snapshot_svg(state, n: int, path: str | Path) -> None:
    from .macro import cell_velocity

    g = state.grid
    uc = cell_velocity(g, state.u[n])
    Path(path).write_text(snapshot_svg(state.P[n], uc, g.n, title=f"t={state.t[n]:.4g}"))
