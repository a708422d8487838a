"""Standalone SVG scatter plots of 2-D embeddings.

Each point is filled with the label-weighted blend of six fixed class
colours: saturated hues for circles, lighter tints for ellipses.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .synth import CLASS_NAMES

CLASS_COLORS = np.array(
    [
        [200, 0, 0],  # red circle
        [255, 150, 150],  # red ellipse
        [0, 150, 0],  # green circle
        [150, 230, 150],  # green ellipse
        [0, 0, 200],  # blue circle
        [150, 150, 255],  # blue ellipse
    ],
    dtype=np.float64,
)


def blend_color(label: np.ndarray) -> tuple[int, int, int]:
    rgb = np.rint(np.asarray(label, dtype=np.float64) @ CLASS_COLORS)
    return tuple(int(v) for v in np.clip(rgb, 0, 255))


def hex_color(rgb: tuple[int, int, int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*(int(round(float(v))) for v in rgb))


def scatter_svg(points: np.ndarray, labels: np.ndarray, title: str = "", size: int = 600, radius: float = 2.5) -> str:
    points = np.asarray(points, dtype=np.float64)
    margin = 20.0
    lo = points.min(axis=0) if len(points) else np.zeros(2)
    hi = points.max(axis=0) if len(points) else np.ones(2)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    xy = margin + (points - lo) / span * (size - 2 * margin)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 40}" '
        f'viewBox="0 0 {size} {size + 40}">',
        f'<rect width="{size}" height="{size + 40}" fill="#ffffff"/>',
    ]
    if title:
        lines.append(f'<text x="{margin}" y="14" font-family="sans-serif" font-size="12">{escape(title)}</text>')
    for (x, y), q in zip(xy, labels):
        lines.append(
            f'<circle class="pt" cx="{x:.2f}" cy="{size - y:.2f}" r="{radius}" fill="{hex_color(blend_color(q))}"/>'
        )
    for i, name in enumerate(CLASS_NAMES):
        lx = margin + i * (size - 2 * margin) / len(CLASS_NAMES)
        color = hex_color(tuple(int(v) for v in CLASS_COLORS[i]))
        lines.append(f'<circle class="key" cx="{lx + 5:.1f}" cy="{size + 20}" r="5" fill="{color}"/>')
        lines.append(
            f'<text x="{lx + 14:.1f}" y="{size + 24}" font-family="sans-serif" font-size="10">{name}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
