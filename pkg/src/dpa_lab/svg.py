"""Minimal SVG figures: density or potential contours, level-set polylines, score arrows, paths."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage import measure

from .levelset import GridField

PANEL = 360
MARGIN = 24


@dataclass
class Panel:
    title: str
    bounds: tuple  # ((xlo, xhi), (ylo, yhi))
    items: list = field(default_factory=list)

    def _xy(self, pts: np.ndarray) -> np.ndarray:
        (xlo, xhi), (ylo, yhi) = self.bounds
        px = MARGIN + (pts[:, 0] - xlo) / (xhi - xlo) * (PANEL - 2 * MARGIN)
        py = PANEL - MARGIN - (pts[:, 1] - ylo) / (yhi - ylo) * (PANEL - 2 * MARGIN)
        return np.column_stack([px, py])

    def polyline(self, pts, stroke="black", width=1.0, dash=None):
        pts = np.asarray(pts, dtype=float)
        if len(pts) < 2:
            return
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in self._xy(pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{extra}/>')

    def arrows(self, origins, vectors, stroke="black", length=0.25):
        origins, vectors = np.asarray(origins, float), np.asarray(vectors, float)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        ok = norms[:, 0] > 0
        tips = origins[ok] + length * vectors[ok] / norms[ok]
        for a, b in zip(self._xy(origins[ok]), self._xy(tips)):
            d = b - a
            n = np.hypot(*d)
            if n == 0:
                continue
            u, v = d / n, np.array([-d[1], d[0]]) / n
            h1, h2 = b - 4 * u + 2.5 * v, b - 4 * u - 2.5 * v
            self.items.append(f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                              f'stroke="{stroke}" stroke-width="0.8"/>')
            self.items.append(f'<polygon points="{b[0]:.2f},{b[1]:.2f} {h1[0]:.2f},{h1[1]:.2f} '
                              f'{h2[0]:.2f},{h2[1]:.2f}" fill="{stroke}"/>')

    def points(self, pts, fill="black", r=3.0):
        for x, y in self._xy(np.atleast_2d(np.asarray(pts, float))):
            self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{fill}"/>')

    def contours(self, fn, levels, stroke="red", resolution=120, width=0.8):
        """Contours of a scalar field ``fn(points) -> values`` over the panel bounds."""
        grid = GridField(self.bounds, resolution)
        img = grid.image(fn(grid.points()))
        for level in levels:
            for rc in measure.find_contours(img, level):
                self.polyline(grid.to_data(rc), stroke=stroke, width=width)

    def render(self, dx: float) -> str:
        body = "\n".join(self.items)
        return (f'<g transform="translate({dx},0)">\n'
                f'<rect x="0" y="0" width="{PANEL}" height="{PANEL}" fill="white" stroke="#888"/>\n'
                f'<text x="{PANEL / 2}" y="16" text-anchor="middle" font-size="13" '
                f'font-family="sans-serif">{self.title}</text>\n{body}\n</g>')


def write_svg(path, panels: list[Panel]):
    width = PANEL * len(panels)
    groups = "\n".join(p.render(i * PANEL) for i, p in enumerate(panels))
    with open(path, "w") as fh:
        fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" '
                 f'viewBox="0 0 {width} {PANEL}">\n{groups}\n</svg>\n')


def density_levels(density_values: np.ndarray, n: int = 6) -> np.ndarray:
    top = float(np.max(density_values))
    return top * np.linspace(0.1, 0.9, n)
