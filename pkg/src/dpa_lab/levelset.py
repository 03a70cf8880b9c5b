"""Encoder level sets on a 2-D grid, their density-weighted moments, and score alignment.

For an encoder component e_j the level set through y is the contour {e_j = e_j(y)}.
Line integrals of the form ∫ f(z) P(z) δ(e_j(z) - e_j(y)) dz are discretised as
Σ_segments f(mid) P(mid) |seg| / ‖∇e_j(mid)‖ (coarea formula).  The alignment
test compares D_e(y)(y - c) with D_e(y) s(y), where c is the level-set centre of
mass and s the data score, by absolute cosine.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from skimage.measure import find_contours

log = logging.getLogger(__name__)

MIN_NORM = 1e-10


class DegenerateLevelSet(ValueError):
    """All moment weights vanish on the level set."""


@dataclass
class GridField:
    bounds: tuple = ((-4.0, 4.0), (-4.0, 4.0))
    resolution: int | tuple = 100

    def __post_init__(self):
        res = self.resolution
        self.shape_xy = (res, res) if np.isscalar(res) else tuple(res)
        if min(self.shape_xy) < 2:
            raise ValueError("resolution must be >= 2 per axis")
        if not np.all(np.isfinite(np.asarray(self.bounds, dtype=float))):
            raise ValueError("grid bounds must be finite")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.bounds[0], self.shape_xy[0])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.bounds[1], self.shape_xy[1])

    @property
    def image_shape(self) -> tuple:
        return (self.shape_xy[1], self.shape_xy[0])

    @property
    def cell(self) -> np.ndarray:
        return np.array([np.diff(self.bounds[0])[0] / (self.shape_xy[0] - 1),
                         np.diff(self.bounds[1])[0] / (self.shape_xy[1] - 1)])

    def points(self) -> np.ndarray:
        """Grid nodes in row-major image order: (ny*nx, 2), x varying fastest."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def image(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float).reshape(self.image_shape)

    def to_data(self, rc: np.ndarray) -> np.ndarray:
        """Map (row, col) image coordinates to (x, y)."""
        lo = np.array([self.bounds[0][0], self.bounds[1][0]])
        return lo + rc[:, ::-1] * self.cell

    def interpolator(self, values) -> Callable[[np.ndarray], np.ndarray]:
        interp = RegularGridInterpolator((self.ys, self.xs), self.image(values), bounds_error=False,
                                         fill_value=None)
        return lambda pts: interp(np.asarray(pts)[:, ::-1])


@dataclass
class LevelSet:
    level: float
    component: int
    polylines: list = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return sum(len(p) for p in self.polylines)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Midpoints and lengths of every polyline segment."""
        mids, lens = [], []
        for poly in self.polylines:
            if len(poly) < 2:
                continue
            d = np.diff(poly, axis=0)
            mids.append(0.5 * (poly[1:] + poly[:-1]))
            lens.append(np.linalg.norm(d, axis=1))
        if not mids:
            return np.empty((0, 2)), np.empty(0)
        return np.concatenate(mids), np.concatenate(lens)


@dataclass
class LevelSetMoments:
    Z: float
    c: np.ndarray
    V: float


class AnalyticEncoder:
    """Encoder given by closed-form functions, for pipeline checks without training."""

    def __init__(self, fn, jac):
        self.fn = fn
        self.jac = jac

    def encode(self, x):
        return np.atleast_2d(self.fn(np.atleast_2d(x)))

    def encoder_jacobian(self, x):
        return self.jac(np.atleast_2d(x))


def radial_encoder() -> AnalyticEncoder:
    """e(x) = (‖x‖, atan2(x2, x1))."""

    def fn(x):
        return np.column_stack([np.hypot(x[:, 0], x[:, 1]), np.arctan2(x[:, 1], x[:, 0])])

    def jac(x):
        r2 = np.maximum(np.sum(x**2, axis=1), 1e-300)
        out = np.empty((len(x), 2, 2))
        out[:, 0] = x / np.sqrt(r2)[:, None]
        out[:, 1] = np.column_stack([-x[:, 1], x[:, 0]]) / r2[:, None]
        return out

    return AnalyticEncoder(fn, jac)


def _field(source, component: int, grid: GridField) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return grid.image(source)
    if hasattr(source, "encode"):
        return grid.image(source.encode(grid.points())[:, component])
    return grid.image(source(grid.points()))


def extract_level_sets(source, component: int, levels, grid: GridField = None) -> list[LevelSet]:
    """Marching-squares contours of one encoder component at each level.

    ``source`` is an encoder (``encode``), a callable on (n, 2) points, or a grid image.
    Levels outside the field range give empty level sets.
    """
    grid = grid or GridField()
    img = _field(source, component, grid)
    out = []
    for level in np.atleast_1d(levels):
        polys = []
        if np.ptp(img) > 0 and img.min() <= level <= img.max():
            polys = [grid.to_data(rc) for rc in find_contours(img, float(level))]
        out.append(LevelSet(float(level), component, polys))
    return out


def level_set_moments(ls: LevelSet, density: Callable, grad_norm: Callable | None = None) -> LevelSetMoments:
    """Z, c, V of a level set; pass ``grad_norm=None`` to drop the coarea factor."""
    mids, lens = ls.segments()
    if len(mids) == 0:
        raise DegenerateLevelSet("level set has no segments")
    w = np.asarray(density(mids), dtype=float) * lens
    if grad_norm is not None:
        w = w / np.maximum(np.asarray(grad_norm(mids), dtype=float), MIN_NORM)
    Z = float(w.sum())
    if not Z > 0:
        raise DegenerateLevelSet(f"zero total weight on level {ls.level}")
    c = (w @ mids) / Z
    V = float(w @ np.sum((mids - c) ** 2, axis=1))
    return LevelSetMoments(Z, c, V)


@dataclass
class AlignmentResult:
    component: int
    points: np.ndarray  # kept grid points
    cos_abs: np.ndarray
    density: np.ndarray
    skipped_jacobian: int = 0
    skipped_degenerate: int = 0
    skipped_zero: int = 0

    @property
    def summary(self) -> dict:
        c = self.cos_abs
        return {
            "component": self.component,
            "mean": float(c.mean()) if len(c) else float("nan"),
            "std": float(c.std()) if len(c) else float("nan"),
            "p95": float(np.percentile(c, 95)) if len(c) else float("nan"),
            "kept": int(len(c)),
            "skipped": self.skipped_jacobian + self.skipped_degenerate + self.skipped_zero,
        }


class _GridEncoder:
    """Encoder values and Jacobians cached on the grid."""

    def __init__(self, encoder, grid: GridField):
        pts = grid.points()
        self.grid = grid
        self.points = pts
        self.values = encoder.encode(pts)
        self.jac = encoder.encoder_jacobian(pts)

    def grad_norm(self, component: int) -> Callable:
        return self.grid.interpolator(np.linalg.norm(self.jac[:, component, :], axis=1))


def score_alignment(encoder, dist, grid: GridField | None = None, density_cutoff: float = 0.005,
                    components=(0, 1), coarea: bool = True, n_levels: int | None = None,
                    refine: int = 2) -> list[AlignmentResult]:
    """|cos(D_e(y)(y - c), D_e(y) s(y))| at every grid point above the density cutoff.

    The level set through y is the contour of component j at e_j(y), traced on a
    grid ``refine`` times finer than ``grid`` (which keeps the original nodes).
    With ``n_levels`` set, contours are precomputed at that many quantile levels
    and each y uses the nearest one.
    """
    grid = grid or GridField()
    contour_grid = GridField(grid.bounds, tuple((n - 1) * refine + 1 for n in grid.shape_xy))
    pts = grid.points()
    dens = dist.density(pts)
    keep = np.flatnonzero(dens >= density_cutoff * dens.max())
    ge = _GridEncoder(encoder, grid)
    cg = ge if refine == 1 else _GridEncoder(encoder, contour_grid)
    scores = dist.score(pts[keep])
    results = []
    for j in components:
        img = contour_grid.image(cg.values[:, j])
        grad_norm = cg.grad_norm(j) if coarea else None
        cache: dict[float, LevelSetMoments | None] = {}

        def moments_at(level):
            if level not in cache:
                polys = [contour_grid.to_data(rc) for rc in find_contours(img, level)] if np.ptp(img) > 0 else []
                try:
                    cache[level] = level_set_moments(LevelSet(level, j, polys), dist.density, grad_norm)
                except DegenerateLevelSet:
                    cache[level] = None
            return cache[level]

        zj = ge.values[keep, j]
        if n_levels:
            table = np.quantile(zj, (np.arange(n_levels) + 0.5) / n_levels)
            zj = table[np.argmin(np.abs(zj[:, None] - table[None]), axis=1)]
        res = AlignmentResult(j, np.empty((0, 2)), np.empty(0), np.empty(0))
        kept_pts, cos, kept_dens = [], [], []
        for idx, i in enumerate(keep):
            D = ge.jac[i]
            if np.linalg.norm(D[j]) < MIN_NORM:
                res.skipped_jacobian += 1
                continue
            mom = moments_at(float(zj[idx]))
            if mom is None:
                res.skipped_degenerate += 1
                continue
            lhs = D @ (pts[i] - mom.c)
            rhs = D @ scores[idx]
            nl, nr = np.linalg.norm(lhs), np.linalg.norm(rhs)
            if nl < MIN_NORM or nr < MIN_NORM:
                res.skipped_zero += 1
                continue
            kept_pts.append(pts[i])
            cos.append(min(abs(lhs @ rhs) / (nl * nr), 1.0))
            kept_dens.append(dens[i])
        res.points = np.array(kept_pts).reshape(-1, 2)
        res.cos_abs = np.array(cos)
        res.density = np.array(kept_dens)
        results.append(res)
    return results


def write_alignment_csv(path, results: list[AlignmentResult], header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["y1", "y2", "cos_abs", "density", "component"])
        for r in results:
            for y, c, d in zip(r.points, r.cos_abs, r.density):
                w.writerow([repr(float(y[0])), repr(float(y[1])), repr(float(c)), repr(float(d)), r.component])
        for r in results:
            s = r.summary
            fh.write(f"# summary component={s['component']} mean={s['mean']:.6f} std={s['std']:.6f} "
                     f"p95={s['p95']:.6f} kept={s['kept']} skipped={s['skipped']}\n")


def write_alignment_summary_csv(path, dataset: str, results: list[AlignmentResult], header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["dataset", "component", "mean_cos_abs", "std", "p95", "points_kept", "skipped"])
        for r in results:
            s = r.summary
            w.writerow([dataset, s["component"], f"{s['mean']:.6f}", f"{s['std']:.6f}", f"{s['p95']:.6f}",
                        s["kept"], s["skipped"]])


@dataclass
class ExtremumReport:
    point: np.ndarray
    component: int
    distance: float  # ‖y* - c‖
    tangency: float  # |∇e_j · (y* - c)| / (‖∇e_j‖ ‖y* - c‖)
    collapsed: bool = False  # level set smaller than one grid cell, so c = y* to grid accuracy

    @property
    def score(self) -> float:
        return min(self.distance, self.tangency)


def extrema_check(encoder, dist, extrema, component: int, grid: GridField | None = None,
                  coarea: bool = True, refine: int = 2) -> list[ExtremumReport]:
    """Centre-of-mass and tangency diagnostics for the level set through each extremum."""
    grid = grid or GridField()
    grid = GridField(grid.bounds, tuple((n - 1) * refine + 1 for n in grid.shape_xy))
    extrema = np.atleast_2d(np.asarray(extrema, dtype=float)).reshape(-1, 2)
    lo = np.array([b[0] for b in grid.bounds])
    hi = np.array([b[1] for b in grid.bounds])
    if len(extrema) == 0:
        return []
    ge = _GridEncoder(encoder, grid)
    grad_norm = ge.grad_norm(component) if coarea else None
    img = grid.image(ge.values[:, component])
    reports = []
    for y in extrema:
        if np.any(y < lo) or np.any(y > hi):
            continue
        level = float(encoder.encode(y[None])[0, component])
        ls = LevelSet(level, component, [grid.to_data(rc) for rc in find_contours(img, level)])
        if len(ls.segments()[0]) == 0:
            reports.append(ExtremumReport(y, component, 0.0, 0.0, collapsed=True))
            continue
        try:
            mom = level_set_moments(ls, dist.density, grad_norm)
        except DegenerateLevelSet:
            continue
        d = y - mom.c
        dist_c = float(np.linalg.norm(d))
        g = encoder.encoder_jacobian(y[None])[0, component]
        denom = np.linalg.norm(g) * dist_c
        tang = float(abs(g @ d) / denom) if denom > MIN_NORM else 0.0
        reports.append(ExtremumReport(y, component, dist_c, tang))
    return reports
