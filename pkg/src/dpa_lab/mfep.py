"""Minimum free-energy paths: string method, encoder-based path extraction, and path metrics."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class Path:
    points: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(self.points) < 1:
            raise ValueError("a path needs at least one point")

    @property
    def arclength(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def resample(self, n: int) -> "Path":
        """Equal arc-length resampling by linear interpolation."""
        s = self.arclength
        if s[-1] == 0:
            return Path(np.repeat(self.points[:1], n, axis=0), self.truncated)
        t = np.linspace(0, s[-1], n)
        pts = np.column_stack([np.interp(t, s, self.points[:, d]) for d in range(self.points.shape[1])])
        return Path(pts, self.truncated)


def _reparameterize(phi: np.ndarray) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(phi, axis=0), axis=1))])
    if s[-1] == 0:
        return phi
    t = np.linspace(0, s[-1], len(phi))
    return np.column_stack([np.interp(t, s, phi[:, d]) for d in range(phi.shape[1])])


def string_method(potential, endpoints, n_nodes: int = 32, tol: float = 1e-7, dt: float | None = None,
                  max_iter: int = 200_000, init=None) -> Path:
    """Simplified string method: steepest descent on every node, then equal-arc-length reparameterization.

    Each node's descent step is halved until its energy does not increase.  Converged when
    the largest node displacement over one full iteration falls below ``tol``.
    """
    if n_nodes < 3:
        raise ValueError("n_nodes must be >= 3")
    endpoints = np.asarray(endpoints, dtype=float)
    if init is None:
        w = np.linspace(0, 1, n_nodes)[:, None]
        phi = (1 - w) * endpoints[0] + w * endpoints[1]
    else:
        phi = _reparameterize(Path(init).resample(n_nodes).points)
    if dt is None:
        g = np.linalg.norm(potential.gradient(phi), axis=1).max()
        dt = 1e-3 / max(g, 1.0)
    energy = potential.potential(phi)
    residual = np.inf
    for it in range(max_iter):
        grad = potential.gradient(phi)
        step = np.full(len(phi), dt)
        new = phi - step[:, None] * grad
        e_new = potential.potential(new)
        for _ in range(30):
            bad = e_new > energy + 1e-14
            if not bad.any():
                break
            step[bad] *= 0.5
            new[bad] = phi[bad] - step[bad, None] * grad[bad]
            e_new[bad] = potential.potential(new[bad])
        new = _reparameterize(new)
        residual = float(np.max(np.linalg.norm(new - phi, axis=1)))
        phi = new
        energy = potential.potential(phi)
        if residual < tol:
            log.debug("string converged after %d iterations", it + 1)
            return Path(phi)
    raise ConvergenceError(f"string method did not converge in {max_iter} iterations (residual {residual:.3g})",
                           residual)


def tangency(path: Path, potential, min_grad_frac: float = 0.05) -> np.ndarray:
    """|cos(tangent, ∇U)| at interior nodes whose |∇U| exceeds ``min_grad_frac`` of the path maximum."""
    pts = path.points
    tang = pts[2:] - pts[:-2]
    grad = potential.gradient(pts[1:-1])
    gn = np.linalg.norm(grad, axis=1)
    keep = gn > min_grad_frac * gn.max()
    cos = np.abs(np.sum(tang * grad, axis=1)) / (np.linalg.norm(tang, axis=1) * gn + 1e-300)
    return cos[keep]


def _r2_cubic(s: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    ss_tot = np.sum((z - z.mean()) ** 2)
    if ss_tot <= 1e-300 * max(len(z), 1):
        return 0.0, np.array([0.0, 0.0, 0.0, z.mean()])
    coef = np.polyfit(s, z, 3)
    ss_res = np.sum((z - np.polyval(coef, s)) ** 2)
    return float(1 - ss_res / ss_tot), coef


def best_parameterizing_component(encoder, mfep: Path) -> tuple[int, float, list[float]]:
    """Component whose cubic fit against MFEP arc length has the largest R²."""
    s = mfep.arclength
    z = encoder.encode(mfep.points)
    r2 = [_r2_cubic(s, z[:, j])[0] for j in range(z.shape[1])]
    best = int(np.argmax(r2))
    return best, r2[best], r2


def _line_root(encoder, component, x, direction, target, step, max_expand=12):
    """Solve e_j(x + t·direction) = target for t by bracketing then Brent's method."""

    def f(t):
        return encoder.encode((x + t * direction)[None])[0, component] - target

    f0 = f(0.0)
    if f0 == 0:
        return x
    hi = step
    for _ in range(max_expand):
        fh = f(hi)
        if np.sign(fh) != np.sign(f0):
            t = brentq(f, 0.0, hi, xtol=1e-12)
            return x + t * direction
        hi *= 2
    return None


def _newton(encoder, component, x, target, tol, max_iter=50):
    for _ in range(max_iter):
        r = encoder.encode(x[None])[0, component] - target
        if abs(r) < tol:
            return x
        g = encoder.encoder_jacobian(x[None])[0, component]
        gg = g @ g
        if gg < 1e-20:
            return None
        x = x - 0.8 * r * g / gg
    return None


def solve_level(encoder, component, x, target, step, tol=1e-8):
    """Point near x with e_j = target: bisection along ∇e_j, damped Newton as fallback."""
    g = encoder.encoder_jacobian(x[None])[0, component]
    n = np.linalg.norm(g)
    sol = None
    if n > 1e-12:
        cur = encoder.encode(x[None])[0, component]
        d = np.sign(target - cur) * g / n
        sol = _line_root(encoder, component, x, d, target, step)
    if sol is None or abs(encoder.encode(sol[None])[0, component] - target) > tol:
        sol = _newton(encoder, component, x if sol is None else sol, target, tol)
    return sol


def extract_path(encoder, component: int, z_range, start, method: str = "root_find", step: float = 0.02,
                 max_steps: int = 5000, bounds=None) -> Path:
    """Trace a path through data space along which e_component sweeps ``z_range``.

    root_find: from the current point, solve for the next level z + Δz on the line along ∇e,
    with Δz = step·‖∇e‖ so each move covers roughly ``step`` in data space.
    gradient_follow: move ``step`` along the normalised gradient, then re-project the
    point onto the level predicted by the first-order change.
    """
    if method not in ("root_find", "gradient_follow"):
        raise ValueError(f"unknown method {method!r}")
    z0, z1 = map(float, z_range)
    sign = 1.0 if z1 >= z0 else -1.0
    x = solve_level(encoder, component, np.asarray(start, dtype=float), z0, step)
    if x is None:
        return Path(np.asarray(start, dtype=float)[None], truncated=True)
    pts = [x]
    z = z0
    truncated = False
    for _ in range(max_steps):
        g = encoder.encoder_jacobian(x[None])[0, component]
        gn = np.linalg.norm(g)
        if gn < 1e-12:
            truncated = True
            break
        z_next = z + sign * step * gn
        last = sign * (z_next - z1) >= 0
        if last:
            z_next = z1
        if method == "root_find":
            nxt = solve_level(encoder, component, x, z_next, step)
        else:
            frac = abs(z_next - z) / (step * gn)
            guess = x + sign * frac * step * g / gn
            nxt = solve_level(encoder, component, guess, z_next, step)
        if nxt is None or (bounds is not None and (np.any(nxt < bounds[0]) or np.any(nxt > bounds[1]))):
            truncated = True
            break
        x, z = nxt, z_next
        pts.append(x)
        if last:
            break
    else:
        truncated = True
    return Path(np.array(pts), truncated=truncated)


def z_range_from_mfep(encoder, component: int, mfep: Path) -> tuple[float, float]:
    """Encoding values at the MFEP ends, read off the cubic fit against arc length."""
    s = mfep.arclength
    _, coef = _r2_cubic(s, encoder.encode(mfep.points)[:, component])
    return float(np.polyval(coef, s[0])), float(np.polyval(coef, s[-1]))


def point_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    poly = np.atleast_2d(poly)
    if len(poly) == 1:
        return np.linalg.norm(points - poly[0], axis=1)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    t = np.clip(np.einsum("nsd,sd->ns", points[:, None] - a[None], ab) / denom, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(points[:, None] - proj, axis=2), axis=1)


@dataclass
class PathMetrics:
    chamfer: float
    hausdorff: float
    p95: float
    d_mfep_to_path: float
    d_path_to_mfep: float
    component: int = -1
    r2: float = float("nan")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def path_metrics(path: Path, mfep: Path, resample: int | None = 256) -> PathMetrics:
    """Directed point-to-polyline distances both ways; chamfer averages the two means."""
    a = path.resample(resample).points if resample and len(path.points) > 1 else path.points
    b = mfep.resample(resample).points if resample and len(mfep.points) > 1 else mfep.points
    d_path = point_to_polyline(a, mfep.points)
    d_mfep = point_to_polyline(b, path.points)
    return PathMetrics(
        chamfer=float(0.5 * (d_path.mean() + d_mfep.mean())),
        hausdorff=float(max(d_path.max(), d_mfep.max())),
        p95=float(max(np.percentile(d_path, 95), np.percentile(d_mfep, 95))),
        d_mfep_to_path=float(d_mfep.mean()),
        d_path_to_mfep=float(d_path.mean()),
    )


def evaluate_encoder(encoder, mfep: Path, method: str = "root_find", step: float = 0.02,
                     bounds=((-2.0, -1.0), (1.5, 2.5))) -> tuple[PathMetrics, Path]:
    """Full pipeline for one trained encoder: pick component, extract path, score it.

    ``bounds`` is (lower corner, upper corner); the trace stops if it leaves the box.
    """
    comp, r2, _ = best_parameterizing_component(encoder, mfep)
    z_range = z_range_from_mfep(encoder, comp, mfep)
    box = None if bounds is None else tuple(np.asarray(b, dtype=float) for b in bounds)
    path = extract_path(encoder, comp, z_range, mfep.points[0], method, step, bounds=box)
    m = path_metrics(path, mfep)
    m.component, m.r2 = comp, r2
    return m, path


@dataclass
class SeedResult:
    kind: str
    seed: int
    metrics: PathMetrics | None
    error: str | None = None


@dataclass
class ProtocolSummary:
    kind: str
    kept_seeds: list
    dropped_seed: int | None
    failed_seeds: list
    mean: dict = field(default_factory=dict)
    sd: dict = field(default_factory=dict)


METRIC_FIELDS = ("component", "chamfer", "hausdorff", "p95", "d_mfep_to_path", "d_path_to_mfep")


def summarize_seeds(results: list[SeedResult]) -> ProtocolSummary:
    """Drop the worst-Chamfer seed and report mean and standard deviation of the rest."""
    kind = results[0].kind
    ok = [r for r in results if r.metrics is not None]
    failed = [r.seed for r in results if r.metrics is None]
    if len(ok) < 2:
        raise ValueError(f"{kind}: need at least two successful seeds, got {len(ok)}")
    worst = max(ok, key=lambda r: r.metrics.chamfer)
    kept = [r for r in ok if r is not worst]
    summary = ProtocolSummary(kind, [r.seed for r in kept], worst.seed, failed)
    for f in METRIC_FIELDS:
        vals = np.array([getattr(r.metrics, f) for r in kept], dtype=float)
        summary.mean[f] = float(vals.mean())
        summary.sd[f] = float(vals.std())
    return summary


def seed_protocol(kinds, n_seeds: int, train_and_evaluate, first_seed: int = 42, map_fn=map
                  ) -> tuple[list[ProtocolSummary], list[SeedResult]]:
    """Run ``train_and_evaluate(kind, seed) -> PathMetrics`` over seeds first_seed..first_seed+n-1."""
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    jobs = [(k, first_seed + i) for k in kinds for i in range(n_seeds)]

    def run(job):
        kind, seed = job
        try:
            return SeedResult(kind, seed, train_and_evaluate(kind, seed))
        except Exception as exc:  # recorded and excluded per seed
            log.warning("%s seed %d failed: %s", kind, seed, exc)
            return SeedResult(kind, seed, None, f"{type(exc).__name__}: {exc}")

    results = list(map_fn(run, jobs))
    summaries = [summarize_seeds([r for r in results if r.kind == k]) for k in kinds]
    return summaries, results


def write_table2_csv(path, summaries: list[ProtocolSummary], header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        cols = ["model"]
        for f in METRIC_FIELDS:
            name = "param_comp" if f == "component" else f
            cols += [f"{name}_mean", f"{name}_sd"]
        w.writerow(cols + ["n_kept", "dropped_seed", "failed_seeds"])
        for s in summaries:
            row = [s.kind]
            for f in METRIC_FIELDS:
                row += [f"{s.mean[f]:.6f}", f"{s.sd[f]:.6f}"]
            w.writerow(row + [len(s.kept_seeds), s.dropped_seed, ";".join(map(str, s.failed_seeds))])
