"""Synthetic datasets with analytic densities and scores.

Every generator is a pure function of its seed.  Distributions that have a
closed-form density carry ``log_density`` / ``score`` callbacks; the manifold
datasets only record their generating constraint and intrinsic dimension.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp
from sklearn.datasets import make_s_curve, make_swiss_roll


class ConfigError(ValueError):
    pass


class StepSizeError(RuntimeError):
    pass


@dataclass
class AnalyticDistribution:
    """Density known up to (possibly) a constant, with its exact score."""

    name: str
    dim: int
    log_density: Callable[[np.ndarray], np.ndarray]
    score: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[int, int], np.ndarray] | None = None

    def density(self, y) -> np.ndarray:
        return np.exp(self.log_density(np.atleast_2d(y)))


@dataclass
class Dataset:
    name: str
    samples: np.ndarray
    seed: int | None = None
    distribution: AnalyticDistribution | None = None
    intrinsic_dim: int | None = None
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


# ---------------------------------------------------------------------------
# Gaussians


def standard_normal_distribution(p: int) -> AnalyticDistribution:
    const = -0.5 * p * np.log(2 * np.pi)

    def log_density(y):
        y = np.atleast_2d(y)
        return const - 0.5 * np.sum(y * y, axis=-1)

    def sampler(seed, n):
        return np.random.default_rng(seed).standard_normal((n, p))

    return AnalyticDistribution("standard_normal", p, log_density, lambda y: -np.atleast_2d(y), sampler)


def standard_normal(p: int = 2, n: int = 10_000, seed: int = 42) -> Dataset:
    if p < 1 or n < 1:
        raise ConfigError("standard_normal needs p >= 1 and n >= 1")
    dist = standard_normal_distribution(p)
    return Dataset("standard_normal", dist.sampler(seed, n), seed, dist, intrinsic_dim=p,
                   config={"p": p, "n": n})


MIXTURE_MEANS = np.array([[-1.1, -1.1], [1.1, -0.9], [-0.33, 1.0]])
MIXTURE_SIGMA = 0.66


def gaussian_mixture_distribution(means=MIXTURE_MEANS, sigma=MIXTURE_SIGMA, weights=None) -> AnalyticDistribution:
    """Isotropic Gaussian mixture with a shared standard deviation."""
    means = np.asarray(means, dtype=float)
    k, p = means.shape
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    log_w = np.log(weights)
    const = -0.5 * p * np.log(2 * np.pi * sigma**2)

    def _component_logs(y):
        y = np.atleast_2d(y)
        d2 = np.sum((y[:, None, :] - means[None]) ** 2, axis=-1)
        return log_w + const - 0.5 * d2 / sigma**2

    def log_density(y):
        return logsumexp(_component_logs(y), axis=1)

    def score(y):
        y = np.atleast_2d(y)
        logs = _component_logs(y)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return (resp @ means - y) / sigma**2

    def sampler(seed, n):
        rng = np.random.default_rng(seed)
        labels = rng.choice(k, size=n, p=weights)
        return means[labels] + sigma * rng.standard_normal((n, p))

    return AnalyticDistribution("trimodal_mixture", p, log_density, score, sampler)


def trimodal_mixture(n: int = 10_000, seed: int = 42) -> Dataset:
    dist = gaussian_mixture_distribution()
    return Dataset("trimodal_mixture", dist.sampler(seed, n), seed, dist, intrinsic_dim=2,
                   config={"n": n})


# ---------------------------------------------------------------------------
# Müller–Brown


@dataclass
class MuellerBrown:
    """Müller–Brown potential with the usual literature constants."""

    A: np.ndarray = field(default_factory=lambda: np.array([-200.0, -100.0, -170.0, 15.0]))
    a: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0, -6.5, 0.7]))
    b: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 11.0, 0.6]))
    c: np.ndarray = field(default_factory=lambda: np.array([-10.0, -10.0, -6.5, 0.7]))
    x0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, -0.5, -1.0]))
    y0: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.5, 1.5, 1.0]))
    kT: float = 8.0

    def _terms(self, p):
        p = np.asarray(p, dtype=float)
        dx = p[..., 0:1] - self.x0
        dy = p[..., 1:2] - self.y0
        e = self.A * np.exp(self.a * dx**2 + self.b * dx * dy + self.c * dy**2)
        return dx, dy, e

    def potential(self, p) -> np.ndarray:
        return np.sum(self._terms(p)[2], axis=-1)

    def gradient(self, p) -> np.ndarray:
        dx, dy, e = self._terms(p)
        gx = np.sum(e * (2 * self.a * dx + self.b * dy), axis=-1)
        gy = np.sum(e * (self.b * dx + 2 * self.c * dy), axis=-1)
        return np.stack([gx, gy], axis=-1)

    def force(self, p) -> np.ndarray:
        return -self.gradient(p)

    def minima(self, starts=((-0.5, 1.5), (0.0, 0.5), (0.6, 0.0))) -> np.ndarray:
        """Local minima by BFGS from the given starts, ordered as the starts."""
        from scipy.optimize import minimize

        out = []
        for s in starts:
            res = minimize(self.potential, np.asarray(s, float), jac=self.gradient, method="BFGS",
                           options={"gtol": 1e-10})
            out.append(res.x)
        return np.array(out)

    def distribution(self) -> AnalyticDistribution:
        """Boltzmann density exp(-U/kT), unnormalised."""
        return AnalyticDistribution(
            "mueller_brown",
            2,
            lambda y: -self.potential(np.atleast_2d(y)) / self.kT,
            lambda y: -self.gradient(np.atleast_2d(y)) / self.kT,
        )


def langevin_sample(
    potential,
    n_steps: int,
    dt: float = 1e-4,
    kT: float = 8.0,
    seed: int = 0,
    init=None,
    burn_in: int = 1000,
    thin: int = 10,
    bound: float = 10.0,
) -> np.ndarray:
    """Euler–Maruyama overdamped Langevin, vectorised over independent chains.

    ``init`` is (n_chains, p).  Returns the kept states of all chains stacked
    time-major, shape (n_kept * n_chains, p).
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    x = np.array(np.atleast_2d(init), dtype=float)
    rng = np.random.default_rng(seed)
    noise_scale = np.sqrt(2.0 * kT * dt)
    kept = []
    for step in range(n_steps):
        x = x - potential.gradient(x) * dt + noise_scale * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
            raise StepSizeError(f"Langevin trajectory left |x| <= {bound} at step {step}; use a smaller dt")
        if step >= burn_in and (step - burn_in) % thin == 0:
            kept.append(x.copy())
    if not kept:
        return np.empty((0, x.shape[1]))
    return np.concatenate(kept, axis=0)


def mueller_brown_dataset(n: int = 10_000, seed: int = 42, kT: float = 8.0, dt: float = 1e-4,
                          burn_in: int = 1000, thin: int = 10) -> Dataset:
    """Boltzmann samples from three chains started at the three minima."""
    mb = MuellerBrown(kT=kT)
    init = mb.minima()
    per_chain = -(-n // len(init))
    traj = langevin_sample(mb, burn_in + per_chain * thin, dt=dt, kT=kT, seed=seed, init=init,
                           burn_in=burn_in, thin=thin)
    return Dataset("mueller_brown", traj[:n], seed, mb.distribution(), intrinsic_dim=2,
                   config={"n": n, "kT": kT, "dt": dt, "burn_in": burn_in, "thin": thin})


# ---------------------------------------------------------------------------
# Manifold datasets

LINE_ANGLE = np.pi / 6
LINE_NOISE = 0.05


def _gaussian_line(rng, n):
    u = np.array([np.cos(LINE_ANGLE), np.sin(LINE_ANGLE)])
    u_perp = np.array([-u[1], u[0]])
    t = rng.standard_normal(n)
    clean = t[:, None] * u
    return clean, LINE_NOISE * rng.standard_normal(n)[:, None] * u_perp


def _parabola(rng, n):
    t = rng.uniform(-1.5, 1.5, n)
    return np.column_stack([t, t**2]), 0.0


def _exponential(rng, n):
    t = rng.uniform(-2.0, 1.0, n)
    return np.column_stack([t, np.exp(t)]), 0.0


def _helix_slice(rng, n):
    t = rng.uniform(0.0, 2 * np.pi, n)
    r = rng.uniform(0.8, 1.2, n)
    return np.column_stack([r * np.cos(t), r * np.sin(t), t / np.pi]), 0.0


def _grid_sum(rng, n):
    xy = rng.uniform(-1.0, 1.0, (n, 2))
    return np.column_stack([xy, xy.sum(axis=1)]), 0.0


def _s_curve(rng, n):
    X, _ = make_s_curve(n, noise=0.0, random_state=int(rng.integers(2**31 - 1)))
    return X, 0.0


def _swiss_roll(rng, n):
    X, _ = make_swiss_roll(n, noise=0.0, random_state=int(rng.integers(2**31 - 1)))
    return X, 0.0


def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi


# name -> (generator, ambient dim, intrinsic dim, constraint residual on clean points)
MANIFOLDS: dict[str, tuple[Callable, int, int, Callable]] = {
    "gaussian_line": (_gaussian_line, 2, 1,
                      lambda X: X @ np.array([-np.sin(LINE_ANGLE), np.cos(LINE_ANGLE)])),
    "parabola": (_parabola, 2, 1, lambda X: X[:, 1] - X[:, 0] ** 2),
    "exponential": (_exponential, 2, 1, lambda X: X[:, 1] - np.exp(X[:, 0])),
    "helix_slice": (_helix_slice, 3, 2, lambda X: _wrap(np.arctan2(X[:, 1], X[:, 0]) - np.pi * X[:, 2])),
    "grid_sum": (_grid_sum, 3, 2, lambda X: X[:, 2] - X[:, 0] - X[:, 1]),
    # sklearn: x = sin t, z = sign(t)(cos t - 1)  =>  x² + (1 - |z|)² = 1
    "s_curve": (_s_curve, 3, 2, lambda X: X[:, 0] ** 2 + (1 - np.abs(X[:, 2])) ** 2 - 1),
    # sklearn: (t cos t, h, t sin t)  =>  polar angle of (x, z) equals its radius mod 2π
    "swiss_roll": (_swiss_roll, 3, 2,
                   lambda X: _wrap(np.arctan2(X[:, 2], X[:, 0]) - np.hypot(X[:, 0], X[:, 2]))),
}


def manifold_dataset(name: str, n: int = 10_000, seed: int = 42, return_clean: bool = False):
    """Point cloud on one of the low-dimensional manifolds.

    With ``return_clean=True`` also returns the pre-noise points so callers can
    check the generating constraint.
    """
    if name not in MANIFOLDS:
        raise ConfigError(f"unknown manifold dataset {name!r}; choose from {sorted(MANIFOLDS)}")
    gen, p, K, _ = MANIFOLDS[name]
    rng = np.random.default_rng(seed)
    clean, noise = gen(rng, n)
    ds = Dataset(name, clean + noise, seed, None, intrinsic_dim=K, config={"n": n, "p": p})
    return (ds, clean) if return_clean else ds


def constraint_residual(name: str, X) -> np.ndarray:
    return MANIFOLDS[name][3](np.asarray(X, dtype=float))


# ---------------------------------------------------------------------------
# CSV interchange


def save_samples_csv(path, samples: np.ndarray, meta: dict | None = None):
    path = Path(path)
    p = samples.shape[1]
    header = ",".join(f"x{i + 1}" for i in range(p))
    np.savetxt(path, samples, delimiter=",", header=header, comments="", fmt="%.17g")
    if meta is not None:
        path.with_suffix(path.suffix + ".meta").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_samples_csv(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    samples = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    sidecar = path.with_suffix(path.suffix + ".meta")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return samples, meta
