"""Diagnostics for extraneous latents U given informative latents Z.

Deterministic regime: held-out R² of U on Z, Levina–Bickel intrinsic-dimension drop,
Kozachenko–Leonenko conditional entropy.  Stochastic regime: a double conditional
randomization test with an HSIC statistic.  Extras: distance correlation and a
KSG mutual-information estimate.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform
from scipy.special import digamma, gammaln
from sklearn.ensemble import RandomForestRegressor
from sklearn.feature_selection import mutual_info_regression
from sklearn.kernel_ridge import KernelRidge
from sklearn.linear_model import Ridge
from sklearn.metrics import r2_score
from sklearn.model_selection import train_test_split
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import PolynomialFeatures, SplineTransformer, StandardScaler

log = logging.getLogger(__name__)

JITTER = 1e-12


def _2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _dejitter(X: np.ndarray, rng=None, what="points") -> np.ndarray:
    """Add N(0, 1e-12) noise when rows coincide so kNN distances stay positive."""
    if len(np.unique(X, axis=0)) < len(X):
        warnings.warn(f"duplicate {what}: adding {JITTER:g} jitter", RuntimeWarning, stacklevel=3)
        rng = rng or np.random.default_rng(0)
        X = X + JITTER * rng.standard_normal(X.shape)
    return X


# --- regression -----------------------------------------------------------------


@dataclass
class R2Result:
    best: float
    by_family: dict


def _select(models, Xtr, ytr, rng_seed):
    """Pick the candidate with the best validation R² on an inner split, refit on all of train."""
    Xa, Xv, ya, yv = train_test_split(Xtr, ytr, test_size=0.2, random_state=rng_seed)
    best, best_score = None, -np.inf
    for make in models:
        m = make().fit(Xa, ya)
        s = r2_score(yv, m.predict(Xv))
        if s > best_score:
            best, best_score = make, s
    return best().fit(Xtr, ytr)


def regress_r2(U, Z, seed: int = 0, test_size: float = 0.2, n_trees: int = 500,
               families=("spline", "forest", "poly")) -> R2Result:
    """Best held-out R² of U on Z across spline, random-forest and polynomial regressors."""
    U, Z = _2d(U), _2d(Z)
    if len(U) < 50:
        raise ValueError("need at least 50 rows")
    if np.all(np.ptp(U, axis=0) == 0):
        return R2Result(1.0, {f: 1.0 for f in families})
    Ztr, Zte, Utr, Ute = train_test_split(Z, U, test_size=test_size, random_state=seed)
    y_tr = Utr if Utr.shape[1] > 1 else Utr[:, 0]
    y_te = Ute if Ute.shape[1] > 1 else Ute[:, 0]
    out = {}
    for fam in families:
        if fam == "spline":
            cands = [lambda n=n: make_pipeline(StandardScaler(), SplineTransformer(n_knots=n, degree=3),
                                               Ridge(alpha=1e-6)) for n in (8, 16, 32, 64)]
            model = _select(cands, Ztr, y_tr, seed)
        elif fam == "poly":
            cands = [lambda d=d: make_pipeline(StandardScaler(), PolynomialFeatures(d, include_bias=False),
                                               StandardScaler(), Ridge(alpha=1e-6))
                     for d in (3, 5, 7, 9)]
            model = _select(cands, Ztr, y_tr, seed)
        elif fam == "forest":
            model = RandomForestRegressor(n_estimators=n_trees, min_samples_leaf=2, random_state=seed,
                                          n_jobs=1).fit(Ztr, y_tr)
        else:
            raise ValueError(f"unknown regressor family {fam!r}")
        out[fam] = float(r2_score(y_te, model.predict(Zte)))
    return R2Result(max(out.values()), out)


# --- intrinsic dimension -------------------------------------------------------------


def levina_bickel_pointwise(X, k: int = 20) -> np.ndarray:
    """Per-point MLE m̂(x) = [ (1/(k-1)) Σ_{j<k} log(T_k/T_j) ]⁻¹."""
    X = _2d(X)
    if not len(X) > k >= 3:
        raise ValueError("need N > k >= 3")
    X = _dejitter(X)
    d, _ = cKDTree(X).query(X, k=k + 1)
    T = d[:, 1:]
    logs = np.log(T[:, -1:] / T[:, :-1])
    return (k - 1) / np.sum(logs, axis=1)


@dataclass
class IdEstimate:
    estimate: float
    quantiles: tuple  # 2.5 / 50 / 97.5 % bootstrap quantiles


def levina_bickel_id(X, k: int = 20, n_bootstrap: int = 200, seed: int = 0) -> IdEstimate:
    m = levina_bickel_pointwise(X, k)
    rng = np.random.default_rng(seed)
    boots = np.array([m[rng.integers(0, len(m), len(m))].mean() for _ in range(n_bootstrap)])
    return IdEstimate(float(m.mean()), tuple(np.percentile(boots, [2.5, 50, 97.5])))


def id_drop(Z, U, k: int = 20, n_bootstrap: int = 200, seed: int = 0) -> IdEstimate:
    """ID(Z, U) - ID(Z) with paired bootstrap over points."""
    Z, U = _2d(Z), _2d(U)
    m_z = levina_bickel_pointwise(Z, k)
    m_zu = levina_bickel_pointwise(np.hstack([Z, U]), k)
    rng = np.random.default_rng(seed)
    n = len(Z)
    boots = []
    for _ in range(n_bootstrap):
        idx = rng.integers(0, n, n)
        boots.append(m_zu[idx].mean() - m_z[idx].mean())
    return IdEstimate(float(m_zu.mean() - m_z.mean()), tuple(np.percentile(boots, [2.5, 50, 97.5])))


# --- entropy -------------------------------------------------------------------------


def kl_entropy(X, k: int = 5) -> float:
    """Kozachenko–Leonenko differential entropy in nats."""
    X = _dejitter(_2d(X))
    n, d = X.shape
    eps = cKDTree(X).query(X, k=k + 1)[0][:, -1]
    log_cd = 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1)
    return float(digamma(n) - digamma(k) + log_cd + d * np.mean(np.log(eps)))


def conditional_entropy(U, Z, k: int = 5) -> float:
    """H(U | Z) = H(U, Z) - H(Z)."""
    U, Z = _2d(U), _2d(Z)
    if len(U) < 100:
        raise ValueError("need at least 100 rows")
    return kl_entropy(np.hstack([U, Z]), k) - kl_entropy(Z, k)


# --- HSIC ----------------------------------------------------------------------------


def _gaussian_gram(A: np.ndarray) -> np.ndarray:
    D = pdist(A)
    bw = np.median(D) if len(D) else 0.0
    if bw <= 0:
        bw = D.mean() if len(D) and D.mean() > 0 else 1.0
    return np.exp(-squareform(D) ** 2 / (2 * bw**2))


def _center(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=0) - K.mean(axis=1)[:, None] + K.mean()


def hsic(A, B) -> float:
    """Biased HSIC V-statistic trace(K H L H)/N² with median-heuristic Gaussian kernels."""
    A, B = _2d(A), _2d(B)
    if len(A) != len(B):
        raise ValueError("row counts differ")
    if len(A) < 20:
        raise ValueError("need at least 20 rows")
    K, L = _gaussian_gram(A), _gaussian_gram(B)
    return float(np.sum(_center(K) * L) / len(A) ** 2)


def hsic_permutation_test(A, B, n_perm: int = 200, seed: int = 0) -> tuple[float, float]:
    """(statistic, permutation p-value)."""
    A, B = _2d(A), _2d(B)
    Kc, L = _center(_gaussian_gram(A)), _gaussian_gram(B)
    n = len(A)
    obs = np.sum(Kc * L) / n**2
    rng = np.random.default_rng(seed)
    null = np.empty(n_perm)
    for i in range(n_perm):
        p = rng.permutation(n)
        null[i] = np.sum(Kc * L[np.ix_(p, p)]) / n**2
    return float(obs), float((1 + np.sum(null >= obs)) / (n_perm + 1))


# --- Gaussian-process conditional model ---------------------------------------------


class GpConditional:
    """GP regression of a scalar U on Z with an RBF kernel.

    Lengthscale by the median heuristic on Z; signal and noise variances by a 5×5
    log-grid search over the marginal likelihood.
    """

    def __init__(self, grid_size: int = 5):
        self.grid_size = grid_size

    def _kernel(self, A, B):
        d2 = np.sum((A[:, None] - B[None]) ** 2, axis=-1)
        return self.signal * np.exp(-0.5 * d2 / self.lengthscale**2)

    def fit(self, Z, U) -> "GpConditional":
        Z, u = _2d(Z), np.asarray(U, dtype=float).ravel()
        self.Z = Z
        self.u_mean = u.mean()
        y = u - self.u_mean
        med = np.median(pdist(Z))
        self.lengthscale = med if med > 0 else 1.0
        var = max(y.var(), 1e-12)
        d2 = squareform(pdist(Z)) ** 2
        base = np.exp(-0.5 * d2 / self.lengthscale**2)
        best = None
        for s in var * np.logspace(-2, 1, self.grid_size):
            for nv in var * np.logspace(-6, 0, self.grid_size):
                chol = self._chol(s * base, nv)
                alpha = cho_solve(chol, y)
                ll = -0.5 * y @ alpha - np.sum(np.log(np.diag(chol[0]))) - 0.5 * len(y) * np.log(2 * np.pi)
                if best is None or ll > best[0]:
                    best = (ll, s, nv)
        _, self.signal, self.noise = best
        self.chol = self._chol(self.signal * base, self.noise)
        self.alpha = cho_solve(self.chol, y)
        self.log_marginal = best[0]
        return self

    @staticmethod
    def _chol(K, noise):
        n = len(K)
        ridge = 0.0
        for _ in range(8):
            try:
                return cho_factor(K + (noise + ridge) * np.eye(n), lower=True)
            except np.linalg.LinAlgError:
                ridge = max(ridge * 100, 1e-10 * max(np.trace(K) / n, 1.0))
        raise np.linalg.LinAlgError("GP kernel matrix not positive definite after ridge escalation")

    def predict(self, Z) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance of U (latent variance plus noise)."""
        Z = _2d(Z)
        Ks = self._kernel(Z, self.Z)
        mu = Ks @ self.alpha + self.u_mean
        v = cho_solve(self.chol, Ks.T)
        var = self.signal - np.sum(Ks * v.T, axis=1) + self.noise
        return mu, np.maximum(var, 1e-300)


# --- double CRT ----------------------------------------------------------------------


@dataclass
class CrtReport:
    p_values: np.ndarray
    ks_D: float
    ks_p: float
    alpha: float = 0.05
    observed: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def frac_below(self) -> float:
        return float(np.mean(self.p_values < self.alpha))


def double_crt(decode, X, Z, U, B: int = 200, n_reps: int = 50, n_sub: int = 200, n_fit: int = 500,
               seed: int = 0, alpha: float = 0.05) -> CrtReport:
    """Double conditional randomization test of U ⫫ X | Z.

    ``decode(latents)`` maps [Z, U] rows to data space.  A GP model of U | Z is fitted on
    ``n_fit`` rows; each replication draws ``n_sub`` other rows, computes HSIC(U, X), and
    compares it with B null statistics HSIC(U_b, decode([Z, U_b])), U_b ~ N(μ(Z), σ²(Z)).
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    X, Z, U = _2d(X), _2d(Z), _2d(U)
    if U.shape[1] != 1:
        raise ValueError("the CRT handles one extraneous latent at a time")
    rng = np.random.default_rng(seed)
    n = len(X)
    perm = rng.permutation(n)
    fit_idx, pool = perm[:n_fit], perm[n_fit:]
    if len(pool) < n_sub:
        raise ValueError("not enough rows left after the GP fit for the replication subsamples")
    gp = GpConditional().fit(Z[fit_idx], U[fit_idx, 0])
    pvals, observed = np.empty(n_reps), np.empty(n_reps)
    for r in range(n_reps):
        idx = rng.choice(pool, n_sub, replace=False)
        z, u, x = Z[idx], U[idx], X[idx]
        obs = hsic(u, x)
        mu, var = gp.predict(z)
        ub = mu[None] + np.sqrt(var)[None] * rng.standard_normal((B, n_sub))
        lat = np.concatenate([np.repeat(z[None], B, axis=0), ub[..., None]], axis=2)
        xb = np.asarray(decode(lat.reshape(B * n_sub, -1))).reshape(B, n_sub, -1)
        null = np.array([hsic(ub[b], xb[b]) for b in range(B)])
        pvals[r] = (1 + np.sum(null >= obs)) / (B + 1)
        observed[r] = obs
    ks = stats.kstest(pvals, "uniform")
    return CrtReport(pvals, float(ks.statistic), float(ks.pvalue), alpha, observed)


# --- distance correlation and mutual information --------------------------------------


def _dcenter(A: np.ndarray) -> np.ndarray:
    return _center(squareform(pdist(A)))


def _residualize(Y: np.ndarray, C: np.ndarray) -> np.ndarray:
    Cs = StandardScaler().fit_transform(C)
    med = np.median(pdist(Cs[: min(len(Cs), 1000)]))
    model = KernelRidge(kernel="rbf", alpha=1e-3, gamma=0.5 / max(med, 1e-12) ** 2).fit(Cs, Y)
    return Y - model.predict(Cs)


def distance_correlation(A, B, conditional_on=None, max_n: int = 2000, seed: int = 0) -> float:
    """Biased distance correlation; with ``conditional_on`` both arguments are residualized first."""
    A, B = _2d(A), _2d(B)
    if len(A) < 50:
        raise ValueError("need at least 50 rows")
    if len(A) > max_n:
        idx = np.random.default_rng(seed).choice(len(A), max_n, replace=False)
        A, B = A[idx], B[idx]
        conditional_on = None if conditional_on is None else _2d(conditional_on)[idx]
    if conditional_on is not None:
        C = _2d(conditional_on)
        A, B = _residualize(A, C), _residualize(B, C)
    a, b = _dcenter(A), _dcenter(B)
    dcov2 = np.mean(a * b)
    dvar = np.sqrt(np.mean(a * a) * np.mean(b * b))
    return float(np.sqrt(max(dcov2, 0.0) / dvar)) if dvar > 0 else 0.0


def knn_mutual_information(a, B, k: int = 3, seed: int = 0) -> float:
    """max_j I(a; B_j) in nats for a single column ``a``; KSG estimate on standardized data."""
    a, B = _2d(a), _2d(B)
    if a.shape[1] != 1:
        raise ValueError("a must be a single column")
    if len(a) < 100:
        raise ValueError("need at least 100 rows")
    a = StandardScaler().fit_transform(a).ravel()
    B = StandardScaler().fit_transform(B)
    return float(np.max(mutual_info_regression(B, a, n_neighbors=k, random_state=seed)))


# --- reports ---------------------------------------------------------------------------


@dataclass
class DeterminismReport:
    dataset: str
    beta: float
    r2: float
    id_drop: tuple
    h_u_given_z: float
    r2_by_family: dict = field(default_factory=dict)


def determinism_report(dataset: str, beta: float, Z, U, seed: int = 0, n_trees: int = 500,
                       n_bootstrap: int = 200, k_id: int = 20, k_entropy: int = 5) -> DeterminismReport:
    r2 = regress_r2(U, Z, seed=seed, n_trees=n_trees)
    drop = id_drop(Z, U, k=k_id, n_bootstrap=n_bootstrap, seed=seed)
    h = conditional_entropy(U, Z, k=k_entropy)
    return DeterminismReport(dataset, beta, r2.best, drop.quantiles, h, r2.by_family)


def write_table3_csv(path, reports: list[DeterminismReport], header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["dataset", "beta", "r2", "id_drop_q025", "id_drop_q50", "id_drop_q975", "h_u_given_z"])
        for r in reports:
            w.writerow([r.dataset, r.beta, f"{r.r2:.6f}", *(f"{q:.6f}" for q in r.id_drop), f"{r.h_u_given_z:.4f}"])


def write_crt_csv(path, report: CrtReport, header_comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["replication", "p_value", "observed_hsic"])
        for i, (p, o) in enumerate(zip(report.p_values, report.observed)):
            w.writerow([i, f"{p:.6f}", repr(float(o))])
        fh.write(f"# summary ks_D={report.ks_D:.6f} ks_p={report.ks_p:.6f} frac_below={report.frac_below:.4f}\n")
