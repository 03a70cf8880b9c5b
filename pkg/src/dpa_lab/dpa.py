"""Distributional principal autoencoder.

A deterministic encoder ``e: R^p -> R^k_max`` and a stochastic decoder fed
``[e_1..e_k(x), ε_{k+1..k_max}]`` with ε ~ N(0, I).  Training minimises the
weighted sum over k = 0..k_max of the energy-score terms

    L_k = E‖X - Y_k‖^β - ½ E‖Y_k - Y_k'‖^β,

where Y_k, Y_k' are independent decoder draws sharing the same latent prefix.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from . import nn
from .nn import Mlp, Tensor, TrainingError

log = logging.getLogger(__name__)


@dataclass
class EnergyScoreEstimate:
    reconstruction: float
    pairwise: float
    m: int
    se: float = float("nan")  # standard error of ``value`` across inputs

    @property
    def value(self) -> float:
        return self.reconstruction - 0.5 * self.pairwise


def energy_score(x: np.ndarray, draws: np.ndarray, beta: float) -> EnergyScoreEstimate:
    """Unbiased Monte-Carlo energy score of ``draws`` (m, n, p) against ``x`` (n, p)."""
    draws = np.asarray(draws, dtype=float)
    m = draws.shape[0]
    if m < 2:
        raise ValueError("need m >= 2 decoder draws for the pairwise term")
    x = np.asarray(x, dtype=float)
    recon = np.mean(np.linalg.norm(draws - x[None], axis=-1) ** beta, axis=0)
    pair = np.mean(
        [np.linalg.norm(draws[i] - draws[j], axis=-1) ** beta for i, j in combinations(range(m), 2)],
        axis=0,
    )
    per_input = recon - 0.5 * pair
    se = per_input.std(ddof=1) / np.sqrt(len(per_input)) if len(per_input) > 1 else float("nan")
    return EnergyScoreEstimate(float(recon.mean()), float(pair.mean()), m, float(se))


def energy_score_exact(x, support, probs, beta: float) -> float:
    """Population energy score of a discrete law (support (s, p), probs (s,)) at ``x``."""
    support = np.atleast_2d(np.asarray(support, dtype=float))
    probs = np.asarray(probs, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    recon = probs @ (np.linalg.norm(support - x, axis=-1) ** beta)
    d = np.linalg.norm(support[:, None] - support[None], axis=-1) ** beta
    return float(recon - 0.5 * probs @ d @ probs)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 500
    lr: float = 1e-3
    m: int = 2
    seed: int = 42
    omega: tuple | None = None  # weights over k = 0..k_max; uniform when None
    log_every: int = 0
    lr_schedule: str = "constant"  # or "cosine": decays to lr_floor·lr by the last epoch
    lr_floor: float = 0.01


@dataclass
class TrainResult:
    model: "DpaModel"
    curves: np.ndarray  # (epochs, k_max + 1) mean L_k per epoch
    seconds: float = 0.0
    config: TrainConfig = field(default_factory=TrainConfig)

    def write_curves_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "k", "L_k"])
            for epoch, row in enumerate(self.curves):
                for k, v in enumerate(row):
                    w.writerow([epoch, k, repr(float(v))])


class DpaModel:
    """Encoder/decoder pair plus input standardisation constants.

    All public methods take and return raw (unstandardised) data coordinates.
    """

    def __init__(self, p: int, k_max: int, beta: float = 2.0, hidden: int = 256, hidden_layers: int = 2,
                 residual: bool = True, seed: int = 0, encoder: Mlp | None = None, decoder: Mlp | None = None):
        if not 0 < beta <= 2:
            raise ValueError(f"beta must lie in (0, 2], got {beta}")
        if k_max < 1:
            raise ValueError("k_max must be >= 1")
        self.p = int(p)
        self.k_max = int(k_max)
        self.beta = float(beta)
        self.arch = {"hidden": hidden, "hidden_layers": hidden_layers, "residual": residual}
        enc_rng, dec_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        widths = [hidden] * hidden_layers
        self.encoder = encoder or Mlp([self.p, *widths, self.k_max], residual=residual, seed=enc_rng)
        self.decoder = decoder or Mlp([self.k_max, *widths, self.p], residual=residual, seed=dec_rng)
        if self.encoder.n_in != self.p or self.encoder.n_out != self.k_max:
            raise nn.DimensionError("encoder must map p -> k_max")
        if self.decoder.n_in != self.k_max or self.decoder.n_out != self.p:
            raise nn.DimensionError("decoder must map k_max -> p")
        self.shift = np.zeros(self.p)
        self.scale = np.ones(self.p)
        self.meta: dict = {}

    # -- standardisation ----------------------------------------------------
    def fit_standardization(self, X):
        X = np.asarray(X, dtype=float)
        self.shift = X.mean(axis=0)
        self.scale = X.std(axis=0)
        self.scale[self.scale == 0] = 1.0

    def to_std(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.shift) / self.scale

    def from_std(self, Xs) -> np.ndarray:
        return np.asarray(Xs) * self.scale + self.shift

    # -- inference -----------------------------------------------------------
    def named_parameters(self):
        for name, p in self.encoder.named_parameters():
            yield f"encoder.{name}", p
        for name, p in self.decoder.named_parameters():
            yield f"decoder.{name}", p

    def encode(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.p:
            raise nn.DimensionError(f"expected {self.p} data columns, got {x.shape[1]}")
        return self.encoder.predict(self.to_std(x))

    def encoder_jacobian(self, x, components=None) -> np.ndarray:
        """D_e(x) in raw coordinates, shape (n, k, p) for the chosen components."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        jac = self.encoder.jacobian(self.to_std(x)) / self.scale[None, None, :]
        return jac if components is None else jac[:, list(np.atleast_1d(components)), :]

    def _decoder_input(self, z_prefix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n, k = z_prefix.shape
        if not 0 <= k <= self.k_max:
            raise ValueError(f"latent prefix width {k} outside 0..{self.k_max}")
        return np.concatenate([z_prefix, rng.standard_normal((n, self.k_max - k))], axis=1)

    def decode(self, z_prefix, noise_seed=None) -> np.ndarray:
        """Decode a latent prefix of width k, padding the rest with fresh N(0,1) noise."""
        z_prefix = np.asarray(z_prefix, dtype=float)
        if z_prefix.ndim == 1:
            z_prefix = z_prefix[:, None] if z_prefix.size else np.empty((0, 0))
        rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
        return self.from_std(self.decoder.predict(self._decoder_input(z_prefix, rng)))

    def sample(self, n: int, noise_seed=None) -> np.ndarray:
        return self.decode(np.empty((n, 0)), noise_seed)

    def reconstruct(self, x, k: int, noise_seed=None) -> np.ndarray:
        return self.decode(self.encode(x)[:, :k], noise_seed)

    def energy_score_loss(self, x_batch, k: int, m: int = 2, noise_seed=None) -> EnergyScoreEstimate:
        """Monte-Carlo L_k on standardised data (the scale training uses)."""
        if m < 2:
            raise ValueError("m must be >= 2: the pairwise term needs two draws")
        if not 0 <= k <= self.k_max:
            raise ValueError(f"k={k} outside 0..{self.k_max}")
        xs = self.to_std(x_batch)
        rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
        z = self.encoder.predict(xs)[:, :k]
        draws = np.stack([self.decoder.predict(self._decoder_input(z, rng)) for _ in range(m)])
        return energy_score(xs, draws, self.beta)

    def per_k_losses(self, x, m: int = 8, noise_seed=0) -> np.ndarray:
        rng = np.random.default_rng(noise_seed)
        return np.array([self.energy_score_loss(x, k, m, rng).value for k in range(self.k_max + 1)])

    # -- training graph -------------------------------------------------------
    def objective(self, xs: np.ndarray, m: int, rng: np.random.Generator, omega: np.ndarray):
        """Recorded graph of Σ_k ω_k L_k on a standardised batch.

        Returns (objective tensor, per-k loss values).
        """
        B = xs.shape[0]
        K = self.k_max
        z = self.encoder(xs)
        reps = (K + 1) * m
        z_all = nn.concat([z] * reps, axis=0)
        mask = np.repeat(np.tril(np.ones((K + 1, K)), -1), m * B, axis=0)
        noise = rng.standard_normal((reps * B, K)) * (1.0 - mask)
        y = self.decoder(z_all * mask + noise).reshape(K + 1, m, B, self.p)
        recon = nn.norm_pow(y - xs[None, None], self.beta).mean(axis=(1, 2))
        pairs = list(combinations(range(m), 2))
        pair = None
        for i, j in pairs:
            term = nn.norm_pow(y[:, i] - y[:, j], self.beta).mean(axis=1)
            pair = term if pair is None else pair + term
        pair = pair * (1.0 / len(pairs))
        losses = recon - pair * 0.5
        return (losses * omega).sum(), losses.data.copy()

    # -- persistence -------------------------------------------------------------
    def save(self, path, extra_meta: dict | None = None):
        tensors = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        tensors.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        tensors["shift"] = self.shift
        tensors["scale"] = self.scale
        meta = {"kind": "dpa", "p": self.p, "k_max": self.k_max, "beta": self.beta,
                "encoder_widths": self.encoder.widths, "decoder_widths": self.decoder.widths,
                "residual": self.encoder.residual, **(extra_meta or {})}
        nn.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "DpaModel":
        tensors, meta = nn.load_checkpoint(path)
        enc = Mlp(meta["encoder_widths"], residual=meta["residual"], seed=0)
        dec = Mlp(meta["decoder_widths"], residual=meta["residual"], seed=0)
        enc.load_state_dict({k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")})
        dec.load_state_dict({k[len("decoder."):]: v for k, v in tensors.items() if k.startswith("decoder.")})
        model = cls(meta["p"], meta["k_max"], meta["beta"], encoder=enc, decoder=dec)
        model.shift = tensors["shift"]
        model.scale = tensors["scale"]
        model.meta = meta
        return model


def _omega(model: DpaModel, omega) -> np.ndarray:
    w = np.ones(model.k_max + 1) if omega is None else np.asarray(omega, dtype=float)
    if w.shape != (model.k_max + 1,) or np.any(w < 0) or np.any(w > 1):
        raise ValueError(f"omega must be k_max+1 = {model.k_max + 1} weights in [0, 1]")
    return w


def train_dpa(model: DpaModel, X, config: TrainConfig = TrainConfig(), standardize: bool = True,
              callback=None) -> TrainResult:
    """Minimise Σ_k ω_k L_k with Adam over shuffled minibatches.

    ``callback(epoch, model, curves)`` runs after every epoch.
    """
    X = np.asarray(getattr(X, "samples", X), dtype=float)
    if config.m < 2:
        raise ValueError("m must be >= 2")
    if config.lr_schedule not in ("constant", "cosine"):
        raise ValueError(f"unknown lr_schedule {config.lr_schedule!r}")
    omega = _omega(model, config.omega)
    if standardize:
        model.fit_standardization(X)
    Xs = model.to_std(X)
    rng = np.random.default_rng(config.seed)
    opt = nn.Adam(list(model.named_parameters()), lr=config.lr)
    n = len(Xs)
    bs = min(config.batch_size, n)
    curves = np.zeros((config.epochs, model.k_max + 1))
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        if config.lr_schedule == "cosine":
            frac = epoch / max(config.epochs - 1, 1)
            opt.lr = config.lr * (config.lr_floor + (1 - config.lr_floor) * 0.5 * (1 + np.cos(np.pi * frac)))
        perm = rng.permutation(n)
        totals = np.zeros(model.k_max + 1)
        n_batches = 0
        for b, start in enumerate(range(0, n - bs + 1, bs)):
            xb = Xs[perm[start:start + bs]]
            loss, per_k = model.objective(xb, config.m, rng, omega)
            if not np.isfinite(loss.data):
                bad = [k for k in range(model.k_max + 1) if not np.isfinite(per_k[k])]
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}, k={bad}",
                                    epoch=epoch, batch=b, k=bad)
            opt.zero_grad()
            loss.backward()
            opt.step()
            totals += per_k
            n_batches += 1
        curves[epoch] = totals / n_batches
        if config.log_every and (epoch + 1) % config.log_every == 0:
            log.info("epoch %d  L_k=%s  (%.1fs)", epoch + 1, np.round(curves[epoch], 4),
                     time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, model, curves[: epoch + 1])
    return TrainResult(model, curves, time.perf_counter() - t0, config)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["omega"] = None if config.omega is None else list(config.omega)
    return d
