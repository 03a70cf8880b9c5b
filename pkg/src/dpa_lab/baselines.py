"""Autoencoder baselines: AE, VAE, β-VAE and β-TC-VAE.

Variational decoders output a mean with unit observation variance, so the
reconstruction term is ½‖x - x̂‖².  The β-TC-VAE splits the KL term into index-code
mutual information, total correlation and dimension-wise KL, estimated with
minibatch-weighted sampling.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import ConfigError
from .nn import Mlp, Tensor, TrainingError

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    beta: float = 1.0  # KL weight (VAE, β-VAE) or TC weight (β-TC-VAE)
    alpha: float = 1.0  # index-code MI weight
    gamma: float = 1.0  # dimension-wise KL weight
    epochs: int = 1200
    batch_size: int = 5000
    lr: float = 1e-3
    hidden: int = 100
    hidden_layers: int = 2
    latent: int = 2

    @property
    def variational(self) -> bool:
        return self.kind != "ae"


PRESETS = {
    "ae": BaselineConfig("ae"),
    "vae": BaselineConfig("vae"),
    "beta_vae": BaselineConfig("beta_vae", beta=4.0),
    "beta_tc_vae": BaselineConfig("beta_tc_vae", alpha=1.0, beta=6.0, gamma=1.0, batch_size=256),
}


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(μ, σ²) ‖ N(0, I)) per row."""
    return 0.5 * np.sum(mu**2 + np.exp(logvar) - logvar - 1.0, axis=-1)


def _log_normal(z: Tensor, mu: Tensor, logvar: Tensor) -> Tensor:
    d = z - mu
    return (logvar + d * d * nn.exp(-logvar) + LOG_2PI) * -0.5


class BaselineModel:
    def __init__(self, p: int, config: BaselineConfig, seed: int = 0):
        if config.kind not in PRESETS:
            raise ConfigError(f"unknown baseline kind {config.kind!r}; choose from {sorted(PRESETS)}")
        self.p = p
        self.config = config
        enc_rng, dec_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        widths = [config.hidden] * config.hidden_layers
        out = 2 * config.latent if config.variational else config.latent
        self.encoder = Mlp([p, *widths, out], seed=enc_rng)
        self.decoder = Mlp([config.latent, *widths, p], seed=dec_rng)
        self.shift = np.zeros(p)
        self.scale = np.ones(p)
        self.n_train = 1
        self.meta: dict = {}

    @property
    def kind(self) -> str:
        return self.config.kind

    def named_parameters(self):
        for name, t in self.encoder.named_parameters():
            yield f"encoder.{name}", t
        for name, t in self.decoder.named_parameters():
            yield f"decoder.{name}", t

    def to_std(self, X):
        return (np.asarray(X, dtype=float) - self.shift) / self.scale

    # encoding is the posterior mean for variational kinds
    def encode(self, x) -> np.ndarray:
        out = self.encoder.predict(self.to_std(np.atleast_2d(x)))
        return out[:, : self.config.latent]

    def encoder_jacobian(self, x) -> np.ndarray:
        jac = self.encoder.jacobian(self.to_std(np.atleast_2d(x)))[:, : self.config.latent]
        return jac / self.scale[None, None, :]

    def reconstruct(self, x) -> np.ndarray:
        return self.decoder.predict(self.encode(x)) * self.scale + self.shift

    def loss_terms(self, xs: np.ndarray, eps: np.ndarray | None = None) -> dict[str, Tensor]:
        """Per-batch loss pieces on standardised inputs; ``eps`` fixes the reparameterization noise."""
        c = self.config
        h = self.encoder(xs)
        if not c.variational:
            d = self.decoder(h) - xs
            recon = (d * d).sum(axis=1).mean()
            return {"loss": recon, "recon": recon}
        L = c.latent
        mu, logvar = h[:, :L], h[:, L:]
        if eps is None:
            eps = np.random.default_rng().standard_normal(mu.shape)
        z = mu + nn.exp(logvar * 0.5) * eps
        d = self.decoder(z) - xs
        recon = (d * d).sum(axis=1).mean() * 0.5
        if c.kind != "beta_tc_vae":
            kl = ((mu * mu + nn.exp(logvar) - logvar - 1.0).sum(axis=1) * 0.5).mean()
            return {"loss": recon + kl * c.beta, "recon": recon, "kl": kl}
        return self._tc_terms(z, mu, logvar, recon)

    def _tc_terms(self, z, mu, logvar, recon) -> dict[str, Tensor]:
        c = self.config
        B = z.shape[0]
        if B < 2:
            raise ConfigError("β-TC-VAE needs batch size >= 2 for the minibatch density estimate")
        log_qz_x = _log_normal(z, mu, logvar).sum(axis=1)
        log_pz = (z * z + LOG_2PI).sum(axis=1) * -0.5
        # log q(z_i | x_j) per dimension, shape (B, B, L)
        mat = _log_normal(z[:, None, :], mu[None, :, :], logvar[None, :, :])
        log_norm = np.log(B * self.n_train)
        log_qz = nn.logsumexp(mat.sum(axis=2), axis=1) - log_norm
        log_qz_prod = (nn.logsumexp(mat, axis=1) - log_norm).sum(axis=1)
        mi = (log_qz_x - log_qz).mean()
        tc = (log_qz - log_qz_prod).mean()
        dwkl = (log_qz_prod - log_pz).mean()
        loss = recon + mi * c.alpha + tc * c.beta + dwkl * c.gamma
        return {"loss": loss, "recon": recon, "mi": mi, "tc": tc, "dwkl": dwkl,
                "kl_mc": (log_qz_x - log_pz).mean()}

    def save(self, path, extra_meta=None):
        tensors = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        tensors.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        tensors["shift"], tensors["scale"] = self.shift, self.scale
        meta = {"kind": self.kind, "p": self.p, "config": self.config.__dict__, "n_train": self.n_train,
                **(extra_meta or {})}
        nn.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "BaselineModel":
        tensors, meta = nn.load_checkpoint(path)
        model = cls(meta["p"], BaselineConfig(**meta["config"]))
        model.encoder.load_state_dict({k[8:]: v for k, v in tensors.items() if k.startswith("encoder.")})
        model.decoder.load_state_dict({k[8:]: v for k, v in tensors.items() if k.startswith("decoder.")})
        model.shift, model.scale = tensors["shift"], tensors["scale"]
        model.n_train = meta["n_train"]
        model.meta = meta
        return model


def train_baseline(kind: str, X, seed: int = 42, config: BaselineConfig | None = None, log_every: int = 0):
    """Train one baseline; returns (model, per-epoch mean loss)."""
    config = config or PRESETS.get(kind)
    if config is None:
        raise ConfigError(f"unknown baseline kind {kind!r}; choose from {sorted(PRESETS)}")
    if config.kind == "beta_tc_vae" and config.batch_size < 2:
        raise ConfigError("β-TC-VAE needs batch size >= 2 for the minibatch density estimate")
    X = np.asarray(getattr(X, "samples", X), dtype=float)
    model = BaselineModel(X.shape[1], config, seed)
    model.shift = X.mean(axis=0)
    model.scale = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    model.n_train = len(X)
    Xs = model.to_std(X)
    rng = np.random.default_rng(seed)
    opt = nn.Adam(list(model.named_parameters()), lr=config.lr)
    n = len(Xs)
    bs = min(config.batch_size, n)
    curve = np.zeros(config.epochs)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total, nb = 0.0, 0
        for b, start in enumerate(range(0, n - bs + 1, bs)):
            xb = Xs[perm[start:start + bs]]
            eps = rng.standard_normal((len(xb), config.latent))
            loss = model.loss_terms(xb, eps)["loss"]
            if not np.isfinite(loss.data):
                raise TrainingError(f"{kind}: non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data)
            nb += 1
        curve[epoch] = total / nb
        if log_every and (epoch + 1) % log_every == 0:
            log.info("%s epoch %d loss %.4f (%.1fs)", kind, epoch + 1, curve[epoch], time.perf_counter() - t0)
    return model, curve
