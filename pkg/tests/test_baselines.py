import numpy as np
import pytest

from dpa_lab import nn
from dpa_lab.baselines import PRESETS, BaselineConfig, BaselineModel, gaussian_kl, train_baseline
from dpa_lab.data import ConfigError


def test_presets_match_published_constants():
    assert PRESETS["beta_vae"].beta == 4.0
    tc = PRESETS["beta_tc_vae"]
    assert (tc.alpha, tc.beta, tc.gamma, tc.batch_size) == (1.0, 6.0, 1.0, 256)
    for cfg in PRESETS.values():
        assert (cfg.hidden, cfg.hidden_layers, cfg.latent, cfg.epochs) == (100, 2, 2, 1200)


class TestKl:
    def test_prior_gives_zero(self):
        assert np.all(gaussian_kl(np.zeros((3, 2)), np.zeros((3, 2))) == 0)

    def test_closed_form_vs_monte_carlo(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            mu, logvar = rng.normal(size=2), rng.normal(scale=0.5, size=2)
            z = mu + np.exp(0.5 * logvar) * rng.standard_normal((200_000, 2))
            log_q = -0.5 * np.sum(logvar + (z - mu) ** 2 / np.exp(logvar) + np.log(2 * np.pi), axis=1)
            log_p = -0.5 * np.sum(z**2 + np.log(2 * np.pi), axis=1)
            d = log_q - log_p
            se = d.std() / np.sqrt(len(d))
            assert abs(d.mean() - gaussian_kl(mu, logvar)) < 2 * se + 1e-12

    def test_encoder_outputting_prior_has_zero_kl_term(self):
        model = BaselineModel(2, PRESETS["vae"], seed=0)
        model.encoder.layers[-1].weight.data[:] = 0.0
        model.encoder.layers[-1].bias.data[:] = 0.0
        terms = model.loss_terms(np.random.default_rng(0).normal(size=(8, 2)))
        assert float(terms["kl"].data) == 0.0


class TestTcDecomposition:
    def test_unit_weights_reduce_to_elbo(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(64, 2))
        eps = rng.standard_normal((64, 2))
        cfg = BaselineConfig("beta_tc_vae", alpha=1.0, beta=1.0, gamma=1.0, batch_size=64)
        tc = BaselineModel(2, cfg, seed=3)
        tc.n_train = 1000
        vae = BaselineModel(2, PRESETS["vae"], seed=3)
        t = tc.loss_terms(x, eps)
        v = vae.loss_terms(x, eps)
        # the three pieces telescope to the single-sample KL estimate exactly
        assert float(t["loss"].data) == pytest.approx(float((t["recon"] + t["kl_mc"]).data), rel=1e-12)
        assert float(t["recon"].data) == pytest.approx(float(v["recon"].data), rel=1e-12)
        # and the single-sample KL matches the closed form up to Monte-Carlo error
        h = vae.encoder.predict(x)
        closed = gaussian_kl(h[:, :2], h[:, 2:])
        assert abs(float(t["kl_mc"].data) - closed.mean()) < 0.5

    def test_batch_too_small(self):
        model = BaselineModel(2, PRESETS["beta_tc_vae"], seed=0)
        with pytest.raises(ConfigError):
            model.loss_terms(np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(ConfigError):
            train_baseline("beta_tc_vae", np.zeros((10, 2)), config=BaselineConfig("beta_tc_vae", batch_size=1))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            train_baseline("factor_vae", np.zeros((10, 2)))


@pytest.mark.parametrize("kind", ["vae", "beta_tc_vae"])
def test_reparameterized_gradient_fd(kind):
    rng = np.random.default_rng(2)
    cfg = BaselineConfig(kind, hidden=6, beta=PRESETS[kind].beta, batch_size=8)
    model = BaselineModel(2, cfg, seed=4)
    model.n_train = 100
    x = rng.normal(size=(8, 2))
    eps = rng.standard_normal((8, 2))
    grads = nn.gradients(model.loss_terms(x, eps)["loss"], model.named_parameters())
    h = 1e-6
    for name, p in model.named_parameters():
        for idx in [(0,) * p.data.ndim, tuple(s - 1 for s in p.data.shape)]:
            orig = p.data[idx]
            vals = []
            for v in (orig + h, orig - h):
                p.data[idx] = v
                with nn.no_grad():
                    vals.append(float(model.loss_terms(x, eps)["loss"].data))
            p.data[idx] = orig
            fd = (vals[0] - vals[1]) / (2 * h)
            scale = max(abs(fd), abs(grads[name][idx]), 1e-3)
            assert abs(grads[name][idx] - fd) / scale < 1e-3, name


def test_ae_learns_identity_on_full_rank_data():
    X = np.random.default_rng(0).normal(size=(1000, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]])
    cfg = BaselineConfig("ae", epochs=150, batch_size=100, lr=3e-3, hidden=32)
    model, curve = train_baseline("ae", X, seed=0, config=cfg)
    mse = np.mean(np.sum((model.reconstruct(X) - X) ** 2, axis=1))
    assert mse < 0.01 * np.sum(X.var(axis=0))
    assert curve[-1] < curve[0]


def test_checkpoint_roundtrip(tmp_path):
    X = np.random.default_rng(0).normal(size=(50, 2))
    model, _ = train_baseline("vae", X, seed=1, config=BaselineConfig("vae", epochs=2, batch_size=25))
    model.save(tmp_path / "b.json")
    other = BaselineModel.load(tmp_path / "b.json")
    assert np.array_equal(model.encode(X), other.encode(X))
    assert other.kind == "vae"


def test_encoder_jacobian_fd():
    X = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 2))
    model, _ = train_baseline("beta_vae", X, seed=1, config=BaselineConfig("beta_vae", beta=4.0, epochs=1,
                                                                             batch_size=25))
    x = X[:3]
    jac = model.encoder_jacobian(x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (model.encode(x + e) - model.encode(x - e)) / (2 * h)
        np.testing.assert_allclose(jac[:, :, i], fd, rtol=1e-5, atol=1e-9)
