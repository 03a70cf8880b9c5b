import numpy as np
import pytest

from dpa_lab import data, nn
from dpa_lab.dpa import DpaModel, TrainConfig, energy_score, energy_score_exact, train_dpa
from dpa_lab.nn import Mlp, TrainingError


def identity_model(p=2):
    enc, dec = Mlp([p, p], seed=0), Mlp([p, p], seed=0)
    for net in (enc, dec):
        net.layers[0].weight.data = np.eye(p)
        net.layers[0].bias.data[:] = 0.0
    return DpaModel(p, p, encoder=enc, decoder=dec)


class TestEnergyScore:
    @pytest.mark.parametrize("beta,recon,pair,value", [(2.0, 1.0, 2.0, 0.0), (1.0, 1.0, 1.0, 0.5)])
    def test_two_point_enumeration(self, beta, recon, pair, value):
        support = np.array([[-1.0], [1.0]])
        # all four ordered (Y, Y') pairs, each with probability 1/4
        draws = np.array([[support[i], support[j]] for i in range(2) for j in range(2)])
        draws = draws.transpose(1, 0, 2)  # (m=2, n=4, p=1)
        est = energy_score(np.zeros((4, 1)), draws, beta)
        assert est.reconstruction == pytest.approx(recon)
        assert est.pairwise == pytest.approx(pair)
        assert est.value == pytest.approx(value)
        assert energy_score_exact([0.0], support, [0.5, 0.5], beta) == pytest.approx(value)

    def test_exact_pairwise_term(self):
        support = np.array([[-1.0], [1.0]])
        probs = np.array([0.5, 0.5])
        for beta, pair in [(2.0, 2.0), (1.0, 1.0)]:
            d = np.abs(support - support.T) ** beta
            assert probs @ d @ probs == pytest.approx(pair)

    def test_point_mass_at_truth_is_zero(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        est = energy_score(x, np.stack([x, x, x]), 1.0)
        assert est.value == 0.0 and est.reconstruction == 0.0 and est.pairwise == 0.0

    def test_proper_score_four_point(self):
        rng = np.random.default_rng(1)
        support = rng.normal(size=(4, 2))
        truth = np.array([0.1, 0.2, 0.3, 0.4])
        for beta in (1.0, 1.5, 2.0):
            exp_true = sum(q * energy_score_exact(support[i], support, truth, beta) for i, q in enumerate(truth))
            for _ in range(50):
                alt = rng.dirichlet(np.ones(4))
                exp_alt = sum(q * energy_score_exact(support[i], support, alt, beta) for i, q in enumerate(truth))
                assert exp_true <= exp_alt + 1e-12

    def test_m_below_two(self):
        with pytest.raises(ValueError):
            energy_score(np.zeros((2, 1)), np.zeros((1, 2, 1)), 1.0)


class TestModel:
    def test_identity_decoder_loss_zero(self):
        model = identity_model()
        x = np.random.default_rng(0).normal(size=(50, 2))
        est = model.energy_score_loss(x, k=2, m=3, noise_seed=0)
        assert est.value == 0.0

    def test_zero_weight_encoder_constant(self):
        model = DpaModel(2, 3, hidden=8, seed=0)
        for layer in model.encoder.layers:
            layer.weight.data[:] = 0.0
        z = model.encode(np.random.default_rng(0).normal(size=(5, 2)))
        assert np.all(z == z[0])

    def test_encode_deterministic(self):
        model = DpaModel(2, 3, hidden=16, seed=0)
        x = np.random.default_rng(0).normal(size=(9, 2))
        assert np.array_equal(model.encode(x), model.encode(x))

    def test_decode_full_width_ignores_seed(self):
        model = DpaModel(2, 3, hidden=16, seed=0)
        z = np.random.default_rng(0).normal(size=(4, 3))
        assert np.array_equal(model.decode(z, noise_seed=1), model.decode(z, noise_seed=2))

    def test_decode_reproducible_and_stochastic(self):
        model = DpaModel(2, 3, hidden=16, seed=0)
        z = np.zeros((4, 1))
        assert np.array_equal(model.decode(z, 5), model.decode(z, 5))
        assert not np.array_equal(model.decode(z, 5), model.decode(z, 6))

    def test_decode_k_out_of_range(self):
        model = DpaModel(2, 3, hidden=8)
        with pytest.raises(ValueError):
            model.decode(np.zeros((2, 4)))
        with pytest.raises(ValueError):
            model.energy_score_loss(np.zeros((2, 2)), k=4)

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            DpaModel(2, 3, beta=2.5)

    def test_encode_shape_mismatch(self):
        with pytest.raises(nn.DimensionError):
            DpaModel(2, 3, hidden=8).encode(np.zeros((3, 3)))

    def test_objective_matches_numpy_estimate(self):
        model = DpaModel(2, 2, beta=1.5, hidden=12, seed=3)
        xs = np.random.default_rng(2).normal(size=(30, 2))
        m = 3
        loss, per_k = model.objective(xs, m, np.random.default_rng(9), np.ones(3))
        # replay the same noise stream through the numpy path
        rng = np.random.default_rng(9)
        K, B = 2, 30
        mask = np.repeat(np.tril(np.ones((K + 1, K)), -1), m * B, axis=0)
        noise = rng.standard_normal(((K + 1) * m * B, K)) * (1 - mask)
        z = np.tile(model.encoder.predict(xs), ((K + 1) * m, 1))
        y = model.decoder.predict(z * mask + noise).reshape(K + 1, m, B, 2)
        for k in range(K + 1):
            assert per_k[k] == pytest.approx(energy_score(xs, y[k], 1.5).value, rel=1e-12)
        assert float(loss.data) == pytest.approx(per_k.sum())

    def test_objective_gradient_fd(self):
        model = DpaModel(2, 2, beta=1.0, hidden=5, hidden_layers=1, seed=1)
        xs = np.random.default_rng(0).normal(size=(6, 2))
        omega = np.array([0.2, 0.5, 1.0])
        loss, _ = model.objective(xs, 2, np.random.default_rng(4), omega)
        grads = nn.gradients(loss, model.named_parameters())
        h = 1e-6
        for name, p in model.named_parameters():
            idx = (0,) * p.data.ndim
            orig = p.data[idx]
            vals = []
            for v in (orig + h, orig - h):
                p.data[idx] = v
                with nn.no_grad():
                    vals.append(float(model.objective(xs, 2, np.random.default_rng(4), omega)[0].data))
            p.data[idx] = orig
            fd = (vals[0] - vals[1]) / (2 * h)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), name

    def test_checkpoint_roundtrip(self, tmp_path):
        model = DpaModel(2, 3, hidden=8, seed=2)
        model.fit_standardization(np.random.default_rng(0).normal(2.0, 3.0, size=(100, 2)))
        model.save(tmp_path / "m.json", extra_meta={"seed": 2})
        other = DpaModel.load(tmp_path / "m.json")
        x = np.random.default_rng(1).normal(size=(5, 2))
        assert np.array_equal(model.encode(x), other.encode(x))
        assert np.array_equal(model.decode(np.zeros((3, 1)), 4), other.decode(np.zeros((3, 1)), 4))
        assert other.beta == model.beta and other.k_max == 3

    def test_jacobian_raw_coordinates(self):
        model = DpaModel(2, 3, hidden=8, seed=2)
        model.fit_standardization(np.random.default_rng(0).normal(1.0, [2.0, 0.5], size=(200, 2)))
        x = np.array([[0.3, -0.2], [1.0, 2.0]])
        jac = model.encoder_jacobian(x)
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (model.encode(x + e) - model.encode(x - e)) / (2 * h)
            np.testing.assert_allclose(jac[:, :, i], fd, rtol=1e-5, atol=1e-8)


class TestUnbiased:
    def test_doubling_m(self):
        model = DpaModel(2, 3, hidden=16, seed=0)
        x = np.random.default_rng(0).normal(size=(4000, 2))
        for k in (0, 1):
            e2 = model.energy_score_loss(x, k, m=2, noise_seed=1)
            e4 = model.energy_score_loss(x, k, m=4, noise_seed=2)
            assert abs(e2.value - e4.value) < 3 * e2.se


class TestTraining:
    def test_non_finite_aborts_with_location(self):
        model = DpaModel(2, 2, hidden=8, seed=0)
        model.decoder.layers[-1].bias.data[:] = np.inf
        with pytest.raises(TrainingError) as err:
            train_dpa(model, np.random.default_rng(0).normal(size=(40, 2)), TrainConfig(epochs=1, batch_size=20))
        assert err.value.context["batch"] == 0
        assert err.value.context["k"] == [0, 1, 2]

    def test_omega_validation(self):
        model = DpaModel(2, 2, hidden=8)
        with pytest.raises(ValueError):
            train_dpa(model, np.zeros((10, 2)), TrainConfig(epochs=1, omega=(1.0, 1.0)))

    def test_standard_normal_nesting_and_marginal(self, tmp_path):
        ds = data.standard_normal(p=2, n=2000, seed=42)
        model = DpaModel(2, 3, beta=2.0, hidden=64, hidden_layers=2, seed=42)
        result = train_dpa(model, ds, TrainConfig(epochs=60, batch_size=250, lr=2e-3, seed=42))
        assert result.curves.shape == (60, 4)
        final = model.per_k_losses(ds.samples, m=8)
        assert final[3] < final[0]
        samples = model.sample(10_000, noise_seed=0)
        assert np.all(np.abs(samples.mean(axis=0) - ds.samples.mean(axis=0)) < 0.1)
        path = tmp_path / "curves.csv"
        result.write_curves_csv(path, "test")
        lines = path.read_text().splitlines()
        assert lines[1] == "epoch,k,L_k" and len(lines) == 2 + 60 * 4

    def test_training_reproducible(self):
        X = np.random.default_rng(0).normal(size=(200, 2))
        runs = []
        for _ in range(2):
            model = DpaModel(2, 2, hidden=8, seed=1)
            runs.append(train_dpa(model, X, TrainConfig(epochs=3, batch_size=50, seed=3)).curves)
        assert np.array_equal(*runs)


class TestLrSchedule:
    def test_cosine_reaches_floor(self, monkeypatch):
        seen = []
        orig = nn.Adam.step

        def spy(self):
            seen.append(self.lr)
            return orig(self)

        monkeypatch.setattr(nn.Adam, "step", spy)
        model = DpaModel(2, 2, hidden=4, hidden_layers=1, seed=0)
        cfg = TrainConfig(epochs=5, batch_size=20, lr=1e-2, lr_schedule="cosine", lr_floor=0.1)
        train_dpa(model, np.random.default_rng(0).normal(size=(20, 2)), cfg)
        assert seen[0] == pytest.approx(1e-2) and seen[-1] == pytest.approx(1e-3)
        assert all(a >= b for a, b in zip(seen, seen[1:]))

    def test_unknown_schedule(self):
        with pytest.raises(ValueError):
            train_dpa(DpaModel(2, 2, hidden=4, hidden_layers=1), np.zeros((10, 2)),
                      TrainConfig(epochs=1, lr_schedule="step"))
