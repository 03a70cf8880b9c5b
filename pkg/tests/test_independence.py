import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpa_lab import independence as ind

HALF_LOG_2PIE = 0.5 * np.log(2 * np.pi * np.e)


class TestRegression:
    def test_deterministic_function(self):
        z = np.random.default_rng(0).uniform(-2, 2, 2000)
        assert ind.regress_r2(z**2, z, n_trees=50).best > 0.999

    def test_pure_noise(self):
        rng = np.random.default_rng(1)
        assert ind.regress_r2(rng.normal(size=2000), rng.normal(size=2000), n_trees=50).best <= 0.05

    def test_constant_target(self):
        assert ind.regress_r2(np.full(100, 3.0), np.arange(100.0)).best == 1.0

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            ind.regress_r2(np.zeros(10), np.zeros(10))


class TestIntrinsicDimension:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_uniform_cube(self, d):
        X = np.random.default_rng(d).uniform(size=(5000, d))
        assert abs(ind.levina_bickel_id(X, n_bootstrap=20).estimate - d) <= 0.15 * d

    def test_line_in_3d(self):
        t = np.random.default_rng(0).uniform(size=3000)
        X = np.outer(t, [1.0, 2.0, -0.5])
        assert 0.85 <= ind.levina_bickel_id(X, n_bootstrap=20).estimate <= 1.15

    def test_square(self):
        X = np.random.default_rng(0).uniform(size=(3000, 2))
        assert 1.8 <= ind.levina_bickel_id(X, n_bootstrap=20).estimate <= 2.2

    def test_drop_quantiles_ordered_and_signed(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(size=2000)
        det = ind.id_drop(z, np.sin(3 * z), n_bootstrap=50)
        noisy = ind.id_drop(z, rng.uniform(size=2000), n_bootstrap=50)
        assert det.quantiles[0] <= det.quantiles[1] <= det.quantiles[2]
        assert abs(det.quantiles[1]) < 0.1
        assert noisy.quantiles[1] > 0.7

    def test_duplicates_warn(self):
        X = np.repeat(np.random.default_rng(0).uniform(size=(100, 2)), 2, axis=0)
        with pytest.warns(RuntimeWarning, match="jitter"):
            est = ind.levina_bickel_id(X, n_bootstrap=5)
        assert np.isfinite(est.estimate)

    def test_needs_more_points_than_neighbors(self):
        with pytest.raises(ValueError):
            ind.levina_bickel_pointwise(np.zeros((5, 2)), k=10)


class TestEntropy:
    def test_standard_normal(self):
        u = np.random.default_rng(0).normal(size=10_000)
        assert abs(ind.kl_entropy(u) - HALF_LOG_2PIE) < 0.1

    def test_independent_conditional(self):
        rng = np.random.default_rng(1)
        assert abs(ind.conditional_entropy(rng.normal(size=10_000), rng.normal(size=10_000)) - HALF_LOG_2PIE) < 0.1

    @settings(max_examples=10, deadline=None)
    @given(a=st.floats(0.1, 10.0), seed=st.integers(0, 10_000))
    def test_scaling_law(self, a, seed):
        U = np.random.default_rng(seed).normal(size=(4000, 2))
        assert abs(ind.kl_entropy(a * U) - ind.kl_entropy(U) - 2 * np.log(a)) < 0.05

    def test_deterministic_is_very_negative(self):
        z = np.random.default_rng(0).normal(size=2000)
        assert ind.conditional_entropy(z.copy(), z) < -3


class TestHsic:
    def test_constant_gives_zero(self):
        B = np.random.default_rng(0).normal(size=(50, 2))
        assert ind.hsic(np.ones(50), B) == pytest.approx(0.0, abs=1e-15)

    def test_self_dependence_detected(self):
        A = np.random.default_rng(0).normal(size=(100, 2))
        stat, p = ind.hsic_permutation_test(A, A, n_perm=200)
        assert p < 0.01

    def test_permuted_copy_within_band(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(100, 2))
        B = A[rng.permutation(100)]
        K = ind._center(ind._gaussian_gram(A))
        L = ind._gaussian_gram(B)
        null = []
        for _ in range(300):
            q = rng.permutation(100)
            null.append(np.sum(K * L[np.ix_(q, q)]) / 100**2)
        assert ind.hsic(A, B) <= np.percentile(null, 97.5)

    def test_permutation_pvalues_uniform(self):
        rng = np.random.default_rng(0)
        ps = [ind.hsic_permutation_test(rng.normal(size=40), rng.normal(size=(40, 2)), n_perm=99,
                                        seed=i)[1] for i in range(200)]
        assert stats.kstest(ps, "uniform").pvalue >= 0.01

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            ind.hsic(np.zeros(30), np.zeros(31))
        with pytest.raises(ValueError):
            ind.hsic(np.zeros(10), np.zeros(10))


class TestGp:
    def test_recovers_mean_and_noise(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-2, 2, 400)
        u = np.sin(2 * z) + 0.1 * rng.normal(size=400)
        gp = ind.GpConditional().fit(z, u)
        mu, var = gp.predict(np.linspace(-1.5, 1.5, 20))
        np.testing.assert_allclose(mu, np.sin(2 * np.linspace(-1.5, 1.5, 20)), atol=0.1)
        assert np.all((var > 0.1**2 * 0.3) & (var < 0.1**2 * 3))

    def test_duplicate_inputs_survive(self):
        z = np.repeat(np.linspace(0, 1, 20), 5)
        gp = ind.GpConditional().fit(z, np.cos(z))
        assert np.all(np.isfinite(gp.predict(z)[0]))


def _toy_decoder(lat):
    z, u = lat[:, 0], lat[:, 1]
    return np.column_stack([z + 0.3 * u, np.sin(z) - u])


def _toy_split(rng, n, dependent=False):
    z = rng.uniform(-2, 2, n)
    u = 0.5 * np.cos(z) + 0.3 * rng.normal(size=n)
    X = _toy_decoder(np.column_stack([z, u]))
    if dependent:
        X = X + rng.normal(scale=0.05, size=X.shape)
        u = X[:, 0] + 0.05 * rng.normal(size=n)
    return X, z, u


class TestCrt:
    def test_valid_when_null_model_is_exact(self):
        rng = np.random.default_rng(0)
        X, z, u = _toy_split(rng, 6000)
        rep = ind.double_crt(_toy_decoder, X, z, u, B=100, n_reps=200, n_sub=60, n_fit=300, seed=1)
        assert np.all((rep.p_values > 0) & (rep.p_values <= 1))
        assert 0.02 <= rep.frac_below <= 0.09
        assert rep.ks_p >= 0.01

    def test_power_against_dependent_latent(self):
        # decoder draws its own noise for the second coordinate; U copies that coordinate
        rng = np.random.default_rng(1)
        noise_rng = np.random.default_rng(5)

        def decode(lat):
            return np.column_stack([lat[:, 0], noise_rng.normal(size=len(lat))])

        z = rng.uniform(-2, 2, 3000)
        X = np.column_stack([z, rng.normal(size=3000)])
        u = X[:, 1] + 0.05 * rng.normal(size=3000)
        rep = ind.double_crt(decode, X, z, u, B=100, n_reps=20, n_sub=100, n_fit=300, seed=2)
        assert rep.frac_below >= 0.8

    def test_requires_enough_null_draws(self):
        with pytest.raises(ValueError):
            ind.double_crt(_toy_decoder, np.zeros((10, 2)), np.zeros(10), np.zeros(10), B=50)

    def test_csv(self, tmp_path):
        rep = ind.CrtReport(np.array([0.5, 0.01]), 0.3, 0.7, observed=np.array([1e-3, 2e-3]))
        ind.write_crt_csv(tmp_path / "crt.csv", rep, "hash=abc")
        lines = (tmp_path / "crt.csv").read_text().splitlines()
        assert lines[0] == "# hash=abc" and lines[1] == "replication,p_value,observed_hsic"
        assert lines[-1].startswith("# summary") and "frac_below=0.5000" in lines[-1]


class TestExtras:
    def test_dcor_identity(self):
        A = np.random.default_rng(0).normal(size=(200, 2))
        assert ind.distance_correlation(A, A) == pytest.approx(1.0)

    def test_dcor_independent(self):
        rng = np.random.default_rng(0)
        assert ind.distance_correlation(rng.normal(size=1000), rng.normal(size=1000)) < 0.1

    def test_conditional_dcor_removes_common_cause(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(-2, 2, 800)
        a, b = np.sin(c) + 0.1 * rng.normal(size=800), c**2 + 0.1 * rng.normal(size=800)
        assert ind.distance_correlation(a, b) > 0.3
        assert ind.distance_correlation(a, b, conditional_on=c) < 0.1

    def test_mi_independent(self):
        rng = np.random.default_rng(0)
        assert abs(ind.knn_mutual_information(rng.normal(size=10_000), rng.normal(size=(10_000, 2)))) < 0.05

    def test_mi_self(self):
        a = np.random.default_rng(0).normal(size=10_000)
        B = np.column_stack([np.random.default_rng(1).normal(size=10_000), a])
        assert ind.knn_mutual_information(a, B) > 1.0

    def test_mi_needs_single_column(self):
        with pytest.raises(ValueError):
            ind.knn_mutual_information(np.zeros((200, 2)), np.zeros((200, 2)))

    def test_mi_gaussian_pair(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=5000)
        rho = 0.8
        b = rho * a + np.sqrt(1 - rho**2) * rng.normal(size=5000)
        assert ind.knn_mutual_information(a, b) == pytest.approx(-0.5 * np.log(1 - rho**2), abs=0.03)


def test_table3_csv(tmp_path):
    rep = ind.DeterminismReport("parabola", 1.0, 0.9999, (0.004, 0.005, 0.006), -7.1)
    ind.write_table3_csv(tmp_path / "t3.csv", [rep], "hash=abc")
    lines = (tmp_path / "t3.csv").read_text().splitlines()
    assert lines[1] == "dataset,beta,r2,id_drop_q025,id_drop_q50,id_drop_q975,h_u_given_z"
    assert lines[2] == "parabola,1.0,0.999900,0.004000,0.005000,0.006000,-7.1000"


def test_determinism_report_on_exact_function():
    z = np.random.default_rng(0).uniform(-1, 1, 3000)
    rep = ind.determinism_report("toy", 1.0, z, z**3 + 0.5 * z, n_trees=20, n_bootstrap=30)
    assert rep.r2 > 0.99 and abs(rep.id_drop[1]) < 0.05 and rep.h_u_given_z < -2
