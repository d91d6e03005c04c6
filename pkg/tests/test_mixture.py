import numpy as np
import pytest

from lpbic import (
    COVARIANCE_CODES,
    DataMatrix,
    MixtureParams,
    ModelDescriptor,
    Responsibilities,
    component_log_densities,
    log_density_woodbury,
    log_likelihood,
    penalty_value,
    responsibilities,
)

from helpers import (
    dense_log_density,
    naive_log_likelihood,
    naive_responsibilities,
    random_params,
)


class TestDataMatrix:
    def test_shape_and_accessors(self):
        d = DataMatrix(np.arange(12.0).reshape(4, 3))
        assert (d.n, d.p) == (4, 3)

    def test_rejects_non_finite(self):
        values = np.ones((3, 2))
        values[1, 1] = np.nan
        with pytest.raises(ValueError, match="row 1, column 1"):
            DataMatrix(values)

    def test_rejects_single_row(self):
        with pytest.raises(ValueError):
            DataMatrix(np.ones((1, 3)))

    def test_values_frozen(self):
        d = DataMatrix(np.ones((2, 2)))
        with pytest.raises(ValueError):
            d.values[0, 0] = 7.0


class TestModelDescriptor:
    def test_valid_codes(self):
        for code in COVARIANCE_CODES:
            ModelDescriptor(code, 2, 1)

    def test_invalid_code(self):
        with pytest.raises(ValueError):
            ModelDescriptor("CCX", 2, 1)

    def test_constraint_flags(self):
        m = ModelDescriptor("CUC", 3, 2)
        assert m.loadings_shared and not m.noise_shared and m.noise_isotropic


class TestMixtureParams:
    def test_shared_loading_is_one_object(self):
        rng = np.random.default_rng(0)
        params = random_params(rng, code="CUU", G=3, p=4, q=2)
        assert params.loading(0) is params.loading(1) is params.loading(2)

    def test_pi_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            MixtureParams(
                "UUU",
                np.array([0.6, 0.5]),
                np.zeros((2, 3)),
                np.zeros((2, 3, 1)) + 0.1,
                np.ones((2, 3)),
            )

    def test_noise_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            MixtureParams(
                "UUU",
                np.array([0.5, 0.5]),
                np.zeros((2, 3)),
                np.zeros((2, 3, 1)) + 0.1,
                np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]),
            )

    def test_noise_storage_shapes(self):
        rng = np.random.default_rng(1)
        assert isinstance(random_params(rng, code="UCC", G=2, p=4).noise, float)
        assert random_params(rng, code="UCU", G=2, p=4).noise.shape == (4,)
        assert random_params(rng, code="UUC", G=2, p=4).noise.shape == (2,)
        assert random_params(rng, code="UUU", G=2, p=4).noise.shape == (2, 4)

    def test_sigma_row_sums_match_dense(self):
        rng = np.random.default_rng(2)
        for code in COVARIANCE_CODES:
            params = random_params(rng, code=code, G=2, p=6, q=2)
            for g in range(2):
                lam = params.loading(g)
                dense = lam @ lam.T + np.diag(params.noise_vector(g))
                np.testing.assert_allclose(
                    params.sigma_row_sums(g), dense.sum(axis=1), rtol=1e-12
                )
                np.testing.assert_allclose(
                    params.sigma_diag(g), np.diag(dense), rtol=1e-12
                )

    def test_nonzero_mean_counts_bit_exact(self):
        params = MixtureParams(
            "UUU",
            np.array([0.5, 0.5]),
            np.array([[0.0, 2.0, -0.0], [1e-300, 0.0, 3.0]]),
            np.full((2, 3, 1), 0.1),
            np.ones((2, 3)),
        )
        np.testing.assert_array_equal(params.nonzero_mean_counts(), [1, 2])


class TestLogDensityWoodbury:
    def test_standard_normal_at_zero(self):
        value = log_density_woodbury(
            np.zeros(2), np.zeros(2), np.zeros((2, 1)), np.ones(2)
        )
        assert value == pytest.approx(-np.log(2 * np.pi), abs=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            p = int(rng.integers(2, 21))
            q = int(rng.integers(1, min(4, p)))
            lam = rng.normal(0, 1, (p, q))
            psi = rng.uniform(0.2, 3.0, p)
            mu = rng.normal(0, 2, p)
            x = rng.normal(0, 2, p)
            got = log_density_woodbury(x, mu, lam, psi)
            want = dense_log_density(x, mu, lam, psi)
            assert got == pytest.approx(want, abs=1e-8)

    def test_at_mean_equals_half_logdet(self):
        rng = np.random.default_rng(4)
        p, q = 7, 2
        lam = rng.normal(0, 1, (p, q))
        psi = rng.uniform(0.5, 2.0, p)
        mu = rng.normal(0, 1, p)
        sigma = lam @ lam.T + np.diag(psi)
        want = -0.5 * np.linalg.slogdet(2 * np.pi * sigma)[1]
        assert log_density_woodbury(mu, mu, lam, psi) == pytest.approx(want, abs=1e-10)

    def test_nonpositive_psi_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            log_density_woodbury(np.zeros(2), np.zeros(2), np.zeros((2, 1)), np.array([1.0, 0.0]))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            log_density_woodbury(np.zeros(3), np.zeros(2), np.zeros((2, 1)), np.ones(2))


class TestLogLikelihood:
    def test_single_component_is_density_sum(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, code="UUU", G=1, p=4, q=1)
        X = rng.normal(0, 1, (6, 4))
        dens = component_log_densities(DataMatrix(X), params)[:, 0]
        assert log_likelihood(DataMatrix(X), params) == pytest.approx(dens.sum(), abs=1e-10)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(6)
        params = random_params(rng, code="UUU", G=2, p=2, q=1, mean_scale=1.0)
        X = rng.normal(0, 1, (3, 2))
        got = log_likelihood(DataMatrix(X), params)
        assert got == pytest.approx(naive_log_likelihood(X, params), abs=1e-10)

    def test_duplicating_rows_doubles_value(self):
        rng = np.random.default_rng(7)
        params = random_params(rng, code="CCC", G=2, p=3, q=1)
        X = rng.normal(0, 1, (5, 3))
        single = log_likelihood(DataMatrix(X), params)
        double = log_likelihood(DataMatrix(np.vstack([X, X])), params)
        assert double == pytest.approx(2 * single, rel=1e-12)

    def test_invariant_under_relabeling(self):
        rng = np.random.default_rng(8)
        params = random_params(rng, code="UUU", G=3, p=4, q=2)
        flipped = MixtureParams(
            "UUU", params.pi[::-1], params.mu[::-1], params.loadings[::-1],
            params.noise[::-1],
        )
        X = rng.normal(0, 2, (8, 4))
        assert log_likelihood(DataMatrix(X), params) == pytest.approx(
            log_likelihood(DataMatrix(X), flipped), rel=1e-13
        )

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(9)
        params = random_params(rng, p=4)
        with pytest.raises(ValueError):
            log_likelihood(DataMatrix(np.zeros((3, 5))), params)


class TestPenaltyValue:
    def test_zero_lambda(self):
        rng = np.random.default_rng(10)
        assert penalty_value(random_params(rng), 0.0, 50) == 0.0

    def test_direct_substitution(self):
        params = MixtureParams(
            "UUU", np.array([1.0]), np.array([[2.0, -3.0]]),
            np.full((1, 2, 1), 0.1), np.ones((1, 2)),
        )
        assert penalty_value(params, 0.1, 10) == pytest.approx(5.0, abs=1e-12)

    def test_all_zero_means(self):
        params = MixtureParams(
            "UUU", np.array([0.5, 0.5]), np.zeros((2, 2)),
            np.full((2, 2, 1), 0.1), np.ones((2, 2)),
        )
        assert penalty_value(params, 0.7, 100) == 0.0

    def test_negative_lambda_rejected(self):
        rng = np.random.default_rng(11)
        with pytest.raises(ValueError):
            penalty_value(random_params(rng), -0.1, 10)

    def test_nonnegative_always(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            params = random_params(rng, code="UUU", G=3, p=4, q=1)
            assert penalty_value(params, float(rng.uniform(0, 2)), 30) >= 0.0


class TestResponsibilities:
    def test_identical_components_give_half(self):
        rng = np.random.default_rng(13)
        base = random_params(rng, code="UUU", G=1, p=3, q=1)
        params = MixtureParams(
            "UUU",
            np.array([0.5, 0.5]),
            np.vstack([base.mu, base.mu]),
            np.stack([base.loadings[0], base.loadings[0]]),
            np.vstack([base.noise, base.noise]),
        )
        X = rng.normal(0, 1, (6, 3))
        z = responsibilities(DataMatrix(X), params).z
        np.testing.assert_allclose(z, 0.5, atol=1e-12)

    def test_equidistant_point_splits_evenly(self):
        params = MixtureParams(
            "UCU",
            np.array([0.5, 0.5]),
            np.array([[-1.0, 0.0], [1.0, 0.0]]),
            np.stack([np.full((2, 1), 0.3), np.full((2, 1), 0.3)]),
            np.array([0.7, 0.9]),
        )
        z = responsibilities(DataMatrix(np.zeros((2, 2))), params).z
        np.testing.assert_allclose(z, 0.5, atol=1e-12)

    def test_matches_naive_bayes_rule(self):
        rng = np.random.default_rng(14)
        params = random_params(rng, code="UUU", G=2, p=2, q=1, mean_scale=1.0)
        X = rng.normal(0, 1, (4, 2))
        got = responsibilities(DataMatrix(X), params).z
        np.testing.assert_allclose(got, naive_responsibilities(X, params), atol=1e-12)

    def test_rows_sum_to_one_and_no_nan_under_separation(self):
        # components 60 sигма apart: one column underflows to zero density
        params = MixtureParams(
            "UUC",
            np.array([0.5, 0.5]),
            np.array([[0.0] * 4, [60.0] * 4]),
            np.full((2, 4, 1), 0.1),
            np.array([1.0, 1.0]),
        )
        X = np.vstack([np.zeros(4), np.full(4, 60.0)])
        z = responsibilities(DataMatrix(X), params).z
        assert np.all(np.isfinite(z))
        np.testing.assert_allclose(z.sum(axis=1), 1.0, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(15)
        params = random_params(rng, code="UUU", G=3, p=3, q=1)
        perm = [2, 0, 1]
        permuted = MixtureParams(
            "UUU", params.pi[perm], params.mu[perm], params.loadings[perm],
            params.noise[perm],
        )
        X = rng.normal(0, 2, (7, 3))
        z = responsibilities(DataMatrix(X), params).z
        zp = responsibilities(DataMatrix(X), permuted).z
        np.testing.assert_allclose(zp, z[:, perm], atol=1e-12)

    def test_hard_labels_zero_based(self):
        z = Responsibilities(np.array([[0.9, 0.1], [0.2, 0.8]]))
        np.testing.assert_array_equal(z.hard_labels(), [0, 1])
