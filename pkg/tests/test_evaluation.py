import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpbic import (
    FitConfig,
    ModelDescriptor,
    PenaltyConfig,
    SimSpec,
    adjusted_rand_index,
    contingency_table,
    model_grid,
    replicate_experiment,
    simulate,
)
from lpbic.aecm import derive_seed
from lpbic.selection import grid_search


def pair_counting_ari(a, b):
    """Exhaustive agreement counting over all observation pairs."""
    a, b = np.asarray(a), np.asarray(b)
    n = a.size
    together_both = together_a = together_b = 0
    for i, j in itertools.combinations(range(n), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        together_a += sa
        together_b += sb
        together_both += sa and sb
    total = n * (n - 1) // 2
    expected = together_a * together_b / total
    maximum = 0.5 * (together_a + together_b)
    if maximum == expected:
        return 1.0 if together_a == together_b == together_both else 0.0
    return (together_both - expected) / (maximum - expected)


class TestContingencyTable:
    def test_rows_truth_columns_predicted(self):
        truth = [1, 1, 2, 2, 2]
        pred = [0, 1, 1, 1, 1]
        table = contingency_table(truth, pred)
        np.testing.assert_array_equal(table, [[1, 1], [0, 3]])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            contingency_table([1, 2], [1, 2, 3])


class TestAdjustedRandIndex:
    def test_identical_partitions(self):
        labels = [0, 0, 1, 2, 1, 0]
        assert adjusted_rand_index(labels, labels) == 1.0

    def test_reported_two_class_structure(self):
        # 72 tissues: truth 47/25, predictions crossing as 39,3 / 8,22
        truth = [1] * 42 + [2] * 30
        pred = [1] * 39 + [2] * 3 + [1] * 8 + [2] * 22
        value = adjusted_rand_index(truth, pred)
        assert value == pytest.approx(0.4744, abs=5e-4)

    def test_singletons_vs_one_cluster(self):
        a = list(range(10))
        b = [0] * 10
        assert adjusted_rand_index(a, b) == 0.0

    def test_matches_pair_counting_oracle_small(self):
        rng = np.random.default_rng(50)
        for n in (5, 8, 12):
            for _ in range(30):
                a = rng.integers(0, 3, n)
                b = rng.integers(0, 4, n)
                got = adjusted_rand_index(a, b)
                want = pair_counting_ari(a, b)
                assert got == pytest.approx(want, abs=1e-12)

    def test_degenerate_both_trivial(self):
        assert adjusted_rand_index([3] * 6, [9] * 6) == 1.0

    @given(st.lists(st.integers(0, 4), min_size=2, max_size=40))
    @settings(max_examples=80, deadline=None)
    def test_symmetry(self, labels):
        rng = np.random.default_rng(sum(labels) + len(labels))
        other = rng.integers(0, 3, len(labels))
        assert adjusted_rand_index(labels, other) == pytest.approx(
            adjusted_rand_index(other, labels), abs=1e-12
        )

    @given(st.lists(st.integers(0, 3), min_size=3, max_size=30))
    @settings(max_examples=80, deadline=None)
    def test_relabeling_invariance(self, labels):
        rng = np.random.default_rng(len(labels))
        other = rng.integers(0, 3, len(labels))
        remap = {0: 7, 1: 3, 2: 11, 3: 0}
        relabeled = [remap[v] for v in labels]
        assert adjusted_rand_index(labels, other) == pytest.approx(
            adjusted_rand_index(relabeled, other), abs=1e-12
        )

    def test_empirical_null_near_zero(self):
        rng = np.random.default_rng(51)
        values = []
        for _ in range(200):
            a = rng.integers(0, 3, 200)
            b = rng.integers(0, 3, 200)
            values.append(adjusted_rand_index(a, b))
        assert -0.05 < float(np.mean(values)) < 0.05

    def test_too_short(self):
        with pytest.raises(ValueError):
            adjusted_rand_index([1], [1])


class TestSimulate:
    def test_shapes_and_labels(self):
        data, labels = simulate(SimSpec(p=100, seed=7))
        assert (data.n, data.p) == (100, 100)
        np.testing.assert_array_equal(np.bincount(labels), [0, 40, 30, 30])

    def test_deterministic(self):
        a, la = simulate(SimSpec(p=25, seed=9))
        b, lb = simulate(SimSpec(p=25, seed=9))
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(la, lb)

    def test_different_seeds_differ(self):
        a, _ = simulate(SimSpec(p=10, seed=1))
        b, _ = simulate(SimSpec(p=10, seed=2))
        assert not np.array_equal(a.values, b.values)

    def test_group_one_mean_clt_bound(self):
        data, labels = simulate(SimSpec(p=150, seed=11))
        rows = data.values[labels == 1]
        coord_means = rows.mean(axis=0)
        bound = 4.0 / np.sqrt(rows.shape[0])  # unit variance group
        frac_inside = np.mean(np.abs(coord_means + 5.5) <= bound)
        assert frac_inside >= 0.99

    def test_group_mean_levels(self):
        data, labels = simulate(SimSpec(p=80, seed=13))
        for label, level in ((1, -5.5), (2, 2.0), (3, 3.0)):
            rows = data.values[labels == label]
            assert rows.mean() == pytest.approx(level, abs=0.2)

    def test_isotropic_and_diagonal_groups_uncorrelated(self):
        data, labels = simulate(SimSpec(p=40, seed=17))
        for label in (1, 2):
            rows = data.values[labels == label]
            cov = np.cov(rows, rowvar=False)
            off = cov[~np.eye(40, dtype=bool)]
            assert np.mean(np.abs(off)) < 0.3

    def test_diagonal_group_heteroscedastic(self):
        data, labels = simulate(SimSpec(p=200, seed=19))
        rows = data.values[labels == 2]
        variances = rows.var(axis=0)
        # drawn from U(0.5, 1.5): spread across coordinates is visible
        assert variances.max() > 1.2 and variances.min() < 0.8

    def test_custom_groups(self):
        spec = SimSpec(
            p=12,
            group_sizes=(10, 20),
            means=(0.0, 1.0),
            covariance_kinds=("isotropic", "full"),
            seed=3,
        )
        data, labels = simulate(spec)
        assert data.n == 30
        np.testing.assert_array_equal(np.bincount(labels), [0, 10, 20])

    def test_invalid_kind_rejected(self):
        with pytest.raises(ValueError):
            SimSpec(p=5, covariance_kinds=("isotropic", "diagonal", "banded"))


def small_grid():
    return model_grid([1, 2], [1], ["CCC", "UUC"])


def fast_config(seed=1):
    return FitConfig(n_starts=2, seed=seed, max_iterations=120,
                     tolerance=1e-2, init="kmeans")


class TestReplicateExperiment:
    def test_single_rep_matches_direct_search(self):
        spec = SimSpec(p=12, group_sizes=(15, 15), means=(0.0, 5.0),
                       covariance_kinds=("isotropic", "diagonal"), seed=23)
        config = fast_config()
        report = replicate_experiment(
            spec, small_grid(), 1, PenaltyConfig.reciprocal_p(), config
        )
        assert len(report.records) == 1
        record = report.records[0]

        rep_seed = derive_seed(spec.seed, 0)
        from dataclasses import replace
        data, labels = simulate(replace(spec, seed=rep_seed))
        table = grid_search(
            data, small_grid(), PenaltyConfig.reciprocal_p(),
            replace(config, seed=derive_seed(config.seed, rep_seed)),
            labels=labels,
        )
        want = table.best_row("bic")
        assert record.bic.G == want.model.G
        assert record.bic.value == pytest.approx(want.criteria.bic, rel=1e-12)
        assert record.bic.ari == want.ari

    def test_identical_seeds_give_identical_records(self):
        spec = SimSpec(p=10, group_sizes=(12, 12), means=(0.0, 4.0),
                       covariance_kinds=("isotropic", "isotropic"), seed=29)
        report = replicate_experiment(
            spec, small_grid(), 2, PenaltyConfig.reciprocal_p(), fast_config(),
            seeds=[7, 7],
        )
        a, b = report.records
        assert a.bic == b.bic and a.lpbic == b.lpbic

    def test_csv_schema(self):
        spec = SimSpec(p=10, group_sizes=(12, 12), means=(0.0, 4.0),
                       covariance_kinds=("isotropic", "isotropic"), seed=31)
        report = replicate_experiment(
            spec, small_grid(), 2, PenaltyConfig.reciprocal_p(), fast_config()
        )
        lines = report.to_csv().splitlines()
        assert lines[0] == "rep,criterion,G,q,code,ari,bic_or_lpbic_value"
        assert len(lines) == 1 + 2 * len(report.records)
        assert lines[1].startswith("0,bic,") and lines[2].startswith("0,lpbic,")

    def test_summary_counters(self):
        spec = SimSpec(p=10, group_sizes=(14, 14), means=(0.0, 5.0),
                       covariance_kinds=("isotropic", "diagonal"), seed=37)
        report = replicate_experiment(
            spec, small_grid(), 3, PenaltyConfig.reciprocal_p(), fast_config()
        )
        counts = report.g_counts("bic")
        assert sum(counts.values()) == len(report.picks("bic"))
        assert 0 <= report.ari_wins() <= 3

    def test_progress_callback(self):
        spec = SimSpec(p=8, group_sizes=(10, 10), means=(0.0, 4.0),
                       covariance_kinds=("isotropic", "isotropic"), seed=41)
        seen = []
        replicate_experiment(
            spec, small_grid(), 2, PenaltyConfig.reciprocal_p(), fast_config(),
            progress=seen.append,
        )
        assert [r.rep for r in seen] == [0, 1]

    def test_bad_reps_rejected(self):
        with pytest.raises(ValueError):
            replicate_experiment(
                SimSpec(p=5, seed=1), small_grid(), 0, PenaltyConfig.fixed(0.0)
            )
