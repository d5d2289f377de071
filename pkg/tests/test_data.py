from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedla.data import (
    Dataset,
    PartitionSpec,
    SyntheticDatasetSpec,
    generate_synthetic,
    kfold_split,
    largest_remainder,
    label_histogram,
    partition,
    partition_dirichlet_preference,
    partition_iid,
    partition_report_csv,
)
from fedla.errors import ConfigError
from oracles import nearest_centroid_accuracy


def make(n_per_class=500, classes=2, seed=0, **kw):
    return generate_synthetic(SyntheticDatasetSpec(classes, n_per_class, seed=seed, **kw))


class TestSynthetic:
    def test_counts(self):
        ds = make(100)
        assert len(ds) == 200
        assert list(ds.histogram()) == [100, 100]

    def test_deterministic(self):
        a, b = make(50, seed=3), make(50, seed=3)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_well_separated_blobs_are_centroid_separable(self):
        ds = make(500, classes=3, class_separation=10.0, noise_std=1.0)
        assert nearest_centroid_accuracy(ds.features, ds.labels) > 0.99

    def test_input_dim_must_cover_classes(self):
        with pytest.raises(ConfigError):
            SyntheticDatasetSpec(num_classes=5, input_dim=3)


def test_largest_remainder_sums_exactly():
    counts = largest_remainder([0.333, 0.333, 0.334], 10)
    assert counts.sum() == 10
    assert list(largest_remainder([1, 1], 5)) == [3, 2]


def check_partition_invariants(ds, parts, spec):
    assert len(parts) == spec.num_clients
    seen = Counter()
    for p in parts:
        assert p.sample_count == spec.samples_per_client
        np.testing.assert_array_equal(p.histogram, label_histogram(p.labels, ds.num_classes))
        np.testing.assert_array_equal(ds.labels[p.indices], p.labels)
        np.testing.assert_array_equal(ds.features[p.indices], p.features)
        seen.update(p.indices.tolist())
    # no sample handed out twice
    assert all(v == 1 for v in seen.values())
    assert sum(seen.values()) == spec.num_clients * spec.samples_per_client


class TestIid:
    def test_every_client_sees_every_class(self):
        ds = make(600)
        spec = PartitionSpec(10, "iid", 100, seed=1)
        parts = partition_iid(ds, spec)
        check_partition_invariants(ds, parts, spec)
        for p in parts:
            assert np.all(p.histogram >= 1) and p.histogram.sum() == 100

    def test_conservation(self):
        ds = make(600)
        parts = partition_iid(ds, PartitionSpec(10, "iid", 100, seed=1))
        union = np.concatenate([p.indices for p in parts])
        np.testing.assert_array_equal(
            sum(p.histogram for p in parts), label_histogram(ds.labels[union], 2)
        )

    def test_minimal_instance_exhaustive(self):
        ds = Dataset(np.zeros((4, 2)), np.array([0, 0, 1, 1]), 2)
        for seed in range(20):
            parts = partition_iid(ds, PartitionSpec(2, "iid", 2, seed=seed))
            for p in parts:
                assert sorted(p.labels.tolist()) == [0, 1]

    def test_infeasible(self):
        ds = make(10, classes=3, input_dim=4)
        with pytest.raises(ConfigError):
            partition_iid(ds, PartitionSpec(2, "iid", 2))
        with pytest.raises(ConfigError):
            partition_iid(make(10), PartitionSpec(5, "iid", 5))

    def test_balanced_pool_gives_identical_histograms(self):
        ds = make(500)
        parts = partition_iid(ds, PartitionSpec(10, "iid", 64, seed=2))
        assert {tuple(p.histogram) for p in parts} == {(32, 32)}

    def test_iid_columns_have_low_variation(self):
        ds = make(400)
        parts = partition_iid(ds, PartitionSpec(10, "iid", 64, seed=0))
        H = np.stack([p.histogram for p in parts]).astype(float)
        cv = H.std(axis=0) / H.mean(axis=0)
        assert np.all(cv < 0.2)


class TestDirichletPreference:
    def test_huge_alpha_is_near_uniform(self):
        ds = make(2000)
        spec = PartitionSpec(10, "dirichlet_preference", 100, alpha=1e6, preference_weight=1.0, seed=0)
        for p in partition_dirichlet_preference(ds, spec):
            assert np.all(np.abs(p.histogram / 100 - 0.5) <= 0.02)

    @pytest.mark.parametrize("alpha", [0.05, 0.5, 5.0, 1e3])
    def test_equal_sizes_any_alpha(self, alpha):
        ds = make(500)
        spec = PartitionSpec(10, "dirichlet_preference", 64, alpha=alpha, seed=4)
        check_partition_invariants(ds, partition_dirichlet_preference(ds, spec), spec)

    def test_preference_drives_majority(self):
        # each client's samples pooled over a 20-seed sweep
        ds = make(1000)
        pooled = np.zeros((10, 2), dtype=int)
        for seed in range(20):
            spec = PartitionSpec(10, "dirichlet_preference", 100, alpha=0.1, seed=seed)
            for p in partition_dirichlet_preference(ds, spec):
                pooled[p.client_id] += p.histogram
        majority = [pooled[i, i % 2] * 2 > pooled[i].sum() for i in range(10)]
        assert sum(majority) >= 8

    def test_skew_is_real(self):
        ds = make(500)
        parts = partition_dirichlet_preference(ds, PartitionSpec(10, "dirichlet_preference", 64, seed=0))
        shares = [p.histogram[p.client_id % 2] / 64 for p in parts]
        assert np.mean(shares) > 0.65

    def test_exhaustion_backfills(self, caplog):
        ds = make(50)
        spec = PartitionSpec(10, "dirichlet_preference", 10, alpha=0.01, preference_weight=50, seed=0)
        parts = partition_dirichlet_preference(ds, spec)
        check_partition_invariants(ds, parts, spec)

    def test_too_small(self):
        with pytest.raises(ConfigError):
            partition_dirichlet_preference(make(10), PartitionSpec(10, "dirichlet_preference", 5))

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(0, 2**31),
        st.sampled_from(["iid", "dirichlet_preference"]),
        st.integers(2, 4),
        st.integers(1, 12),
        st.floats(0.05, 10.0),
    )
    def test_invariants_property(self, seed, mode, classes, clients, alpha):
        ds = make(60, classes=classes, seed=seed % 7, input_dim=4)
        spc = max(classes, len(ds) // (clients + 1))
        spec = PartitionSpec(clients, mode, spc, alpha=alpha, seed=seed)
        parts = partition(ds, spec)
        check_partition_invariants(ds, parts, spec)
        again = partition(ds, spec)
        for a, b in zip(parts, again):
            np.testing.assert_array_equal(a.indices, b.indices)


class TestKFold:
    def test_five_folds_of_twenty(self):
        labels = np.repeat([0, 1], 50)
        folds = kfold_split(labels, 5, seed=0)
        assert np.bincount(folds).tolist() == [20] * 5
        for f in range(5):
            assert np.bincount(labels[folds == f]).tolist() == [10, 10]

    def test_partition_property_and_determinism(self):
        labels = np.random.default_rng(0).integers(0, 3, 103)
        folds = kfold_split(labels, 5, seed=9)
        assert set(folds.tolist()) == set(range(5))
        sizes = np.bincount(folds)
        assert sizes.max() - sizes.min() <= 1
        np.testing.assert_array_equal(folds, kfold_split(labels, 5, seed=9))

    def test_errors(self):
        with pytest.raises(ConfigError):
            kfold_split(np.zeros(3, int), 4, 0)
        with pytest.raises(ConfigError):
            kfold_split(np.zeros(3, int), 1, 0)


def test_partition_report_shape():
    ds = make(500)
    parts = partition_iid(ds, PartitionSpec(10, "iid", 64))
    lines = partition_report_csv(parts).strip().split("\n")
    assert lines[0] == "client_id,class_0_count,class_1_count"
    assert len(lines) == 11
    assert all(sum(map(int, row.split(",")[1:])) == 64 for row in lines[1:])
