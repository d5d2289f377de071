import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedla.aggregation import (
    STRATEGIES,
    ClientUpdate,
    aggregate,
    compute_fedavg_weights,
    compute_fedavgl_weights,
    compute_fedla_weights,
    uses_proximal_term,
    weights_for,
)
from fedla.errors import DegenerateInputError, InvalidInputError, NumericalError, ProtocolError
from oracles import fedla_weights_bruteforce


def updates_from(*histograms, params=None):
    return [
        ClientUpdate.from_histogram(i, np.zeros(3) if params is None else params[i], h)
        for i, h in enumerate(histograms)
    ]


def as_list(weights):
    return [weights[k] for k in sorted(weights)]


class TestFedAvg:
    def test_equal_sizes_are_uniform(self):
        assert as_list(compute_fedavg_weights(updates_from((5, 5), (7, 3), (0, 10)))) == [1 / 3] * 3

    def test_ratio(self):
        ups = [ClientUpdate(0, np.zeros(1), np.array([100]), 100), ClientUpdate(1, np.zeros(1), np.array([300]), 300)]
        assert as_list(compute_fedavg_weights(ups)) == [0.25, 0.75]

    def test_singleton(self):
        assert compute_fedavg_weights(updates_from((4, 1))) == {0: 1.0}

    def test_all_zero(self):
        with pytest.raises(DegenerateInputError):
            compute_fedavg_weights(updates_from((0, 0), (0, 0)))


class TestFedAvgL:
    def test_label_totals(self):
        assert as_list(compute_fedavgl_weights(updates_from((8, 2), (5, 5)))) == [0.5, 0.5]

    def test_ratio(self):
        assert as_list(compute_fedavgl_weights(updates_from((3, 0), (0, 9)))) == [0.25, 0.75]

    def test_all_zero(self):
        with pytest.raises(DegenerateInputError):
            compute_fedavgl_weights(updates_from((0, 0)))


class TestFedLA:
    def test_symmetric(self):
        assert as_list(compute_fedla_weights(updates_from((8, 2), (2, 8)))) == [0.5, 0.5]

    def test_hand_execution(self):
        w = as_list(compute_fedla_weights(updates_from((9, 1), (1, 1))))
        assert w == pytest.approx([0.7, 0.3], abs=1e-15)

    def test_identical_histograms(self):
        w = as_list(compute_fedla_weights(updates_from(*[(3, 4, 5)] * 6)))
        assert w == [1 / 6] * 6

    def test_zero_total_label_is_skipped(self):
        w = as_list(compute_fedla_weights(updates_from((9, 1, 0), (1, 1, 0))))
        assert w == pytest.approx([0.7, 0.3], abs=1e-15)

    def test_all_empty(self):
        with pytest.raises(DegenerateInputError):
            compute_fedla_weights(updates_from((0, 0), (0, 0)))

    def test_client_with_no_labels_gets_zero(self, caplog):
        w = compute_fedla_weights(updates_from((4, 4), (0, 0)))
        assert w == {0: 1.0, 1: 0.0}
        assert "zero labels" in caplog.text

    def test_ragged_histograms(self):
        with pytest.raises(ProtocolError):
            compute_fedla_weights(updates_from((1, 2), (1, 2, 3)))


def test_duplicate_ids_and_empty_rounds():
    dup = [ClientUpdate.from_histogram(0, np.zeros(2), (1, 1))] * 2
    with pytest.raises(ProtocolError):
        compute_fedla_weights(dup)
    with pytest.raises(InvalidInputError):
        compute_fedavg_weights([])


histogram_sets = st.integers(1, 10).flatmap(
    lambda k: st.integers(1, 5).flatmap(
        lambda n: st.lists(st.lists(st.integers(0, 100), min_size=n, max_size=n), min_size=k, max_size=k)
    )
).filter(lambda hs: sum(map(sum, hs)) > 0)


class TestWeightProperties:
    @settings(max_examples=200, deadline=None)
    @given(histogram_sets)
    def test_matches_bruteforce_and_normalizes(self, hs):
        for rule in (compute_fedavg_weights, compute_fedavgl_weights, compute_fedla_weights):
            w = rule(updates_from(*hs))
            assert all(v >= 0 for v in w.values())
            assert abs(sum(w.values()) - 1) < 1e-9
        np.testing.assert_allclose(
            as_list(compute_fedla_weights(updates_from(*hs))), fedla_weights_bruteforce(hs), rtol=0, atol=1e-12
        )

    @settings(max_examples=100, deadline=None)
    @given(histogram_sets, st.randoms(use_true_random=False))
    def test_permutation_equivariant(self, hs, rnd):
        order = list(range(len(hs)))
        rnd.shuffle(order)
        base = compute_fedla_weights(updates_from(*hs))
        shuffled = [ClientUpdate.from_histogram(i, np.zeros(1), hs[i]) for i in order]
        assert compute_fedla_weights(shuffled) == base

    @settings(max_examples=100, deadline=None)
    @given(histogram_sets, st.integers(2, 7))
    def test_scaling_all_counts_changes_nothing(self, hs, factor):
        scaled = [[c * factor for c in h] for h in hs]
        assert compute_fedla_weights(updates_from(*scaled)) == compute_fedla_weights(updates_from(*hs))

    @settings(max_examples=100, deadline=None)
    @given(histogram_sets)
    def test_fedavg_equals_fedavgl_on_single_label_data(self, hs):
        ups = updates_from(*hs)
        assert compute_fedavg_weights(ups) == compute_fedavgl_weights(ups)

    @settings(max_examples=100, deadline=None)
    @given(histogram_sets)
    def test_dominating_histogram_gets_larger_weight(self, hs):
        if len(hs) < 2:
            return
        hs = [list(h) for h in hs]
        hs[0] = [max(a, b) for a, b in zip(hs[0], hs[1])]
        w = compute_fedla_weights(updates_from(*hs))
        assert w[0] >= w[1]


def test_weights_for_dispatch():
    skewed = updates_from((9, 1), (1, 1))
    assert as_list(weights_for("fedprox_la", skewed)) == pytest.approx([0.7, 0.3], abs=1e-15)
    assert as_list(weights_for("fedprox", updates_from((3, 3), (1, 5)))) == [0.5, 0.5]
    assert weights_for("fedavgl", skewed) == weights_for("fedavg", skewed)
    assert [uses_proximal_term(s) for s in STRATEGIES] == [False, False, False, True, True]
    with pytest.raises(InvalidInputError):
        weights_for("scaffold", skewed)


class TestAggregate:
    def test_identical_params_fixed_point(self):
        p = np.random.default_rng(0).normal(size=50)
        ups = updates_from((1, 2), (3, 4), (5, 0), params=[p.copy(), p.copy(), p.copy()])
        for w in ({0: 0.1, 1: 0.2, 2: 0.7}, {0: 1 / 3, 1: 1 / 3, 2: 1 / 3}):
            np.testing.assert_array_equal(aggregate(ups, w), p)

    def test_convex_combination(self):
        ups = updates_from((1,), (1,), params=[np.zeros(4), np.ones(4)])
        np.testing.assert_allclose(aggregate(ups, {0: 0.7, 1: 0.3}), 0.3, rtol=0, atol=1e-15)

    def test_singleton(self):
        p = np.arange(5.0)
        np.testing.assert_array_equal(aggregate(updates_from((1,), params=[p]), {0: 1.0}), p)

    def test_mismatched_ids(self):
        ups = updates_from((1,), (1,))
        with pytest.raises(ProtocolError):
            aggregate(ups, {0: 1.0})
        with pytest.raises(ProtocolError):
            aggregate(ups, {0: 0.5, 1: 0.25, 2: 0.25})

    def test_non_finite(self):
        ups = updates_from((1,), (1,), params=[np.zeros(2), np.array([np.inf, 0.0])])
        with pytest.raises(NumericalError):
            aggregate(ups, {0: 0.5, 1: 0.5})

    @settings(max_examples=50, deadline=None)
    @given(histogram_sets, st.integers(0, 2**31))
    def test_result_within_client_bounds(self, hs, seed):
        rng = np.random.default_rng(seed)
        params = [rng.normal(size=8) for _ in hs]
        ups = updates_from(*hs, params=params)
        out = aggregate(ups, compute_fedla_weights(ups))
        stack = np.stack(params)
        assert np.all(out >= stack.min(axis=0) - 1e-12)
        assert np.all(out <= stack.max(axis=0) + 1e-12)
