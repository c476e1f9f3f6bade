import itertools

import numpy as np
import pytest

from agcd.assignment import (
    LabelMapping,
    cluster_accuracy,
    compute_mapping,
    hungarian,
    mapping_diff,
)
from conftest import brute_force_assignment


class TestHungarian:
    def test_identity_dominant_matrix(self):
        reward = np.eye(5)
        perm = hungarian(reward)
        assert np.array_equal(perm, np.arange(5))
        assert reward[np.arange(5), perm].sum() == 5

    def test_matches_brute_force_on_random_integer_matrices(self):
        rng = np.random.default_rng(7)
        for trial in range(60):
            k = 2 + trial % 6
            reward = rng.integers(-20, 20, size=(k, k)).astype(float)
            perm = hungarian(reward)
            value = reward[np.arange(k), perm].sum()
            best, _ = brute_force_assignment(reward)
            assert value == pytest.approx(best, abs=1e-9)

    def test_constant_shift_keeps_argmax(self):
        rng = np.random.default_rng(3)
        reward = rng.integers(0, 50, size=(6, 6)).astype(float)
        assert np.array_equal(hungarian(reward), hungarian(reward + 17.5))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            hungarian(np.ones((3, 4)))

    def test_rejects_non_finite(self):
        bad = np.ones((3, 3))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError):
            hungarian(bad)


class TestClusterAccuracy:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 1, 0])
        acc, _ = cluster_accuracy(y, y, 3)
        assert acc == 1.0

    def test_relabeled_predictions_still_perfect(self):
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([1, 1, 0, 0])
        acc, perm = cluster_accuracy(y_true, y_pred, 2)
        assert acc == 1.0
        assert np.array_equal(perm, [1, 0])

    def test_two_thirds_example(self):
        # brute force over 3! permutations gives 2/3
        acc, _ = cluster_accuracy(np.array([0, 1, 2]), np.array([0, 1, 1]), 3)
        assert acc == pytest.approx(2 / 3)

    def test_matches_brute_force_on_random_labelings(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(3, 40))
            y_true = rng.integers(0, k, size=n)
            y_pred = rng.integers(0, k, size=n)
            acc, _ = cluster_accuracy(y_true, y_pred, k)
            counts = np.zeros((k, k))
            np.add.at(counts, (y_pred, y_true), 1)
            best, _ = brute_force_assignment(counts)
            assert acc == pytest.approx(best / n)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(5)
        y_true = rng.integers(0, 4, size=30)
        y_pred = rng.integers(0, 4, size=30)
        acc, _ = cluster_accuracy(y_true, y_pred, 4)
        shuffle = rng.permutation(4)
        acc2, _ = cluster_accuracy(y_true, shuffle[y_pred], 4)
        assert acc == pytest.approx(acc2)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            cluster_accuracy(np.array([]), np.array([]), 2)


class TestLabelMapping:
    def test_identity_apply(self):
        m = LabelMapping.identity(4)
        labels = np.array([3, 1, 0, 2])
        assert np.array_equal(m.apply(labels), labels)

    def test_apply_then_inverse_roundtrip(self):
        m = LabelMapping(np.array([2, 0, 1]))
        labels = np.array([0, 1, 2, 2, 1, 0])
        assert np.array_equal(m.inverse().apply(m.apply(labels)), labels)

    def test_swap_example(self):
        m = LabelMapping(np.array([1, 0]))
        assert np.array_equal(m.apply(np.array([0, 1, 0])), [1, 0, 1])

    def test_non_bijection_rejected(self):
        with pytest.raises(ValueError):
            LabelMapping(np.array([0, 0, 1]))

    def test_json_roundtrip(self):
        m = LabelMapping(np.array([2, 0, 1]))
        assert LabelMapping.from_json(m.to_json()) == m


class TestComputeMapping:
    def test_identity_when_predictions_match_truth(self):
        y = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        m = compute_mapping(y, y, 4)
        assert np.array_equal(m.map, np.arange(4))

    def test_recovers_every_permutation_small_k(self):
        for k in (2, 3, 4):
            y = np.tile(np.arange(k), 3)
            for perm in itertools.permutations(range(k)):
                perm_arr = np.array(perm)
                m = compute_mapping(y, perm_arr[y], k)
                assert np.array_equal(m.map, perm_arr)

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(23)
        k = 5
        for _ in range(30):
            y_true = rng.integers(0, k, size=40)
            y_pred = rng.integers(0, k, size=40)
            m = compute_mapping(y_true, y_pred, k)
            agreement = (m.apply(y_true) == y_pred).mean()
            counts = np.zeros((k, k))
            np.add.at(counts, (y_true, y_pred), 1)
            best, _ = brute_force_assignment(counts)
            assert agreement == pytest.approx(best / 40)

    def test_duplicating_samples_keeps_mapping_on_covered_classes(self):
        rng = np.random.default_rng(2)
        y_true = rng.integers(0, 3, size=20)
        y_pred = rng.integers(0, 5, size=20)
        m1 = compute_mapping(y_true, y_pred, 5)
        m2 = compute_mapping(np.tile(y_true, 2), np.tile(y_pred, 2), 5)
        present = np.unique(y_true)
        assert np.array_equal(m1.map[present], m2.map[present])

    def test_empty_labeled_set_rejected(self):
        with pytest.raises(ValueError, match="no labeled data"):
            compute_mapping(np.array([]), np.array([]), 3)


class TestMappingDiff:
    def test_identical_mappings(self):
        m = LabelMapping(np.array([1, 2, 0]))
        assert mapping_diff(m, m) == 0.0

    def test_one_of_four_differs(self):
        a = LabelMapping(np.array([0, 1, 2, 3]))
        b = LabelMapping(np.array([0, 1, 3, 2]))
        assert mapping_diff(a, b) == 0.5  # two entries swapped -> both differ
        c = LabelMapping(np.array([0, 2, 1, 3]))
        d = LabelMapping(np.array([0, 1, 2, 3]))
        assert mapping_diff(c, d) == 0.5

    def test_full_reversal_k2(self):
        a = LabelMapping(np.array([0, 1]))
        b = LabelMapping(np.array([1, 0]))
        assert mapping_diff(a, b) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        a = LabelMapping(rng.permutation(6))
        b = LabelMapping(rng.permutation(6))
        assert mapping_diff(a, b) == mapping_diff(b, a)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mapping_diff(LabelMapping.identity(3), LabelMapping.identity(4))
