import numpy as np
import pytest

from agcd.assignment import cluster_accuracy
from agcd.metrics import accuracy_breakdown, confidence_histogram, novelty_metrics


class TestNoveltyMetrics:
    def test_uniform_all_new(self):
        # 4 queries, 2 per each of 2 new classes
        rep = novelty_metrics(np.array([2, 2, 3, 3]), num_old=2, num_new=2)
        assert rep.nov_c == 1.0
        assert rep.nov_r == 1.0
        assert rep.nov_u == pytest.approx(1.0, abs=1e-12)
        assert rep.nov_i == pytest.approx(1.0, abs=1e-12)

    def test_all_old(self):
        rep = novelty_metrics(np.array([0, 1, 0, 1]), num_old=2, num_new=2)
        assert rep.nov_c == 0.0
        assert rep.nov_r == 0.0
        assert rep.nov_i == 0.0

    def test_half_new_uniformity_anomaly(self):
        # 1 query in each of 2 new classes plus 2 old queries: the distribution
        # is normalized by the total count, so uniformity still reaches 1
        rep = novelty_metrics(np.array([2, 3, 0, 1]), num_old=2, num_new=2)
        assert rep.nov_r == 0.5
        expected_u = -2 * (0.25 * np.log(0.25)) / np.log(2)
        assert rep.nov_u == pytest.approx(expected_u, abs=1e-12)
        assert rep.nov_u == pytest.approx(1.0, abs=1e-12)
        assert rep.nov_i == pytest.approx(0.5, abs=1e-12)

    def test_product_identity_bit_exact(self, rng):
        for _ in range(300):
            k_old, k_new = 3, 4
            n = int(rng.integers(1, 30))
            labels = rng.integers(0, k_old + k_new, size=n)
            rep = novelty_metrics(labels, k_old, k_new)
            assert rep.nov_i == rep.nov_r * rep.nov_u

    def test_order_invariance(self, rng):
        labels = rng.integers(0, 6, size=25)
        a = novelty_metrics(labels, 3, 3)
        b = novelty_metrics(labels[::-1].copy(), 3, 3)
        assert (a.nov_c, a.nov_r, a.nov_u, a.nov_i) == (b.nov_c, b.nov_r, b.nov_u, b.nov_i)

    def test_single_new_class_convention(self):
        all_new = novelty_metrics(np.array([2, 2, 2]), num_old=2, num_new=1)
        assert all_new.nov_u == 1.0
        mixed = novelty_metrics(np.array([2, 0, 2]), num_old=2, num_new=1)
        assert mixed.nov_u == 0.0

    def test_empty_query_rejected(self):
        with pytest.raises(ValueError):
            novelty_metrics(np.array([], dtype=np.int64), 2, 2)


class TestAccuracyBreakdown:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 3, 2, 0])
        rep = accuracy_breakdown(y, y, num_classes=4, num_old=2)
        assert (rep.acc_all, rep.acc_old, rep.acc_new) == (1.0, 1.0, 1.0)

    def test_old_perfect_new_wrong(self):
        # old classes predicted correctly; the two new-class samples collapse
        # onto old clusters so no permutation can rescue them
        y_true = np.array([0, 0, 1, 1, 2, 3])
        y_pred = np.array([0, 0, 1, 1, 0, 1])
        rep = accuracy_breakdown(y_true, y_pred, num_classes=4, num_old=2)
        assert rep.acc_old == 1.0
        assert rep.acc_new == 0.0

    def test_matches_brute_force_small_instance(self):
        from conftest import brute_force_assignment

        y_true = np.array([0, 0, 1, 1, 2, 2])
        y_pred = np.array([1, 1, 0, 2, 2, 2])
        rep = accuracy_breakdown(y_true, y_pred, num_classes=3, num_old=2)
        counts = np.zeros((3, 3))
        np.add.at(counts, (y_pred, y_true), 1)
        best, _ = brute_force_assignment(counts)
        assert rep.acc_all == pytest.approx(best / 6)

    def test_acc_all_equals_cluster_accuracy(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 7))
            n = int(rng.integers(4, 50))
            y_true = rng.integers(0, k, size=n)
            y_pred = rng.integers(0, k, size=n)
            rep = accuracy_breakdown(y_true, y_pred, k, num_old=max(1, k // 2))
            acc, _ = cluster_accuracy(y_true, y_pred, k)
            assert rep.acc_all == acc

    def test_empty_subset_reported_absent(self):
        y_true = np.array([0, 1, 0])
        y_pred = np.array([0, 1, 0])
        rep = accuracy_breakdown(y_true, y_pred, num_classes=4, num_old=2)
        assert rep.acc_old == 1.0
        assert rep.acc_new is None


class TestConfidenceHistogram:
    def test_one_hot_mass_in_top_bin(self):
        p = np.zeros((6, 4))
        p[np.arange(6), np.arange(6) % 4] = 1.0
        y = np.array([0, 0, 0, 2, 2, 2])
        for metric in ("msp", "margin"):
            old_hist, new_hist, edges = confidence_histogram(p, y, num_old=2, metric=metric, bins=10)
            assert old_hist[-1] == 1.0
            assert new_hist[-1] == 1.0

    def test_identical_distributions_give_identical_histograms(self, rng):
        p_block = rng.dirichlet(np.ones(5), size=20)
        p = np.vstack([p_block, p_block])
        y = np.array([0] * 20 + [4] * 20)
        old_hist, new_hist, _ = confidence_histogram(p, y, num_old=2, metric="neg_entropy", bins=8)
        assert np.allclose(old_hist, new_hist, atol=1e-12)

    def test_hand_counted_bins(self):
        p = np.array(
            [
                [0.95, 0.05],  # margin 0.9, old
                [0.55, 0.45],  # margin 0.1, old
                [0.70, 0.30],  # margin 0.4, new
                [0.60, 0.40],  # margin 0.2, new
            ]
        )
        y = np.array([0, 0, 1, 1])
        old_hist, new_hist, edges = confidence_histogram(p, y, num_old=1, metric="margin", bins=2)
        assert old_hist.tolist() == [0.5, 0.5]
        assert new_hist.tolist() == [1.0, 0.0]

    def test_masses_sum_to_one(self, rng):
        p = rng.dirichlet(np.ones(4), size=40)
        y = rng.integers(0, 4, size=40)
        for metric in ("msp", "margin", "neg_entropy"):
            old_hist, new_hist, _ = confidence_histogram(p, y, num_old=2, metric=metric, bins=12)
            assert old_hist.sum() == pytest.approx(1.0, abs=1e-9)
            assert new_hist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError):
            confidence_histogram(np.ones((2, 2)) / 2, np.array([0, 1]), 1, metric="gibberish")
