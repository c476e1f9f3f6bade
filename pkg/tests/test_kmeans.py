import numpy as np
import pytest

from agcd.kmeans import kmeans_pp_seeds, lloyd, pairwise_sq_dists


class TestPairwiseSqDists:
    def test_matches_direct_computation(self, rng):
        a = rng.standard_normal((7, 3))
        b = rng.standard_normal((5, 3))
        direct = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        assert np.allclose(pairwise_sq_dists(a, b), direct, atol=1e-12)

    def test_never_negative(self, rng):
        a = rng.standard_normal((10, 4))
        assert (pairwise_sq_dists(a, a) >= 0).all()


class TestSeeding:
    def test_maxnorm_first_seed(self):
        x = np.array([[0.1, 0.0], [3.0, 0.0], [0.0, 0.2]])
        seeds = kmeans_pp_seeds(x, 1, np.random.default_rng(0), first="maxnorm")
        assert seeds.tolist() == [1]

    def test_duplicate_points_fall_back_to_lowest_index(self):
        x = np.ones((5, 2))
        seeds = kmeans_pp_seeds(x, 3, np.random.default_rng(0), first="maxnorm")
        assert seeds.tolist() == [0, 1, 2]

    def test_d2_mass_forces_far_cluster(self):
        # two duplicated clusters: the second seed always lands in the other one
        x = np.array([[10.0, 0.0], [10.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        for trial in range(25):
            seeds = kmeans_pp_seeds(x, 2, np.random.default_rng(trial), first="maxnorm")
            assert seeds[0] == 0
            assert seeds[1] in (2, 3)

    def test_deterministic_given_seed(self, rng):
        x = rng.standard_normal((30, 4))
        a = kmeans_pp_seeds(x, 5, np.random.default_rng(3))
        b = kmeans_pp_seeds(x, 5, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_k_bounds_checked(self):
        with pytest.raises(ValueError):
            kmeans_pp_seeds(np.ones((3, 2)), 4, np.random.default_rng(0))


class TestLloyd:
    def test_separated_blobs_recovered(self, rng):
        blob_a = rng.standard_normal((40, 2)) * 0.1 + [5, 0]
        blob_b = rng.standard_normal((40, 2)) * 0.1 + [-5, 0]
        x = np.vstack([blob_a, blob_b])
        centroids, assign, inertia = lloyd(x, 2, np.random.default_rng(0))
        assert len(np.unique(assign[:40])) == 1
        assert len(np.unique(assign[40:])) == 1
        assert assign[0] != assign[40]
        means = np.sort(centroids[:, 0])
        assert np.allclose(means, [-5, 5], atol=0.2)

    def test_restarts_keep_best_inertia(self, rng):
        x = rng.standard_normal((60, 3))
        _, _, single = lloyd(x, 4, np.random.default_rng(1), n_init=1)
        _, _, multi = lloyd(x, 4, np.random.default_rng(1), n_init=5)
        assert multi <= single + 1e-9

    def test_deterministic(self, rng):
        x = rng.standard_normal((50, 3))
        a = lloyd(x, 3, np.random.default_rng(9))
        b = lloyd(x, 3, np.random.default_rng(9))
        assert np.array_equal(a[1], b[1])
        assert a[2] == b[2]
