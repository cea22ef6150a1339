import numpy as np
import pytest

from bundlenet import charts as C


def circle_labels(n, radius=4.5, seed=0):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 2 * np.pi, size=n)
    return radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)


class TestKmeans:
    def test_single_cluster_is_mean(self):
        ys = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]])
        atlas = C.kmeans(ys, q=1, seed=0)
        np.testing.assert_allclose(atlas.reps, [[1.0, 2.0]])

    def test_two_separated_pairs(self):
        ys = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [9.9, 0.0]])
        atlas = C.kmeans(ys, q=2, seed=1)
        reps = atlas.reps[np.argsort(atlas.reps[:, 0])]
        np.testing.assert_allclose(reps, [[0.05, 0.0], [9.95, 0.0]], atol=1e-12)

    def test_q_exceeds_distinct_points(self):
        ys = np.array([[0.0], [0.0], [1.0]])
        with pytest.raises(ValueError):
            C.kmeans(ys, q=3)

    def test_torus_labels_vs_multirestart_oracle(self):
        ys = circle_labels(800, seed=3)
        atlas = C.kmeans(ys, q=25, seed=0)
        idx = C.assign_many(ys, atlas)
        assert len(np.unique(idx)) == 25  # every chart nonempty
        ours = C.within_cluster_ss(ys, atlas)
        best = min(C.within_cluster_ss(ys, C.kmeans(ys, q=25, seed=s))
                   for s in range(10))
        assert ours <= best * 1.05

    def test_wcss_monotone_across_iterations(self):
        ys = circle_labels(300, seed=4)
        trace = []
        C.kmeans(ys, q=8, seed=2, wcss_trace=trace)
        assert len(trace) >= 2
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_deterministic(self):
        ys = circle_labels(200, seed=5)
        a1 = C.kmeans(ys, q=6, seed=9)
        a2 = C.kmeans(ys, q=6, seed=9)
        assert np.array_equal(a1.reps, a2.reps)


class TestFiniteCharts:
    def test_wine_style_pairs(self):
        rng = np.random.default_rng(6)
        qualities = rng.choice([3, 4, 5, 6, 7, 8], size=500)
        colors = rng.choice([0, 10], size=500)
        pairs = np.stack([qualities, colors], axis=1).astype(float)
        # ensure 13 distinct combos like the merged wine set
        extra = np.array([[9.0, 10.0]])
        labels = np.vstack([pairs, extra])
        atlas = C.finite_charts(labels)
        assert atlas.q == len(np.unique(labels, axis=0))

    def test_single_label(self):
        atlas = C.finite_charts(np.array([[7.0]] * 5))
        assert atlas.q == 1

    def test_binary_grid_sorted(self):
        labels = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        atlas = C.finite_charts(labels)
        np.testing.assert_array_equal(
            atlas.reps, [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])

    def test_too_many_distinct(self):
        labels = np.arange(300, dtype=float).reshape(-1, 1)
        with pytest.raises(ValueError, match="continuous"):
            C.finite_charts(labels)


class TestAssign:
    def test_exact_rep(self):
        atlas = C.ChartAtlas(reps=np.array([[0.0], [1.0], [2.0], [3.0]]), mode="finite")
        assert C.assign(np.array([3.0]), atlas) == 3

    def test_tie_lowest_index(self):
        atlas = C.ChartAtlas(reps=np.array([[0.0], [0.0 + 2.0]]), mode="finite")
        assert C.assign(np.array([1.0]), atlas) == 0

    def test_matches_linear_scan(self):
        ys = circle_labels(400, seed=7)
        atlas = C.kmeans(ys, q=12, seed=1)
        for y in ys[:100]:
            dists = np.linalg.norm(atlas.reps - y, axis=1)
            assert C.assign(y, atlas) == int(np.argmin(dists))

    def test_assign_rep_is_identity(self):
        ys = circle_labels(200, seed=8)
        atlas = C.kmeans(ys, q=10, seed=3)
        for i, rep in enumerate(atlas.reps):
            assert C.assign(rep, atlas) == i

    def test_partition(self):
        ys = circle_labels(300, seed=9)
        atlas = C.kmeans(ys, q=7, seed=4)
        idx = C.assign_many(ys, atlas)
        counts = np.bincount(idx, minlength=atlas.q)
        assert counts.sum() == len(ys)  # union covers everything exactly once


class TestSerialization:
    def test_round_trip(self):
        atlas = C.kmeans(circle_labels(100, seed=10), q=5, seed=5)
        again = C.ChartAtlas.from_dict(atlas.to_dict())
        assert again.mode == atlas.mode
        assert np.array_equal(again.reps, atlas.reps)
