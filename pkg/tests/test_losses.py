import itertools
import math

import numpy as np
import pytest

from bundlenet import losses as L
from bundlenet import tensor as T


class TestForwardLoss:
    def test_zero_when_equal(self):
        y = np.array([[1.0, 2.0]])
        assert L.forward_loss(y, y) == 0.0

    def test_unit(self):
        assert L.forward_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])) == 1.0

    def test_345(self):
        assert L.forward_loss(np.array([[3.0, 4.0]]), np.array([[0.0, 0.0]])) == 25.0

    def test_batch_average(self):
        y_hat = np.array([[1.0, 0.0], [0.0, 0.0]])
        y = np.zeros((2, 2))
        assert L.forward_loss(y_hat, y) == pytest.approx(0.5)

    def test_dim_mismatch(self):
        with pytest.raises(T.ShapeError):
            L.forward_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_engine_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        assert L.forward_loss(T.Tensor(a), T.Tensor(b)).item() == pytest.approx(
            L.forward_loss(a, b))


class TestMsmd:
    def test_self_zero(self):
        s = np.random.default_rng(1).normal(size=(20, 3))
        assert L.msmd(s, s) == 0.0

    def test_nearer_point_wins(self):
        assert L.msmd(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0], [6.0, 8.0]])) == 25.0

    def test_asymmetry(self):
        near = np.array([[0.0, 0.0]])
        both = np.array([[0.0, 0.0], [100.0, 0.0]])
        assert L.msmd(near, both) == 0.0
        assert L.msmd(both, near) == 5000.0

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            L.msmd(np.zeros((0, 2)), np.zeros((3, 2)))

    def test_engine_matches_numpy(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(11, 3)), rng.normal(size=(7, 3))
        assert L.msmd(T.Tensor(a), T.Tensor(b)).item() == pytest.approx(L.msmd(a, b))


class TestKnnKl:
    def test_self_divergence_near_zero(self):
        # same-distribution samples: estimator averages to ~0 over seeds
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            p = rng.normal(size=(2000, 2))
            q = rng.normal(size=(2000, 2))
            vals.append(L.knn_kl(p, q, k=5))
        assert abs(np.mean(vals)) < 0.1

    def test_shifted_gaussian_closed_form(self):
        # KL(N(0,1) || N(1,1)) = 0.5
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            p = rng.normal(0.0, 1.0, size=(5000, 1))
            q = rng.normal(1.0, 1.0, size=(5000, 1))
            vals.append(L.knn_kl(p, q, k=5))
        assert abs(np.mean(vals) - 0.5) < 0.1

    def test_hand_computed_tiny_case(self):
        p = np.array([[0.0], [1.0]])
        q = np.array([[0.0]])
        # rho_1 = (1, 1); nu_1 = (0 -> floor 1e-12, 1); d=1, n=2, m=1
        expected = 0.5 * math.log(1e-12) + math.log(1.0)
        assert L.knn_kl(p, q, k=1) == pytest.approx(expected, rel=1e-9)

    def test_insufficient_points(self):
        with pytest.raises(ValueError):
            L.knn_kl(np.zeros((5, 1)), np.zeros((10, 1)), k=5)
        with pytest.raises(ValueError):
            L.knn_kl(np.zeros((10, 1)), np.zeros((4, 1)), k=5)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        p = rng.normal(size=(50, 3))
        q = rng.normal(size=(60, 3))
        base = L.knn_kl(p, q, k=4)
        for seed in range(3):
            r2 = np.random.default_rng(seed)
            assert L.knn_kl(p[r2.permutation(50)], q[r2.permutation(60)], k=4) == \
                pytest.approx(base, rel=1e-12)

    def test_finite_on_duplicates(self):
        p = np.array([[0.0, 0.0]] * 8 + [[1.0, 1.0]] * 8)
        q = np.array([[0.0, 0.0]] * 8)
        v = L.knn_kl(p, q, k=3)
        assert math.isfinite(v)

    def test_engine_matches_numpy(self):
        rng = np.random.default_rng(6)
        p = rng.normal(size=(40, 2))
        q = rng.normal(size=(35, 2))
        assert L.knn_kl(T.Tensor(p), T.Tensor(q), k=5).item() == pytest.approx(
            L.knn_kl(p, q, k=5), rel=1e-12)


class TestWasserstein:
    def test_self_zero(self):
        s = np.random.default_rng(7).normal(size=(16, 3))
        assert L.wasserstein(s, s, p=1) == 0.0
        assert L.wasserstein(s, s, p=2) == 0.0

    def test_single_point_transport(self):
        s1, s2 = np.array([[0.0]]), np.array([[3.0]])
        assert L.wasserstein(s1, s2, p=1) == pytest.approx(3.0)
        assert L.wasserstein(s1, s2, p=2) == pytest.approx(3.0)

    @pytest.mark.parametrize("p", [1, 2])
    def test_exact_matches_factorial_bruteforce(self, p):
        rng = np.random.default_rng(8 + p)
        a = rng.uniform(-5, 5, size=(8, 2))
        b = rng.uniform(-5, 5, size=(8, 2))
        cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2) ** p
        best = min(sum(cost[i, pi] for i, pi in enumerate(perm))
                   for perm in itertools.permutations(range(8)))
        expected = (best / 8) ** (1.0 / p)
        assert L.wasserstein(a, b, p=p) == pytest.approx(expected, abs=1e-9)

    def test_size_mismatch(self):
        with pytest.raises(T.ShapeError):
            L.wasserstein(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_triangle_sanity(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            a, b, c = (rng.uniform(-3, 3, size=(12, 2)) for _ in range(3))
            w_ac = L.wasserstein(a, c, p=1)
            w_ab = L.wasserstein(a, b, p=1)
            w_bc = L.wasserstein(b, c, p=1)
            assert w_ac <= w_ab + w_bc + 1e-9

    @pytest.mark.parametrize("p", [1, 2])
    def test_entropic_close_to_exact(self, p):
        cfg_exact = L.MetricConfig(wasserstein_method="exact")
        cfg_ent = L.MetricConfig(wasserstein_method="entropic", entropic_blur=0.01)
        rng = np.random.default_rng(20 + p)
        for _ in range(3):
            a = rng.uniform(0, 10, size=(128, 3))
            b = rng.uniform(0, 10, size=(128, 3)) + rng.normal(scale=0.5, size=3)
            exact = L.wasserstein(a, b, p=p, config=cfg_exact)
            ent = L.wasserstein(a, b, p=p, config=cfg_ent)
            assert abs(ent - exact) / max(exact, 0.1) < 0.05

    def test_nonnegative(self):
        rng = np.random.default_rng(30)
        a = rng.normal(size=(10, 2))
        b = rng.normal(size=(10, 2))
        assert L.wasserstein(a, b, p=1) >= 0.0


class TestMmd:
    def test_self_exact_zero(self):
        s = np.random.default_rng(40).normal(size=(64, 3))
        assert L.mmd(s, s) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(41)
        a, b = rng.normal(size=(30, 2)), rng.normal(size=(25, 2))
        assert L.mmd(a, b) == pytest.approx(L.mmd(b, a), rel=1e-12)

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=(120, 2))
        b = rng.normal(size=(120, 2)) + np.array([5.0, 0.0])
        sigma = 1.0

        def kern(x, y):
            return math.exp(-((x - y) ** 2).sum() / (2 * sigma * sigma))

        k11 = np.mean([[kern(x, y) for y in a] for x in a])
        k22 = np.mean([[kern(x, y) for y in b] for x in b])
        k12 = np.mean([[kern(x, y) for y in b] for x in a])
        expected = k11 + k22 - 2 * k12
        assert L.mmd(a, b, bandwidth=1.0) == pytest.approx(expected, rel=1e-10)

    def test_floor_not_negative(self):
        rng = np.random.default_rng(43)
        a = rng.normal(size=(50, 2))
        b = rng.normal(size=(50, 2))
        assert L.mmd(a, b) >= -1e-12


class TestBackwardLoss:
    def test_identical_clouds(self):
        rng = np.random.default_rng(50)
        cloud = rng.normal(size=(30, 3))
        cfg = L.MetricConfig()
        gen = T.Tensor(cloud.copy(), requires_grad=True)
        kf, kb, ms = L.backward_loss(gen, cloud, cfg)
        assert ms.item() == 0.0
        # KL terms equal the estimator's self-divergence at this sample size
        assert kf.item() == pytest.approx(L.knn_kl(cloud, cloud, 5), rel=1e-12)
        assert kb.item() == pytest.approx(L.knn_kl(cloud, cloud, 5), rel=1e-12)

    def test_separated_clouds_positive(self):
        rng = np.random.default_rng(51)
        real = rng.normal(size=(40, 2))
        gen = T.Tensor(real + 20.0, requires_grad=True)
        cfg = L.MetricConfig()
        kf, kb, ms = L.backward_loss(gen, real, cfg)
        assert kf.item() > 0 and kb.item() > 0 and ms.item() > 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(52)
        real = rng.normal(size=(12, 2))
        gen0 = rng.normal(size=(12, 2)) + 0.3
        cfg = L.MetricConfig(knn_k=3)

        def loss_value(arr):
            g = T.Tensor(arr)
            kf, kb, ms = L.backward_loss(g, real, cfg)
            return kf.item() + kb.item() + ms.item()

        gen = T.Tensor(gen0.copy(), requires_grad=True)
        kf, kb, ms = L.backward_loss(gen, real, cfg)
        total = T.add(T.add(kf, kb), ms)
        total.backward()
        num = T.finite_difference_grad(loss_value, gen0.copy(), h=1e-6)
        assert T.relative_error(gen.grad, num) < 1e-4

    def test_finite_on_duplicated_points(self):
        real = np.array([[0.0, 0.0]] * 10)
        gen = T.Tensor(np.array([[0.0, 0.0]] * 10), requires_grad=True)
        cfg = L.MetricConfig(knn_k=3)
        kf, kb, ms = L.backward_loss(gen, real, cfg)
        total = T.add(T.add(kf, kb), ms)
        assert math.isfinite(total.item())
        total.backward()
        assert np.isfinite(gen.grad).all()


class TestLossBreakdown:
    def test_total_is_exact_sum(self):
        br = L.LossBreakdown(0.1, 0.2, 0.3, 0.4)
        assert br.total == 0.1 + 0.2 + 0.3 + 0.4


class TestMetricSuite:
    def test_matches_individual_metrics(self):
        rng = np.random.default_rng(60)
        g = rng.normal(size=(80, 3))
        r = rng.normal(size=(80, 3)) + 0.5
        cfg = L.MetricConfig()
        suite = L.metric_suite(g, r, cfg)
        assert suite["msmd"] == pytest.approx(L.msmd(g, r), rel=1e-12)
        assert suite["kl_fwd"] == pytest.approx(L.knn_kl(r, g, cfg.knn_k), rel=1e-12)
        assert suite["kl_bwd"] == pytest.approx(L.knn_kl(g, r, cfg.knn_k), rel=1e-12)
        assert suite["w1"] == pytest.approx(L.wasserstein(g, r, 1, cfg), rel=1e-12)
        assert suite["w2"] == pytest.approx(L.wasserstein(g, r, 2, cfg), rel=1e-12)
        assert suite["mmd"] == pytest.approx(L.mmd(g, r), rel=1e-12)

    def test_self_comparison(self):
        rng = np.random.default_rng(61)
        g = rng.normal(size=(50, 3))
        suite = L.metric_suite(g, g.copy())
        assert suite["w1"] == 0.0
        assert suite["msmd"] == 0.0
        assert suite["mmd"] == 0.0
