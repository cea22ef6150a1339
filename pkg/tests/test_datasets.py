import json
import math

import numpy as np
import pytest
from scipy import stats

from bundlenet import datasets as D


def spec(kind="torus", n=500, seed=0, **kw):
    return D.SyntheticSpec(kind=kind, n=n, seed=seed, **kw)


class TestTorus:
    def test_parameterization_corners(self):
        R, r = 8.0, 2.0
        pts = D._torus_points(np.array([0.0, np.pi]), np.array([0.0, np.pi]), R, r)
        np.testing.assert_allclose(pts[0], [10.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(pts[1], [-6.0, 0.0, 0.0], atol=1e-12)

    def test_label_at_phi_zero(self):
        ds = D.gen_torus(spec(n=50))
        np.testing.assert_allclose(np.linalg.norm(ds.y, axis=1), 4.5, atol=1e-9)

    def test_implicit_equation(self):
        ds = D.gen_torus(spec(n=2000, seed=3))
        assert D.surface_residual("torus", ds.x, ds.synthetic_spec()).max() < 1e-9

    def test_rejection_histogram_chisquare(self):
        # theta histogram consistent with density ~ (R + r cos theta)
        s = spec(n=50000, seed=7)
        ds = D.gen_torus(s, uniform_surface=True)
        rad = np.hypot(ds.x[:, 0], ds.x[:, 1])
        theta = np.mod(np.arctan2(ds.x[:, 2] / s.r, (rad - s.R) / s.r), 2 * np.pi)
        counts, edges = np.histogram(theta, bins=36, range=(0, 2 * np.pi))
        centers_l, centers_r = edges[:-1], edges[1:]
        mass = (s.R * (centers_r - centers_l)
                + s.r * (np.sin(centers_r) - np.sin(centers_l)))
        expected = s.n * mass / mass.sum()
        _, p = stats.chisquare(counts, expected)
        assert p > 0.001

    def test_parameter_uniform_differs_from_surface_uniform(self):
        inner = lambda ds: np.mean(np.hypot(ds.x[:, 0], ds.x[:, 1]) < 8.0)
        plain = D.gen_torus(spec(n=20000, seed=1))
        uniform = D.gen_torus(spec(n=20000, seed=1), uniform_surface=True)
        assert inner(plain) > inner(uniform)  # inner ring over-represented


class TestMoebius:
    def test_center_line(self):
        d = D._moebius_direction(np.array([0.0]))
        np.testing.assert_allclose(d, [[-1.0, 0.0, 0.0]], atol=1e-12)
        center = np.array([8.0, 0.0, 0.0])
        np.testing.assert_allclose(center + 0.0 * d[0], [8.0, 0.0, 0.0])

    def test_hand_point(self):
        # theta=0, s=2 lands at (6, 0, 0)
        d = D._moebius_direction(np.array([0.0]))[0]
        np.testing.assert_allclose(np.array([8.0, 0, 0]) + 2.0 * d, [6.0, 0, 0],
                                   atol=1e-12)

    def test_within_band_width(self):
        ds = D.gen_moebius(spec(kind="moebius", n=2000, seed=5))
        theta = np.arctan2(ds.y[:, 1], ds.y[:, 0])
        center = np.stack([8.0 * np.cos(theta), 8.0 * np.sin(theta),
                           np.zeros_like(theta)], axis=1)
        dist = np.linalg.norm(ds.x - center, axis=1)
        assert dist.max() <= 2.0 + 1e-9

    def test_half_twist(self):
        # direction flips sign over a full loop
        d0 = D._moebius_direction(np.array([0.0]))[0]
        d1 = D._moebius_direction(np.array([2 * np.pi]))[0]
        np.testing.assert_allclose(d1, -d0, atol=1e-12)

    def test_implicit_residual(self):
        ds = D.gen_moebius(spec(kind="moebius", n=2000, seed=6))
        assert D.surface_residual("moebius", ds.x, ds.synthetic_spec()).max() < 1e-9


class TestSlicedTorus:
    def test_singular_fiber(self):
        pts = D._torus_points(np.array([0.0]), np.array([1.234]),
                              8.0, D._sliced_radius(np.array([0.0]), 2.0))
        np.testing.assert_allclose(pts[0], [8.0, 0.0, 0.0], atol=1e-12)

    def test_full_fiber_at_pi(self):
        rad = D._sliced_radius(np.array([np.pi]), 2.0)
        assert rad[0] == pytest.approx(2.0)

    def test_radius_bounded_and_continuous(self):
        phi = np.linspace(0, 2 * np.pi, 10001)
        rad = D._sliced_radius(phi, 2.0)
        assert rad.min() >= 0.0 and rad.max() <= 2.0
        assert np.abs(np.diff(rad)).max() < 0.01

    def test_implicit_equation(self):
        ds = D.gen_sliced_torus(spec(kind="sliced_torus", n=2000, seed=8))
        resid = D.surface_residual("sliced_torus", ds.x, ds.synthetic_spec())
        assert resid.max() < 1e-9


class TestOval:
    def test_unit_circle(self):
        pts = D.gen_oval(500, 1.0, 1.0, seed=1)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-9)

    def test_axes(self):
        pts = D.gen_oval(1000, 2.0, 1.0, seed=2)
        resid = (pts[:, 0] / 2.0) ** 2 + pts[:, 1] ** 2
        np.testing.assert_allclose(resid, 1.0, atol=1e-9)

    def test_bad_axes(self):
        with pytest.raises(ValueError):
            D.gen_oval(10, 0.0, 1.0)


class TestFiberOracle:
    def test_torus_phi_zero(self):
        rng = np.random.default_rng(0)
        pts = D.fiber_oracle("torus", 0.0, 300, spec(), rng)
        np.testing.assert_allclose(pts[:, 1], 0.0, atol=1e-9)
        resid = (pts[:, 0] - 8.0) ** 2 + pts[:, 2] ** 2
        np.testing.assert_allclose(resid, 4.0, atol=1e-9)

    def test_moebius_segment(self):
        rng = np.random.default_rng(1)
        pts = D.fiber_oracle("moebius", 0.0, 300, spec(kind="moebius"), rng)
        np.testing.assert_allclose(pts[:, 1:], 0.0, atol=1e-9)
        assert pts[:, 0].min() >= 6.0 - 1e-9 and pts[:, 0].max() <= 10.0 + 1e-9

    def test_sliced_degenerate(self):
        rng = np.random.default_rng(2)
        pts = D.fiber_oracle("sliced_torus", 0.0, 50, spec(kind="sliced_torus"), rng)
        np.testing.assert_allclose(pts, np.tile([8.0, 0.0, 0.0], (50, 1)), atol=1e-12)
        assert D.fiber_is_degenerate("sliced_torus", 0.0, spec(kind="sliced_torus"))
        assert not D.fiber_is_degenerate("sliced_torus", np.pi, spec(kind="sliced_torus"))
        assert not D.fiber_is_degenerate("torus", 0.0, spec())

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            D.fiber_oracle("wine", 0.0, 10, spec(), np.random.default_rng(0))


class TestNormalize:
    def test_already_spanning(self):
        out, (m, M) = D.normalize([0.0, 5.0, 10.0])
        np.testing.assert_allclose(out, [0.0, 5.0, 10.0])
        assert (m, M) == (0.0, 10.0)

    def test_endpoints(self):
        out, _ = D.normalize([2.0, 4.0])
        np.testing.assert_allclose(out, [0.0, 10.0])

    def test_constant_column(self):
        out, (m, M) = D.normalize([7.0, 7.0])
        np.testing.assert_allclose(out, [0.0, 0.0])
        assert m == M == 7.0

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(3)
        col = rng.uniform(-31.0, 17.0, size=100)
        once, _ = D.normalize(col)
        twice, _ = D.normalize(once)
        np.testing.assert_allclose(twice, once, atol=1e-12)
        assert once.min() == 0.0 and once.max() == 10.0


class TestSplit:
    def test_counts(self):
        ds = D.gen_torus(spec(n=10))
        out = D.split(ds, test_frac=0.2, seed=0)
        assert len(out.train_idx) == 8 and len(out.test_idx) == 2

    def test_deterministic(self):
        ds = D.gen_torus(spec(n=40))
        a = D.split(ds, seed=5)
        b = D.split(ds, seed=5)
        assert np.array_equal(a.train_idx, b.train_idx)

    def test_partition(self):
        ds = D.gen_torus(spec(n=37))
        out = D.split(ds, seed=1)
        joined = np.concatenate([out.train_idx, out.test_idx])
        assert np.array_equal(np.sort(joined), np.arange(37))

    def test_too_small(self):
        ds = D.gen_torus(spec(n=4))
        with pytest.raises(ValueError):
            D.split(ds)


def write_wine_file(path, n, quality_values, seed):
    rng = np.random.default_rng(seed)
    cols = [f'"f{i}"' for i in range(11)] + ['"quality"']
    lines = [";".join(cols)]
    for _ in range(n):
        feats = rng.uniform(0, 10, 11)
        q = rng.choice(quality_values)
        lines.append(";".join(repr(float(v)) for v in feats) + f";{q}")
    path.write_text("\n".join(lines) + "\n")


class TestCsvLoading:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            D.load_csv(tmp_path / "nope.csv", [0], [1])

    def test_header_only(self, tmp_path):
        f = tmp_path / "empty.csv"
        f.write_text("a,b,c\n")
        with pytest.raises(D.CsvFormatError, match="header only"):
            D.load_csv(f, [0], [1])

    def test_malformed_row_reports_number(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(D.CsvFormatError, match="row 3"):
            D.load_csv(f, [0], [1])

    def test_ragged_row(self, tmp_path):
        f = tmp_path / "ragged.csv"
        f.write_text("a,b\n1,2\n3\n")
        with pytest.raises(D.CsvFormatError, match="row 3"):
            D.load_csv(f, [0], [1])

    def test_normalized_range(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("a;b;c\n1;10;3\n5;20;9\n9;30;6\n")
        ds = D.load_csv(f, ["a", "b"], ["c"])
        assert ds.x.min() == 0.0 and ds.x.max() == 10.0
        assert ds.dim_x == 2 and ds.dim_y == 1

    def test_headerless_whitespace_table(self, tmp_path):
        f = tmp_path / "t.dat"
        f.write_text("1 2 3 4 5 100\n2 3 4 5 6 120\n3 4 5 6 7 140\n")
        ds = D.load_airfoil(f)
        assert ds.dim_x == 5 and ds.dim_y == 1

    def test_wine_merge(self, tmp_path):
        red, white = tmp_path / "red.csv", tmp_path / "white.csv"
        write_wine_file(red, 60, [3, 4, 5, 6], seed=1)
        write_wine_file(white, 80, [4, 5, 6, 7, 8, 9], seed=2)
        ds = D.load_wine(red, white)
        assert ds.dim_x == 11 and ds.dim_y == 2
        assert ds.n == 140
        assert ds.label_kind == "finite"
        # color column normalized to {0, 10}
        assert set(np.unique(ds.y[:, 1])) == {0.0, 10.0}


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = D.split(D.gen_torus(spec(n=50, seed=9)), seed=2)
        path = tmp_path / "torus.csv"
        D.save_dataset(ds, path)
        back = D.load_dataset(path)
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.y, ds.y)
        assert np.array_equal(back.train_idx, ds.train_idx)
        assert np.array_equal(back.test_idx, ds.test_idx)
        assert back.kind == "torus"

    def test_sidecar_exists(self, tmp_path):
        ds = D.gen_torus(spec(n=20))
        path = tmp_path / "t.csv"
        D.save_dataset(ds, path)
        side = json.loads(D.sidecar_path(path).read_text())
        assert side["params"]["base_radius"] == 4.5

    def test_missing_sidecar(self, tmp_path):
        ds = D.gen_torus(spec(n=20))
        path = tmp_path / "t.csv"
        D.save_dataset(ds, path)
        D.sidecar_path(path).unlink()
        with pytest.raises(FileNotFoundError):
            D.load_dataset(path)
