import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypergeo import data, hyperbolicity as hy
from hypergeo.errors import EmptyInputError, InsufficientPointsError, InvalidInputError, ShapeError

import oracles


class TestGromovProducts:
    def test_line_metric(self):
        a = hy.gromov_products(oracles.path_metric(3), base=0)
        assert a[1, 2] == pytest.approx(1.0)

    def test_diagonal_is_distance_to_base(self):
        d = oracles.random_tree_metric(np.random.default_rng(0), 6)
        a = hy.gromov_products(d, base=2)
        np.testing.assert_allclose(np.diag(a), d[2])

    def test_base_row_zero(self):
        d = oracles.random_tree_metric(np.random.default_rng(1), 6)
        a = hy.gromov_products(d, base=3)
        np.testing.assert_allclose(a[3], 0.0, atol=1e-15)
        np.testing.assert_allclose(a, a.T)

    def test_base_out_of_range(self):
        with pytest.raises(IndexError):
            hy.gromov_products(oracles.path_metric(3), base=3)

    def test_non_square(self):
        with pytest.raises(ShapeError):
            hy.gromov_products(np.zeros((2, 3)))

    def test_nonnegative_for_metrics(self):
        rng = np.random.default_rng(2)
        p = rng.standard_normal((20, 3))
        a = hy.gromov_products(hy.distance_matrix(p), base=0)
        assert np.all(a >= -1e-12)


class TestDelta:
    def test_path_graph_is_zero(self):
        r = hy.delta_hyperbolicity(oracles.path_metric(5))
        assert r.delta == 0.0
        assert oracles.four_point_delta(oracles.path_metric(5)) == 0.0

    def test_cycle_matches_triple_loop(self):
        d = oracles.cycle_metric(4)
        assert hy.delta_hyperbolicity(d).delta == pytest.approx(oracles.gromov_delta_loops(d), abs=1e-15)
        assert hy.delta_hyperbolicity(d).delta > 0

    def test_too_few_points(self):
        with pytest.raises(InsufficientPointsError):
            hy.delta_hyperbolicity(np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_random_metrics_match_triple_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = rng.standard_normal((9, 4))
            d = hy.distance_matrix(p)
            assert hy.delta_hyperbolicity(d).delta == pytest.approx(oracles.gromov_delta_loops(d), abs=1e-12)

    def test_slabbed_product_matches_dense(self, monkeypatch):
        rng = np.random.default_rng(4)
        a = rng.random((30, 30))
        dense = np.max(np.minimum(a[:, :, None], a[None, :, :]), axis=1)
        monkeypatch.setattr(hy, "_SLAB_BYTES", 8 * 30 * 30 * 4)
        np.testing.assert_array_equal(hy.max_min_product(a, a), dense)

    @given(st.integers(3, 12), st.integers(0, 2**31 - 1))
    def test_trees_are_zero_hyperbolic(self, nodes, seed):
        d = oracles.random_tree_metric(np.random.default_rng(seed), nodes)
        assert oracles.four_point_delta(d) < 1e-9
        assert abs(hy.delta_hyperbolicity(d).delta) < 1e-9

    @given(st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
    def test_scale_invariance(self, alpha, seed):
        p = np.random.default_rng(seed).standard_normal((10, 3))
        d = hy.distance_matrix(p)
        r1 = hy.delta_hyperbolicity(d)
        r2 = hy.delta_hyperbolicity(alpha * d)
        assert r2.delta == pytest.approx(alpha * r1.delta, rel=1e-12, abs=1e-12)
        assert abs(r2.delta_rel - r1.delta_rel) < 1e-12

    @given(st.integers(0, 2**31 - 1))
    def test_delta_rel_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.standard_normal((12, int(rng.integers(1, 6))))
        r = hy.delta_hyperbolicity(hy.distance_matrix(p))
        assert 0.0 <= r.delta_rel <= 1.0
        assert r.delta_rel == pytest.approx(2 * r.delta / r.diam)


class TestSampled:
    def test_deterministic_and_thread_independent(self):
        rng = np.random.default_rng(5)
        p = rng.standard_normal((60, 3))
        a = hy.delta_rel_sampled(p, "euclidean", sample_size=20, trials=8, seed=3)
        b = hy.delta_rel_sampled(p, "euclidean", sample_size=20, trials=8, seed=3, threads=4)
        assert a == b

    def test_duplicated_geometry_has_zero_variance(self):
        # every subsample of a regular simplex is again a regular simplex
        p = np.eye(12)
        r = hy.delta_rel_sampled(p, "euclidean", sample_size=5, trials=10, seed=0)
        assert r.delta_rel_std == 0.0

    def test_full_sample_equals_direct(self):
        rng = np.random.default_rng(6)
        p = rng.standard_normal((15, 3)) * 0.2
        r = hy.delta_rel_sampled(p, "poincare", 1.0, sample_size=15, trials=1, seed=0)
        # a full-size subsample is a permutation; the base point is its first entry
        child = np.random.SeedSequence(0).spawn(1)[0]
        idx = np.random.default_rng(child).choice(15, 15, replace=False)
        direct = hy.delta_hyperbolicity(hy.distance_matrix(p[idx], "poincare", 1.0))
        assert r.delta == direct.delta
        assert r.diam == pytest.approx(np.max(hy.distance_matrix(p, "poincare", 1.0)), rel=1e-15)

    def test_errors(self):
        p = np.zeros((5, 2))
        with pytest.raises(InsufficientPointsError):
            hy.delta_rel_sampled(p, sample_size=2)
        with pytest.raises(InvalidInputError):
            hy.delta_rel_sampled(p, sample_size=6)
        with pytest.raises(EmptyInputError):
            hy.delta_rel_sampled(np.zeros((0, 2)))
        with pytest.raises(InvalidInputError):
            hy.distance_matrix(p, "poincare")
        with pytest.raises(InvalidInputError):
            hy.distance_matrix(p, "manhattan")

    def test_csv_row(self):
        r = hy.HyperbolicityReport(0.5, 2.0, 0.5, 200, 10, 7)
        assert r.csv_row() == ["0.5", "2.0", "0.5", 200, 10, 7]
        assert len(r.csv_row()) == len(hy.CSV_FIELDS)

    def test_tree_dataset_below_gaussian(self):
        ds = data.generate_tree_dataset(data.DatasetConfig(seed=0))
        tree = hy.delta_rel_sampled(ds.points, "poincare", ds.kappa, 150, 10, 0)
        cloud = hy.delta_rel_sampled(data.gaussian_cloud_like(ds, 0), "poincare", ds.kappa, 150, 10, 0)
        assert tree.delta_rel < cloud.delta_rel
