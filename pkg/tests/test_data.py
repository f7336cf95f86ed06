import numpy as np
import pytest

from hypergeo import ball, data, hyperbolicity as hy
from hypergeo.errors import InvalidInputError


class TestDatasetConfig:
    def test_classes_default_to_leaves(self):
        assert data.DatasetConfig(depth=2, branching=3).classes == 9

    @pytest.mark.parametrize("kwargs", [
        dict(depth=1), dict(branching=1), dict(depth=2, branching=2, classes=5), dict(classes=1),
        dict(dim=1), dict(per_class=0), dict(noise_scale=-1.0), dict(nuisance_dims=65),
        dict(kappa=0.0),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidInputError):
            data.DatasetConfig(**kwargs)

    def test_benchmark_preset(self):
        cfg = data.benchmark_config(seed=3, per_class=10)
        assert cfg.seed == 3 and cfg.per_class == 10
        assert cfg.nuisance_dims > 0 and cfg.nuisance_scale > 0
        assert cfg.to_dict()["root_scale"] == cfg.root_scale


class TestGenerate:
    def test_shapes_and_labels(self):
        cfg = data.DatasetConfig(depth=2, branching=3, classes=5, dim=8, per_class=4)
        ds = data.generate_tree_dataset(cfg)
        assert ds.points.shape == (20, 8)
        assert ds.class_sizes() == {c: 4 for c in range(5)}
        np.testing.assert_array_equal(ds.class_ids, np.arange(5))
        assert ds.dim == 8 and ds.kappa == cfg.kappa
        assert len(ds.tree) == 1 + 3 + 9 and ds.tree[0] == -1
        assert len(np.unique(ds.class_nodes)) == 5

    def test_inside_ball(self):
        ds = data.generate_tree_dataset(data.benchmark_config(seed=1))
        assert np.all(np.linalg.norm(ds.points, axis=1) <= ball.max_norm(ds.kappa))

    def test_seed_determinism(self):
        cfg = data.DatasetConfig(dim=16, seed=4)
        a = data.generate_tree_dataset(cfg)
        b = data.generate_tree_dataset(cfg)
        np.testing.assert_array_equal(a.points, b.points)
        c = data.generate_tree_dataset(data.DatasetConfig(dim=16, seed=5))
        assert not np.array_equal(a.points, c.points)

    def test_noise_free_classes_collapse(self):
        ds = data.generate_tree_dataset(data.DatasetConfig(dim=8, noise_scale=0.0, per_class=3))
        for c in ds.class_ids:
            pts = ds.points[ds.labels == c]
            np.testing.assert_array_equal(pts, np.broadcast_to(pts[0], pts.shape))

    def test_siblings_closer_than_cousins(self):
        ds = data.generate_tree_dataset(data.DatasetConfig(depth=2, branching=2, dim=16, noise_scale=0.0,
                                                           per_class=1))
        parent = ds.tree[ds.class_nodes]
        d = ball.pairwise_distances(ds.points, ds.kappa)
        same = parent[:, None] == parent[None, :]
        off = ~np.eye(4, dtype=bool)
        assert d[same & off].max() < d[~same].min()

    def test_low_hyperbolicity(self):
        ds = data.generate_tree_dataset(data.DatasetConfig(seed=2))
        r = hy.delta_rel_sampled(ds.points, "poincare", ds.kappa, sample_size=150, trials=10, seed=0)
        assert r.delta_rel < 0.3


class TestGaussianControl:
    def test_matches_tangent_spread(self):
        ds = data.generate_tree_dataset(data.DatasetConfig(dim=16, per_class=60))
        cloud = data.gaussian_cloud_like(ds, 0)
        assert cloud.shape == ds.points.shape
        s_tree = ball.log_map0(ds.points, ds.kappa).std(axis=0)
        s_cloud = ball.log_map0(cloud, ds.kappa).std(axis=0)
        np.testing.assert_allclose(s_cloud, s_tree, rtol=0.1)


class TestSplit:
    def test_disjoint_and_covering(self):
        ids = np.arange(64)
        train, held = data.split_classes(ids, 0.4, seed=0)
        assert len(held) == 26 and len(train) == 38
        assert not set(train) & set(held)
        np.testing.assert_array_equal(np.sort(np.concatenate([train, held])), ids)

    def test_deterministic(self):
        a = data.split_classes(np.arange(20), 0.5, seed=1)
        b = data.split_classes(np.arange(20), 0.5, seed=1)
        np.testing.assert_array_equal(a[1], b[1])

    @pytest.mark.parametrize("frac", [0.0, 1.0])
    def test_rejects(self, frac):
        with pytest.raises(InvalidInputError):
            data.split_classes(np.arange(4), frac, seed=0)
