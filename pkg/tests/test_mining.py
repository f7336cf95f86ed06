import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypergeo import ball, mining
from hypergeo.errors import EmptyInputError, InsufficientPointsError, InvalidInputError, ShapeError

import oracles


def sample_problem(seed: int, classes: int = 4, per: int = 5, queries: int = 40, n: int = 3):
    rng = np.random.default_rng(seed)
    support = oracles.random_ball(rng, classes * per, n, 1.0, hi=0.8)
    labels = np.repeat(np.arange(classes), per)
    q = oracles.random_ball(rng, queries, n, 1.0, hi=0.8)
    return support, labels, q


class TestPrototypes:
    def test_one_shot_prototype_is_the_support_point(self):
        support, labels, _ = sample_problem(0, per=1)
        protos = mining.build_prototypes(support, labels, 1.0)
        np.testing.assert_allclose(protos.prototypes, support, atol=1e-15)

    def test_antipodal_pair_gives_origin(self):
        x = np.array([0.3, -0.2, 0.1])
        protos = mining.build_prototypes(np.stack([x, -x]), np.array([7, 7]), 1.0)
        np.testing.assert_allclose(protos.prototypes[0], 0.0, atol=1e-15)
        np.testing.assert_array_equal(protos.class_ids, [7])

    def test_support_order_does_not_matter(self):
        support, labels, _ = sample_problem(1)
        perm = np.random.default_rng(1).permutation(len(labels))
        a = mining.build_prototypes(support, labels, 1.0)
        b = mining.build_prototypes(support[perm], labels[perm], 1.0)
        np.testing.assert_allclose(a.prototypes, b.prototypes, atol=1e-14)

    def test_classes_sorted_and_indexed(self):
        support, _, _ = sample_problem(2, classes=3, per=2)
        labels = np.array([9, 9, 2, 2, 5, 5])
        protos = mining.build_prototypes(support, labels, 1.0)
        np.testing.assert_array_equal(protos.class_ids, [2, 5, 9])
        np.testing.assert_array_equal(protos.index_of([9, 2]), [2, 0])
        with pytest.raises(InvalidInputError):
            protos.index_of([4])

    def test_errors(self):
        with pytest.raises(ShapeError):
            mining.build_prototypes(np.zeros((3, 2)), np.zeros(2), 1.0)
        with pytest.raises(EmptyInputError):
            mining.build_prototypes(np.zeros((0, 2)), np.zeros(0), 1.0)


class TestMineHard:
    def test_zero_threshold_keeps_everything_off_prototype(self):
        support, labels, q = sample_problem(3)
        hard = mining.mine_hard(q, mining.build_prototypes(support, labels, 1.0), 0.0)
        assert len(hard.members) == len(q)
        assert hard.fraction == 1.0

    def test_unit_threshold_keeps_nothing(self):
        support, labels, q = sample_problem(4)
        hard = mining.mine_hard(q, mining.build_prototypes(support, labels, 1.0), 1.0)
        assert len(hard.members) == 0

    def test_ratio_definition(self):
        support, labels, q = sample_problem(5)
        protos = mining.build_prototypes(support, labels, 1.0)
        hard = mining.mine_hard(q, protos, 0.5)
        for i in range(len(q)):
            d = sorted(ball.geodesic_distance(q[i], p, 1.0) for p in protos.prototypes)
            assert hard.d1[i] == pytest.approx(d[0], rel=1e-12)
            assert hard.d2[i] == pytest.approx(d[1], rel=1e-12)
            assert hard.all_ratios[i] == pytest.approx(d[0] / d[1], rel=1e-12)
        assert np.all((hard.all_ratios >= 0.0) & (hard.all_ratios <= 1.0))
        np.testing.assert_array_equal(hard.mask, hard.all_ratios > 0.5)
        np.testing.assert_array_equal(hard.ratios, hard.all_ratios[hard.members])

    def test_query_on_prototype_is_easy(self):
        support, labels, _ = sample_problem(6)
        protos = mining.build_prototypes(support, labels, 1.0)
        hard = mining.mine_hard(protos.prototypes, protos, 1e-9)
        np.testing.assert_allclose(hard.all_ratios, 0.0, atol=1e-12)
        np.testing.assert_array_equal(hard.nearest, np.arange(len(protos)))
        assert len(hard.members) == 0

    def test_ties_go_to_lower_column(self):
        nearest, d1, d2 = mining.nearest_two(np.array([[2.0, 1.0, 1.0], [3.0, 3.0, 3.0]]))
        np.testing.assert_array_equal(nearest, [1, 0])
        np.testing.assert_array_equal(d1, d2)

    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone_in_threshold(self, seed, t1, t2):
        lo, hi = sorted((t1, t2))
        support, labels, q = sample_problem(seed % 10_000, queries=15)
        protos = mining.build_prototypes(support, labels, 1.0)
        a = set(mining.mine_hard(q, protos, lo).members)
        b = set(mining.mine_hard(q, protos, hi).members)
        assert b <= a

    def test_errors(self):
        support, labels, q = sample_problem(7)
        protos = mining.build_prototypes(support, labels, 1.0)
        with pytest.raises(InvalidInputError):
            mining.mine_hard(q, protos, 1.5)
        one = mining.build_prototypes(support[:2], np.zeros(2), 1.0)
        with pytest.raises(InsufficientPointsError):
            mining.mine_hard(q, one, 0.5)
