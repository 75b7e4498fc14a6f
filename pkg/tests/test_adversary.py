import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedra_sim.adversary import (
    AttackSpec,
    craft,
    enhanced_quantity,
    flip_label,
    lie_update,
    lie_z,
    optimize_update,
)


def test_flip_label():
    assert flip_label(3, 10) == 6
    assert flip_label(0, 2) == 1
    for C in range(2, 12):
        assert all(flip_label(flip_label(y, C), C) == y for y in range(C))
    with pytest.raises(ValueError):
        flip_label(10, 10)
    with pytest.raises(ValueError):
        flip_label(0, 1)


class TestLIE:
    def test_examples(self):
        np.testing.assert_array_equal(lie_update([[1], [2], [3]], 1.0), [3.0])
        np.testing.assert_array_equal(lie_update([[0], [0]], 5.0), [0.0])
        ups = [[1.0, -4.0], [2.5, 0.0], [0.5, 2.0]]
        np.testing.assert_allclose(lie_update(ups, 0.0), np.mean(ups, axis=0), rtol=1e-15)

    def test_lone_colluder_keeps_honest_update(self):
        np.testing.assert_array_equal(lie_update([[4.0, 1.0]], 3.0), [4.0, 1.0])

    def test_default_z(self):
        # n=50, m=5: s = 26 - 5 = 21, p = 1 - 21/45
        assert lie_z(50, 5) == pytest.approx(NormalDist().inv_cdf(1 - 21 / 45), rel=1e-12)
        assert lie_z(20, 0) == 0.0
        assert 0.0 <= lie_z(20, 9) <= 3.0
        assert all(0.0 <= lie_z(n, m) <= 3.0 for n in range(3, 60) for m in range(n + 1))


class TestOptimize:
    def test_examples(self):
        # mu = [2, -2], sigma = [1, 1]
        np.testing.assert_allclose(optimize_update([[1, -1], [3, -3]], 4.0), [2 - 4 * math.sqrt(2), -2 + 4 * math.sqrt(2)])
        ups = np.array([[2.0, -2.0]]) + np.array([[-1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)
        np.testing.assert_allclose(optimize_update(ups, 4.0), [-2.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(optimize_update(ups, 1e-9), [2.0, -2.0], atol=1e-8)
        np.testing.assert_array_equal(optimize_update([[1.0], [-1.0]], 7.0), [0.0])

    def test_single_colluder(self):
        np.testing.assert_array_equal(optimize_update([[3.0, -1.0]], 4.0), [3.0, -1.0])


class TestQuantity:
    def test_examples(self):
        assert enhanced_quantity([10, 20, 30], 2) == 40
        assert enhanced_quantity([10, 11], 0) == round(10.5)
        assert enhanced_quantity([5], 10) == 5
        assert enhanced_quantity([1, 1, 1], 0) == 1

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=20), st.floats(0, 20), st.floats(0, 20))
    def test_monotone_in_alpha(self, qs, a, b):
        lo, hi = sorted((a, b))
        assert 1 <= enhanced_quantity(qs, lo) <= enhanced_quantity(qs, hi)


class TestCraft:
    ups = [np.array([1.0, 2.0]), np.array([3.0, 0.0]), np.array([2.0, 1.0])]
    qs = [5, 10, 30]

    def test_noop_is_identity(self):
        out, q = craft(AttackSpec(), self.ups, self.qs, 20)
        for a, b in zip(out, self.ups):
            assert a.tobytes() == b.tobytes()
        assert q == self.qs

    @pytest.mark.parametrize("kind", ["lie", "optimize"])
    def test_colluders_share_submission(self, kind):
        out, q = craft(AttackSpec(kind, alpha_q=2.0, z=1.0), self.ups, self.qs, 20)
        assert all(o.tobytes() == out[0].tobytes() for o in out)
        assert len(set(q)) == 1 and q[0] == enhanced_quantity(self.qs, 2.0)

    def test_labelflip_keeps_individual_updates(self):
        out, q = craft(AttackSpec("labelflip", alpha_q=1.0), self.ups, self.qs, 20)
        assert [o.tolist() for o in out] == [u.tolist() for u in self.ups]
        assert q == [enhanced_quantity(self.qs, 1.0)] * 3

    def test_quantity_only(self):
        out, q = craft(AttackSpec("none", alpha_q=5.0), self.ups, self.qs, 20)
        assert [o.tolist() for o in out] == [u.tolist() for u in self.ups]
        assert q[0] > max(self.qs)

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackSpec("backdoor")
        with pytest.raises(ValueError):
            AttackSpec("lie", alpha_q=-1)
        with pytest.raises(ValueError):
            AttackSpec("optimize", lam=0)
