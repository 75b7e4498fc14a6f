import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedra_sim.aggregators import ClientReport
from fedra_sim.fedra import (
    NEG_INF,
    estimate_malicious_count,
    fedra_aggregate,
    group_stats,
    hypergeom_log_weight,
    initial_m_tilde,
    log_likelihood,
    q_value,
    robust_scores,
)


def reports(values, quantities=None):
    quantities = quantities or [1] * len(values)
    return [ClientReport(i, np.atleast_1d(v), q) for i, (v, q) in enumerate(zip(values, quantities))]


def enumerate_scores(vals, qs, m_tilde, gamma):
    """Hand-style enumeration: every Q pair, then the k smallest per row."""
    n = len(vals)
    k = n - m_tilde - 2
    out = []
    for i in range(n):
        qv = sorted((math.sqrt(qs[i] * qs[j] / (qs[i] + qs[j])) * sum(abs(a - b) for a, b in zip(vals[i], vals[j])), j)
                    for j in range(n) if j != i)
        out.append(qs[i] ** gamma * math.fsum(v for v, _ in qv[:k]))
    return out


class TestQValue:
    def test_examples(self):
        assert q_value([0, 0], [1, 2], 2, 2) == 3.0
        assert q_value([0], [2], 1, 1) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert q_value([4, 5], [4, 5], 3, 1000) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.integers(1, 10_000), st.integers(1, 10_000))
    def test_symmetric(self, g, qi, qj):
        assert q_value([g[0]], [g[1]], qi, qj) == pytest.approx(q_value([g[1]], [g[0]], qj, qi), rel=1e-15)

    def test_strictly_increasing_in_partner_quantity(self):
        vals = [q_value([0.0], [1.5], 7, qj) for qj in range(1, 200)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestRobustScores:
    def test_example(self):
        table = robust_scores(reports([0, 1, 2, 10]), 0, 0.1)
        expected = enumerate_scores([[0], [1], [2], [10]], [1, 1, 1, 1], 0, 0.1)
        np.testing.assert_allclose(expected, [3 / math.sqrt(2), 2 / math.sqrt(2), 3 / math.sqrt(2), 17 / math.sqrt(2)])
        np.testing.assert_allclose(table.scores, expected, rtol=1e-14)
        np.testing.assert_allclose(table.scores, [2.1213, 1.4142, 2.1213, 12.0208], atol=1e-4)
        assert list(table.sorted_order) == [1, 0, 2, 3]

    def test_identical_updates(self):
        table = robust_scores([ClientReport(i, [1.0, 2.0], q) for i, q in zip([5, 2, 8, 1], [1, 9, 3, 4])], 0)
        assert np.all(table.scores == 0)
        assert list(table.client_ids[table.sorted_order]) == [1, 2, 5, 8]

    def test_quantity_doubling(self):
        rng = np.random.default_rng(0)
        for gamma in (0.1, 0.5):
            vals = rng.normal(size=(9, 3))
            qs = rng.integers(1, 40, size=9)
            a = robust_scores([ClientReport(i, v, int(q)) for i, (v, q) in enumerate(zip(vals, qs))], 2, gamma)
            b = robust_scores([ClientReport(i, v, int(2 * q)) for i, (v, q) in enumerate(zip(vals, qs))], 2, gamma)
            np.testing.assert_allclose(b.scores, a.scores * 2 ** (gamma + 0.5), rtol=1e-12)
            assert list(a.sorted_order) == list(b.sorted_order)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(3, 10))
            m = int(rng.integers(0, n - 2))
            vals = rng.normal(size=(n, 3)).tolist()
            qs = rng.integers(1, 100, size=n).tolist()
            table = robust_scores([ClientReport(i, v, q) for i, (v, q) in enumerate(zip(vals, qs))], m, 0.1)
            np.testing.assert_allclose(table.scores, enumerate_scores(vals, qs, m, 0.1), rtol=1e-12)

    def test_insufficient_clients(self):
        with pytest.raises(ValueError, match="insufficient"):
            robust_scores(reports([0, 1, 2]), 1)


class TestHypergeom:
    def test_examples(self):
        assert hypergeom_log_weight(10, 2, 3, 1) == pytest.approx(math.log(math.comb(2, 1) * math.comb(8, 2)), abs=1e-12)
        assert hypergeom_log_weight(10, 2, 3, 1) == pytest.approx(4.02535, abs=1e-5)
        assert hypergeom_log_weight(10, 2, 3, 2) == pytest.approx(math.log(8), abs=1e-12)
        assert hypergeom_log_weight(10, 2, 3, 3) == NEG_INF

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            hypergeom_log_weight(5, 6, 2, 0)
        with pytest.raises(ValueError):
            hypergeom_log_weight(5, 2, 6, 0)


class TestGroupStats:
    def test_example(self):
        st_ = group_stats([1, 2, 3, 10, 11], 2)
        assert (st_.mu_b, st_.sigma_b, st_.mu_m) == (2.0, 1.0, 10.5)
        assert st_.sigma_m == pytest.approx(math.sqrt(0.5), rel=1e-15)
        assert (st_.benign_count, st_.malicious_count) == (3, 2)

    def test_empty_malicious_group(self):
        st_ = group_stats([1, 2, 3, 10, 11], 0)
        assert st_.mu_m is None and st_.sigma_m is None
        assert st_.mu_b == 5.4

    def test_singleton_malicious_group_borrows_benign_spread(self):
        st_ = group_stats([1, 2, 3, 10, 11], 1)
        assert st_.mu_m == 11.0
        assert st_.sigma_m == st_.sigma_b

    def test_floor(self):
        st_ = group_stats([4, 4, 4, 4], 2)
        assert st_.sigma_b == st_.sigma_m == 1e-12

    def test_range(self):
        with pytest.raises(ValueError):
            group_stats([1, 2, 3], 2)


def ll_all(scores, N, M):
    s = np.sort(scores)
    return [log_likelihood(s, m, N, M, len(s)) for m in range(0, min(len(s) - 2, M) + 1)]


class TestLogLikelihood:
    def test_clean_split_beats_mixed_splits(self):
        lls = ll_all([0, 0, 0, 9, 9], 100, 10)
        assert int(np.argmax(lls)) == 2
        assert all(lls[2] > lls[m] for m in (0, 1, 3))

    def test_shift_invariant(self):
        rng = np.random.default_rng(2)
        s = np.sort(rng.normal(size=12))
        for m in range(0, 11):
            assert log_likelihood(s + 37.5, m, 200, 20) == pytest.approx(log_likelihood(s, m, 200, 20), abs=1e-9)

    def test_scale_shifts_uniformly(self):
        rng = np.random.default_rng(3)
        s = np.sort(rng.normal(size=12))
        for a in (0.01, 3.0, 250.0):
            for m in range(0, 11):
                diff = log_likelihood(a * s, m, 200, 20) - log_likelihood(s, m, 200, 20)
                assert diff == pytest.approx(-12 * math.log(a), abs=1e-9)

    def test_off_support(self):
        assert log_likelihood([0, 1, 2, 3, 4], 3, 100, 2) == NEG_INF


class TestMCNE:
    def test_example_exhaustive(self):
        scores = [1.0, 1.1, 0.9, 5.0, 5.2]
        lls = ll_all(scores, 100, 10)
        assert int(np.argmax(lls)) == 2
        assert estimate_malicious_count(scores, 100, 10, 5) == 2

    def test_identical_scores(self):
        prior = [math.comb(10, m) * math.comb(90, 5 - m) for m in range(4)]
        assert prior == sorted(prior, reverse=True)
        assert estimate_malicious_count([2.5] * 5, 100, 10, 5) == 0

    def test_affine_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(5, 40))
            m = int(rng.integers(0, min(8, n - 2)))
            s = np.concatenate([rng.normal(0, 1, n - m), rng.normal(rng.uniform(0, 8), 1, m)])
            a, b = float(np.exp(rng.uniform(-3, 3))), float(rng.uniform(-20, 20))
            assert estimate_malicious_count(s, 300, 30, n) == estimate_malicious_count(a * s + b, 300, 30, n)

    def test_tie_prefers_smaller(self):
        # M_tilde=0 leaves only the m=0 candidate
        assert estimate_malicious_count([1, 2, 3, 4], 10, 0, 4) == 0

    def test_needs_three(self):
        with pytest.raises(ValueError):
            estimate_malicious_count([1, 2], 10, 2, 2)


class TestFedRA:
    def test_initial_m(self):
        assert initial_m_tilde(5, 50, 10) == 1
        assert initial_m_tilde(50, 500, 50) == 5
        assert initial_m_tilde(20, 300, 30) == 2

    def test_identical_clients(self):
        for mode in ("fixed", "dynamic"):
            out, _ = fedra_aggregate([ClientReport(i, [1.5, -2.0], 7) for i in range(6)], 0.1, 60, 6, mode)
            np.testing.assert_allclose(out, [1.5, -2.0], atol=1e-15)

    def _instance(self, mal_value, mal_q):
        ben = [[0.0], [0.01], [-0.01], [0.005]]
        return reports(ben + [[mal_value]], [1, 1, 1, 1, mal_q])

    def test_heavy_malicious_excluded(self):
        out, info = fedra_aggregate(self._instance(100.0, 10 ** 6), 0.1, 50, 10, "fixed")
        assert info.c == 3 and info.m_tilde == 1
        assert 4 not in info.selected_ids
        assert -0.01 <= out[0] <= 0.01

    def test_extreme_replacement_is_bit_identical(self):
        a, ia = fedra_aggregate(self._instance(100.0, 10 ** 6), 0.1, 50, 10, "fixed")
        b, ib = fedra_aggregate(self._instance(1e9, 10 ** 9), 0.1, 50, 10, "fixed")
        assert ia.selected_ids == ib.selected_ids
        assert a.tobytes() == b.tobytes()

    def test_scale_and_permutation(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n = int(rng.integers(6, 15))
            vals = rng.normal(size=(n, 4))
            qs = rng.integers(1, 50, size=n)
            ids = rng.permutation(1000)[:n]
            base = [ClientReport(int(i), v, int(q)) for i, v, q in zip(ids, vals, qs)]
            _, info = fedra_aggregate(base, 0.1, 10 * n, n, "dynamic")
            scaled = [ClientReport(r.client_id, 3.7 * r.update, 5 * r.quantity) for r in base]
            _, info_s = fedra_aggregate(scaled, 0.1, 10 * n, n, "dynamic")
            assert set(info.selected_ids) == set(info_s.selected_ids)
            perm = rng.permutation(n)
            _, info_p = fedra_aggregate([base[k] for k in perm], 0.1, 10 * n, n, "dynamic")
            assert set(info.selected_ids) == set(info_p.selected_ids)
            for cid, s in info.scores.items():
                assert info_p.scores[cid] == pytest.approx(s, rel=1e-12)

    @pytest.mark.parametrize("mode", ["fixed", "dynamic"])
    def test_excluded_client_invariance(self, mode):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(100):
            n = 10
            vals = rng.normal(size=(n, 3))
            vals[-2:] += 8.0
            qs = rng.integers(1, 30, size=n)
            base = [ClientReport(i, v, int(q)) for i, (v, q) in enumerate(zip(vals, qs))]
            out, info = fedra_aggregate(base, 0.1, 100, 20, mode)
            excluded = [r.client_id for r in base if r.client_id not in info.selected_ids]
            for cid in excluded:
                for extreme, q in ((1e6, 10 ** 9), (-1e6, 1)):
                    alt = [ClientReport(r.client_id, np.full(3, extreme), q) if r.client_id == cid else r for r in base]
                    out2, info2 = fedra_aggregate(alt, 0.1, 100, 20, mode)
                    # only meaningful while the selected set is unchanged
                    if set(info2.selected_ids) == set(info.selected_ids):
                        assert out2.tobytes() == out.tobytes()
                        checked += 1
        assert checked >= (100 if mode == "fixed" else 10)

    def test_cut_sizes(self):
        _, info = fedra_aggregate(reports([0, 1, 2, 3, 4]), 0.1, 5, 5, "dynamic", m_tilde_override=2)
        assert info.c == 3 and info.m_tilde == 2
        _, info = fedra_aggregate(reports([0, 1, 2, 3]), 0.1, 4, 4, "fixed", m_tilde_override=1)
        assert info.c == 2 and not info.warnings

    def test_monotone_exclusion_of_far_outlier(self):
        ben = [[0.0], [0.2], [-0.1], [0.15], [0.05], [-0.2]]
        for q in (1, 10, 10 ** 3, 10 ** 6):
            _, info = fedra_aggregate(reports(ben + [[50.0]], [3] * 6 + [q]), 0.1, 70, 7, "fixed")
            assert 6 not in info.selected_ids
