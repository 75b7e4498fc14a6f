import math

import numpy as np
import pytest
from scipy import integrate, stats

from fedra_sim import verify
from fedra_sim.aggregators import ClientReport, krum_select
from fedra_sim.fedra import NEG_INF, hypergeom_log_weight
from fedra_sim.verify import (
    LEMMA1_RATIO,
    brute_force_krum,
    exact_hypergeom_log,
    lemma1_bound,
    lemma1_check,
    lemma3_bound,
    lemma3_max_check,
    mcne_recovery,
)


def test_brute_force_krum_agrees():
    rng = np.random.default_rng(0)
    for _ in range(200):
        reps = verify.random_reports(rng, int(rng.integers(4, 9)), 3)
        m = int(rng.integers(0, len(reps) - 2))
        assert brute_force_krum(reps, m) == krum_select(reps, m, 1)[0]


def test_brute_force_krum_duplicates():
    reps = [ClientReport(i, [1.0, 1.0], 1) for i in (4, 2, 9)] + [ClientReport(0, [5.0, 5.0], 1)]
    assert brute_force_krum(reps, 0) == 2 == krum_select(reps, 0)[0]


class TestHypergeom:
    def test_examples(self):
        assert exact_hypergeom_log(10, 2, 3, 1) == math.log(56)
        assert exact_hypergeom_log(60, 6, 50, 6) == pytest.approx(hypergeom_log_weight(60, 6, 50, 6), abs=1e-9)
        assert math.isfinite(exact_hypergeom_log(20, 4, 10, 4))
        assert math.isfinite(hypergeom_log_weight(20, 4, 10, 4))
        assert exact_hypergeom_log(10, 2, 3, 3) == NEG_INF

    def test_scipy_agrees(self):
        for N, M, n, m in [(500, 50, 50, 5), (300, 30, 20, 0), (1000, 7, 100, 7)]:
            log_pmf = stats.hypergeom.logpmf(m, N, M, n)
            total = math.lgamma(N + 1) - math.lgamma(n + 1) - math.lgamma(N - n + 1)
            assert hypergeom_log_weight(N, M, n, m) == pytest.approx(log_pmf + total, abs=1e-8)

    @pytest.mark.slow
    def test_full_grid(self):
        assert verify.hypergeom_check(60).passed


class TestPairGapBound:
    def test_equal_unit_quantities(self):
        emp, bound, ratio = lemma1_check(1, 1, [1.0], 100_000, np.random.default_rng(0))
        assert LEMMA1_RATIO == pytest.approx(0.6777, abs=1e-4)
        assert abs(ratio - 0.6777) <= 0.02
        assert emp <= bound

    def test_bound_scaling(self):
        assert lemma1_bound(4, 4, [1.0]) == pytest.approx(lemma1_bound(1, 1, [1.0]) / 2)

    @pytest.mark.parametrize("qi,qj", [(1, 10), (10, 10), (3, 100)])
    def test_ratio_across_quantities(self, qi, qj):
        emp, bound, ratio = lemma1_check(qi, qj, np.ones(4), 20_000, np.random.default_rng(qi * 1000 + qj))
        assert emp <= bound
        assert abs(ratio - LEMMA1_RATIO) <= 0.02

    def test_needs_trials(self):
        with pytest.raises(ValueError):
            lemma1_check(1, 1, [1.0], 100)


class TestMaxDeviationBound:
    def test_two_clients(self):
        # E[max(|X|, |Y|)] for iid standard normals, by quadrature
        exact, _ = integrate.quad(lambda x: 2 * x * 2 * stats.norm.pdf(x) * (2 * stats.norm.cdf(x) - 1), 0, np.inf)
        assert exact == pytest.approx(2 / math.sqrt(math.pi), rel=1e-9)
        emp, bound = lemma3_max_check(2, 1, [1.0], 100_000, np.random.default_rng(1))
        assert abs(emp - exact) < 5 * 0.6 / math.sqrt(100_000)
        assert bound == pytest.approx(math.sqrt(2 * math.log(4)), rel=1e-12)
        assert emp < bound

    def test_bound_shape(self):
        vals = [lemma3_bound(n, 1, [1.0]) for n in range(2, 50)]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert lemma3_bound(10, 16, [1.0]) == pytest.approx(lemma3_bound(10, 4, [1.0]) / 2)


class TestRecovery:
    def test_well_separated(self):
        assert mcne_recovery(500, 50, 50, 100.0, 200, np.random.default_rng(0)) >= 0.98

    def test_no_signal_reports(self):
        rate, pairs = mcne_recovery(500, 50, 50, 0.0, 100, np.random.default_rng(1), return_estimates=True)
        assert 0.0 <= rate <= 1.0 and len(pairs) == 100


def test_run_all_checks_quick():
    checks = verify.run_all_checks(quick=True)
    names = [c.name for c in checks]
    assert len(names) == len(set(names))
    failed = [c.name for c in checks if not c.passed]
    assert not failed
