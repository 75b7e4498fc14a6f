"""Independent oracles and statistical checks.

Nothing here reuses the main code path's arithmetic: brute-force aggregators
are written with plain Python loops, the hypergeometric prior is recomputed
with exact integers, and the lemma checks draw client updates as literal
sample means.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import aggregators as agg
from .fedra import NEG_INF, estimate_malicious_count, hypergeom_log_weight


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool
    detail: str = ""

    def as_dict(self):
        return asdict(self)


# --- brute-force aggregators ---------------------------------------------------

def _sqdist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def brute_force_krum_scores(reports, m_tilde):
    vecs = [list(map(float, r.update)) for r in reports]
    ids = [r.client_id for r in reports]
    n = len(vecs)
    scores = {}
    for i in range(n):
        dists = sorted(_sqdist(vecs[i], vecs[j]) for j in range(n) if j != i)
        scores[ids[i]] = sum(dists[: max(n - m_tilde - 2, 0)])
    return scores


def brute_force_mkrum(reports, m_tilde, count):
    scores = brute_force_krum_scores(reports, m_tilde)
    return sorted(scores, key=lambda cid: (scores[cid], cid))[:count]


def brute_force_krum(reports, m_tilde):
    return brute_force_mkrum(reports, m_tilde, 1)[0]


def brute_force_median(vectors):
    out = []
    for col in zip(*vectors):
        s = sorted(float(v) for v in col)
        k = len(s)
        out.append(s[k // 2] if k % 2 else (s[k // 2 - 1] + s[k // 2]) / 2)
    return out


def brute_force_trimmed_mean(vectors, k):
    out = []
    for col in zip(*vectors):
        s = sorted(float(v) for v in col)[k: len(col) - k]
        out.append(math.fsum(s) / len(s))
    return out


def brute_force_bulyan(reports, m_tilde):
    pool = list(reports)
    chosen = []
    for _ in range(len(reports) - 2 * m_tilde):
        best = brute_force_krum(pool, m_tilde)
        chosen.append(best)
        pool = [r for r in pool if r.client_id != best]
    by_id = {r.client_id: r for r in reports}
    vecs = [list(map(float, by_id[c].update)) for c in chosen]
    return chosen, brute_force_trimmed_mean(vecs, m_tilde)


def random_reports(rng, n, d, duplicates=False):
    """Small random round; optionally with repeated updates to exercise ties."""
    if duplicates:
        base = rng.integers(-3, 4, size=(max(1, n // 2), d)).astype(float)
        vecs = base[rng.integers(0, base.shape[0], size=n)]
    else:
        vecs = rng.normal(size=(n, d)) * rng.choice([1.0, 10.0], size=(n, 1))
    ids = rng.permutation(100)[:n]
    qs = rng.integers(1, 50, size=n)
    return [agg.ClientReport(int(i), v, int(q)) for i, v, q in zip(ids, vecs, qs)]


def aggregator_oracle_check(instances=200, seed=0) -> Check:
    rng = np.random.default_rng(seed)
    mismatches = []
    worst = 0.0
    for t in range(instances):
        n = int(rng.integers(3, 9))
        d = int(rng.integers(1, 5))
        reports = random_reports(rng, n, d, duplicates=bool(t % 4 == 0))
        vecs = [list(map(float, r.update)) for r in reports]
        m = int(rng.integers(0, n - 2))
        if agg.krum_select(reports, m, 1) != [brute_force_krum(reports, m)]:
            mismatches.append(f"krum#{t}")
        count = int(rng.integers(1, n + 1))
        if agg.krum_select(reports, m, count) != brute_force_mkrum(reports, m, count):
            mismatches.append(f"mkrum#{t}")
        worst = max(worst, float(np.max(np.abs(agg.coordinate_median(vecs) - brute_force_median(vecs)))))
        k = int(rng.integers(0, (n - 1) // 2 + 1))
        worst = max(worst, float(np.max(np.abs(agg.coordinate_trimmed_mean(vecs, k)
                                               - brute_force_trimmed_mean(vecs, k)))))
        mb = int(rng.integers(0, (n - 3) // 4 + 1))
        ids, ref = brute_force_bulyan(reports, mb)
        if agg.bulyan_select(reports, mb) != ids:
            mismatches.append(f"bulyan#{t}")
        worst = max(worst, float(np.max(np.abs(agg.bulyan(reports, mb) - ref))))
    ok = not mismatches and worst <= 1e-12
    return Check("aggregator_oracles", worst, 1e-12, ok, ", ".join(mismatches[:5]))


# --- exact hypergeometric --------------------------------------------------------

def exact_hypergeom_log(N, M_tilde, n, m_tilde):
    if m_tilde > M_tilde or m_tilde > n or n - m_tilde > N - M_tilde:
        return NEG_INF
    return math.log(math.comb(M_tilde, m_tilde) * math.comb(N - M_tilde, n - m_tilde))


def hypergeom_check(max_N=60) -> Check:
    worst = 0.0
    where = ""
    for N in range(max_N + 1):
        for M in range(N + 1):
            for n in range(N + 1):
                for m in range(min(n, M) + 1):
                    a = hypergeom_log_weight(N, M, n, m)
                    b = exact_hypergeom_log(N, M, n, m)
                    if a == b:
                        continue
                    if a == NEG_INF or b == NEG_INF:
                        return Check("hypergeom_exact", math.inf, 1e-9, False, f"support mismatch at {(N, M, n, m)}")
                    err = abs(a - b)
                    if err > worst:
                        worst, where = err, str((N, M, n, m))
    return Check("hypergeom_exact", worst, 1e-9, worst <= 1e-9, f"worst at {where}" if where else "")


# --- lemma oracles --------------------------------------------------------------

def _sample_means(rng, q, sigma, trials):
    # literal mean of q per-sample draws, one row per trial
    acc = np.zeros((trials, sigma.size))
    for _ in range(q):
        acc += rng.normal(0.0, sigma, size=(trials, sigma.size))
    return acc / q


def lemma1_bound(q_i, q_j, sigma) -> float:
    return math.sqrt(2 * math.log(2)) * math.sqrt((q_i + q_j) / (q_i * q_j)) * float(np.sum(sigma))


def lemma1_check(q_i, q_j, sigma, trials=100_000, rng=None):
    """Monte-Carlo E||g_i - g_j||_1 for Gaussian sample-mean updates, the bound, and their ratio."""
    if trials < 10_000:
        raise ValueError("lemma1_check needs at least 1e4 trials")
    rng = np.random.default_rng(0) if rng is None else rng
    sigma = np.asarray(sigma, dtype=np.float64)
    gi = _sample_means(rng, q_i, sigma, trials)
    gj = _sample_means(rng, q_j, sigma, trials)
    emp = float(np.abs(gi - gj).sum(axis=1).mean())
    bound = lemma1_bound(q_i, q_j, sigma)
    return emp, bound, emp / bound


def lemma3_bound(n, q, sigma) -> float:
    return math.sqrt(2 * math.log(2 * n)) * float(np.sum(sigma)) / math.sqrt(q)


def lemma3_max_check(n, q, sigma, trials=10_000, rng=None):
    """Monte-Carlo E[max_i ||g_i - mu||_1] over n iid clients of quantity q, and its bound."""
    if trials < 10_000 or n < 2:
        raise ValueError("lemma3_max_check needs trials >= 1e4 and n >= 2")
    rng = np.random.default_rng(0) if rng is None else rng
    sigma = np.asarray(sigma, dtype=np.float64)
    best = np.zeros(trials)
    for _ in range(n):
        best = np.maximum(best, np.abs(_sample_means(rng, q, sigma, trials)).sum(axis=1))
    return float(best.mean()), lemma3_bound(n, q, sigma)


def mcne_recovery(N, M_tilde, n, separation, trials, rng=None, return_estimates=False):
    """Fraction of synthetic rounds in which MCNE recovers the true malicious count exactly."""
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(0) if rng is None else rng
    hits = 0
    pairs = []
    for _ in range(trials):
        m = int(rng.hypergeometric(M_tilde, N - M_tilde, n))
        s = np.concatenate([rng.normal(0.0, 1.0, n - m), rng.normal(separation, 1.0, m)])
        est = estimate_malicious_count(np.sort(s), N, M_tilde, n)
        hits += est == m
        pairs.append((m, est))
    rate = hits / trials
    return (rate, pairs) if return_estimates else rate


def mcne_affine_check(sets=100, seed=0) -> Check:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(sets):
        n = int(rng.integers(5, 60))
        M = int(rng.integers(1, 40))
        N = M + n + int(rng.integers(0, 400))
        m = int(rng.integers(0, min(M, n - 2) + 1))
        s = np.concatenate([rng.normal(0, 1, n - m), rng.normal(rng.uniform(0, 8), 1, m)])
        a = float(np.exp(rng.uniform(-4, 4)))
        b = float(rng.uniform(-50, 50))
        if estimate_malicious_count(np.sort(s), N, M, n) != estimate_malicious_count(np.sort(a * s + b), N, M, n):
            bad += 1
    return Check("mcne_affine_invariance", bad, 0, bad == 0, f"{bad} of {sets} sets changed estimate")


LEMMA1_PAIRS = ((1, 1), (1, 10), (10, 10), (3, 100))
LEMMA1_RATIO = math.sqrt(2 / math.pi) / math.sqrt(2 * math.log(2))


def run_all_checks(quick: bool = False) -> list:
    """Every oracle check with its measured value, bound and pass flag."""
    checks = [aggregator_oracle_check(), hypergeom_check()]
    sigma = np.ones(8)
    trials = 20_000 if quick else 100_000
    for k, (qi, qj) in enumerate(LEMMA1_PAIRS):
        emp, bound, ratio = lemma1_check(qi, qj, sigma, trials, np.random.default_rng(100 + k))
        checks.append(Check(f"lemma1_bound(q={qi},{qj})", emp, bound, emp <= bound))
        checks.append(Check(f"lemma1_ratio(q={qi},{qj})", ratio, 0.02,
                            abs(ratio - LEMMA1_RATIO) <= 0.02, f"expected {LEMMA1_RATIO:.5f}"))
    for k, n in enumerate((2, 10, 50)):
        emp, bound = lemma3_max_check(n, 4, sigma, 10_000, np.random.default_rng(200 + k))
        checks.append(Check(f"lemma3_max_bound(n={n})", emp, bound, emp <= bound))
    rec_trials = 200 if quick else 1000
    for sep, floor in ((6.0, 0.65), (100.0, 0.99)):
        rate = mcne_recovery(500, 50, 50, sep, rec_trials, np.random.default_rng(300))
        checks.append(Check(f"mcne_recovery(sep={sep:g})", rate, floor, rate >= floor))
    checks.append(mcne_affine_check())
    return checks
