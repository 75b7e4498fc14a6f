"""Quantity-robust scoring, malicious-client-number estimation (MCNE) and the
composed FedRA aggregation rule.

A client's score is ``q_i**gamma`` times the sum of its smallest Q-values,
where ``Q(i, j) = sqrt(q_i q_j / (q_i + q_j)) * ||g_i - g_j||_1``.  Low scores
look benign.  MCNE treats the sorted scores as two Gaussian groups split at an
unknown point and picks the split maximising a likelihood that includes a
hypergeometric prior on the number of malicious clients in the round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .aggregators import ClientReport, SelectionInfo, _check_reports
from .numkit import l1_distance

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ScoreTable:
    client_ids: np.ndarray
    scores: np.ndarray
    sorted_order: np.ndarray

    def __len__(self):
        return len(self.scores)

    def sorted_scores(self) -> np.ndarray:
        return self.scores[self.sorted_order]

    def as_dict(self) -> dict:
        return {int(i): float(s) for i, s in zip(self.client_ids, self.scores)}


@dataclass(frozen=True)
class GroupStats:
    mu_b: float
    sigma_b: float
    mu_m: Optional[float]
    sigma_m: Optional[float]
    benign_count: int
    malicious_count: int


def q_value(g_i, g_j, q_i: int, q_j: int) -> float:
    return math.sqrt(q_i * q_j / (q_i + q_j)) * l1_distance(g_i, g_j)


def q_matrix(updates: np.ndarray, quantities: np.ndarray) -> np.ndarray:
    """All pairwise Q-values.  Row ``i`` is filled independently, in index order."""
    n = updates.shape[0]
    q = quantities.astype(np.float64)
    out = np.zeros((n, n))
    for i in range(n):
        l1 = np.abs(updates - updates[i]).sum(axis=1)
        out[i] = np.sqrt(q[i] * q / (q[i] + q)) * l1
    return out


def robust_scores(reports: Sequence[ClientReport], m_tilde: int, gamma: float = 0.1) -> ScoreTable:
    mat, ids, q = _check_reports(reports)
    n = len(reports)
    if not 0 < gamma <= 0.5:
        raise ValueError(f"gamma must lie in (0, 0.5], got {gamma}")
    if m_tilde < 0 or n < m_tilde + 3:
        raise ValueError(f"insufficient clients for neighbor set (n={n}, m_tilde={m_tilde})")
    k = n - m_tilde - 2
    Q = q_matrix(mat, q)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        # nearest by (Q, client_id)
        nearest = others[np.lexsort((ids[others], Q[i, others]))[:k]]
        scores[i] = q[i] ** gamma * Q[i, nearest].sum()
    return ScoreTable(ids, scores, np.lexsort((ids, scores)))


def _log_comb(a: int, b: int) -> float:
    return math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)


def hypergeom_log_weight(N: int, M_tilde: int, n: int, m_tilde: int) -> float:
    """``ln[C(M_tilde, m_tilde) * C(N - M_tilde, n - m_tilde)]``, or ``-inf`` off support.

    The ``1 / C(N, n)`` normaliser is left out; it does not move the argmax.
    """
    if min(N, M_tilde, n, m_tilde) < 0 or n > N or M_tilde > N:
        raise ValueError(f"invalid hypergeometric arguments N={N}, M={M_tilde}, n={n}, m={m_tilde}")
    if m_tilde > M_tilde or m_tilde > n or n - m_tilde > N - M_tilde:
        return NEG_INF
    return _log_comb(M_tilde, m_tilde) + _log_comb(N - M_tilde, n - m_tilde)


def sigma_floor(sorted_scores: np.ndarray) -> float:
    s = np.asarray(sorted_scores, dtype=np.float64)
    return max(1e-12, 1e-9 * float(s.max() - s.min()))


def _group(values: np.ndarray, floor: float):
    mu = float(values.mean())
    if values.size < 2:
        return mu, floor
    sd = math.sqrt(float(np.sum((values - mu) ** 2)) / (values.size - 1))
    return mu, max(sd, floor)


def group_stats(sorted_scores: Sequence[float], m_tilde: int) -> GroupStats:
    """Split ascending scores into the ``n - m_tilde`` smallest (benign) and
    ``m_tilde`` largest (malicious); Bessel-corrected, floored sigmas."""
    s = np.asarray(sorted_scores, dtype=np.float64)
    n = s.size
    if not 0 <= m_tilde <= n - 2:
        raise ValueError(f"m_tilde must lie in [0, n-2] = [0, {n - 2}], got {m_tilde}")
    if np.any(np.diff(s) < 0):
        raise ValueError("scores must be sorted ascending")
    floor = sigma_floor(s)
    mu_b, sigma_b = _group(s[: n - m_tilde], floor)
    if m_tilde == 0:
        return GroupStats(mu_b, sigma_b, None, None, n, 0)
    mu_m, sigma_m = _group(s[n - m_tilde:], floor)
    if m_tilde == 1:
        # one score carries no spread; borrow the benign group's so every
        # score pays the same -ln(sigma) and scaling shifts all candidates alike
        sigma_m = sigma_b
    return GroupStats(mu_b, sigma_b, mu_m, sigma_m, n - m_tilde, m_tilde)


def _gaussian_terms(values: np.ndarray, mu: float, sigma: float) -> float:
    return -values.size * math.log(sigma) - float(np.sum((values - mu) ** 2)) / (2 * sigma * sigma)


def log_likelihood(sorted_scores: Sequence[float], m_tilde: int, N: int, M_tilde: int,
                   n: Optional[int] = None) -> float:
    s = np.asarray(sorted_scores, dtype=np.float64)
    n = s.size if n is None else n
    if n != s.size:
        raise ValueError(f"n={n} but {s.size} scores given")
    prior = hypergeom_log_weight(N, M_tilde, n, m_tilde)
    if prior == NEG_INF:
        return NEG_INF
    st = group_stats(s, m_tilde)
    ll = prior + _gaussian_terms(s[: n - m_tilde], st.mu_b, st.sigma_b)
    if m_tilde > 0:
        ll += _gaussian_terms(s[n - m_tilde:], st.mu_m, st.sigma_m)
    return ll


def estimate_malicious_count(scores, N: int, M_tilde: int, n: Optional[int] = None) -> int:
    """MCNE: the split point with maximal log-likelihood; ties go to the smaller count."""
    s = scores.sorted_scores() if isinstance(scores, ScoreTable) else np.sort(np.asarray(scores, dtype=np.float64))
    n = s.size if n is None else n
    if n < 3:
        raise ValueError("MCNE needs at least 3 scores")
    best, best_ll = None, NEG_INF
    for m in range(0, min(n - 2, M_tilde) + 1):
        ll = log_likelihood(s, m, N, M_tilde, n)
        if ll > best_ll:
            best, best_ll = m, ll
    if best is None:
        raise ValueError("empty hypergeometric support")
    return best


def initial_m_tilde(n: int, N: int, M_tilde: int) -> int:
    """``ceil(n * M_tilde / N)`` in exact integer arithmetic."""
    return -((-n * M_tilde) // N)


def fedra_aggregate(reports: Sequence[ClientReport], gamma: float, N: int, M_tilde: int,
                    ratio_mode: str = "dynamic", m_tilde_override: Optional[int] = None):
    """Score, cut and average.  Returns ``(update, SelectionInfo)``.

    ``m_tilde_override`` pins the per-round malicious count instead of using
    ``ceil(n*M/N)`` (fixed mode) or MCNE (dynamic mode); it is used for the
    over/under-estimation ablation.
    """
    mat, ids, q = _check_reports(reports)
    n = len(reports)
    if ratio_mode not in ("fixed", "dynamic"):
        raise ValueError(f"unknown ratio_mode {ratio_mode!r}")
    m_init = initial_m_tilde(n, N, M_tilde) if m_tilde_override is None else int(m_tilde_override)
    table = robust_scores(reports, m_init, gamma)

    if ratio_mode == "fixed":
        m_used = m_init
        c = n - m_init - 1
    elif m_tilde_override is not None:
        m_used = m_init
        c = n - m_init
    else:
        m_used = estimate_malicious_count(table, N, M_tilde, n)
        c = n - m_used

    warnings = set()
    if c < 1:
        c = 1
        warnings.add("c_clamped")
    chosen = table.sorted_order[:c]
    # sum in input index order so the output depends only on the selected set
    rows = np.sort(chosen)
    weights = q[rows]
    out = (weights / weights.sum()) @ mat[rows]
    info = SelectionInfo(
        selected_ids=tuple(int(ids[i]) for i in chosen),
        scores=table.as_dict(),
        m_tilde=m_used,
        c=c,
        warnings=frozenset(warnings),
    )
    return out, info
