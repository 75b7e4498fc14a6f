"""Baseline aggregation rules and the ``aggregate`` dispatcher.

Every rule is a pure function of one round's :class:`ClientReport` list.  Rules
are described by small frozen dataclasses so a round's configuration can be
logged and compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numkit import (
    as_update,
    coordinate_median,
    coordinate_trimmed_mean,
    l2_norm,
    stack_updates,
    weighted_mean,
)


@dataclass(frozen=True)
class ClientReport:
    client_id: int
    update: np.ndarray
    quantity: int

    def __post_init__(self):
        if self.client_id < 0:
            raise ValueError("client_id must be non-negative")
        if int(self.quantity) != self.quantity or self.quantity < 1:
            raise ValueError(f"client {self.client_id}: quantity must be a positive integer, got {self.quantity}")
        object.__setattr__(self, "quantity", int(self.quantity))
        object.__setattr__(self, "update", as_update(self.update))


@dataclass(frozen=True)
class SelectionInfo:
    """What a rule did with a round's reports.

    ``selected_ids`` are the clients whose updates reach the output.  ``scores``
    maps client id to the rule's per-client score when it defines one.
    """

    selected_ids: tuple
    scores: Optional[dict] = None
    m_tilde: Optional[int] = None
    c: Optional[int] = None
    warnings: frozenset = field(default_factory=frozenset)


# --- rule descriptions -------------------------------------------------------

@dataclass(frozen=True)
class FedAvgWeighted:
    pass


@dataclass(frozen=True)
class Krum:
    m_tilde: int


@dataclass(frozen=True)
class MKrum:
    m_tilde: int
    count: Optional[int] = None  # None: n - m_tilde


@dataclass(frozen=True)
class Median:
    pass


@dataclass(frozen=True)
class Trimean:
    k: int


@dataclass(frozen=True)
class Bulyan:
    m_tilde: int


@dataclass(frozen=True)
class NormBound:
    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("norm-bound threshold must be positive")


@dataclass(frozen=True)
class RFA:
    max_iters: int = 100
    smoothing: float = 1e-6
    tolerance: float = 1e-10

    def __post_init__(self):
        if not self.smoothing > 0:
            raise ValueError("RFA smoothing must be positive")
        if self.max_iters < 0:
            raise ValueError("RFA max_iters must be non-negative")


@dataclass(frozen=True)
class Truncate:
    trim_k: int
    top_fraction: float = 0.1
    mass_fraction: float = 0.5

    def __post_init__(self):
        if not (0 < self.top_fraction < 1 and 0 < self.mass_fraction < 1):
            raise ValueError("top_fraction and mass_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class FedRA:
    gamma: float
    M_tilde: int
    N: int
    ratio_mode: str = "dynamic"
    m_tilde_override: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.gamma <= 0.5:
            raise ValueError(f"gamma must lie in (0, 0.5], got {self.gamma}")
        if self.ratio_mode not in ("fixed", "dynamic"):
            raise ValueError(f"unknown ratio_mode {self.ratio_mode!r}")
        if not 0 <= self.M_tilde <= self.N:
            raise ValueError("need 0 <= M_tilde <= N")


AggregationRule = (FedAvgWeighted, Krum, MKrum, Median, Trimean, Bulyan,
                   NormBound, RFA, Truncate, FedRA)


# --- helpers -----------------------------------------------------------------

def _ids(reports):
    ids = [r.client_id for r in reports]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client_id in round")
    return np.asarray(ids, dtype=np.int64)


def _check_reports(reports):
    if len(reports) == 0:
        raise ValueError("no reports to aggregate")
    mat = stack_updates([r.update for r in reports])
    return mat, _ids(reports), np.array([r.quantity for r in reports], dtype=np.float64)


def _krum_scores(mat: np.ndarray, ids: np.ndarray, m_tilde: int) -> np.ndarray:
    n = mat.shape[0]
    diff = mat[:, None, :] - mat[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    k = max(n - m_tilde - 2, 0)
    scores = np.empty(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        others.sort(key=lambda j: (sq[i, j], ids[j]))
        scores[i] = sum(sq[i, j] for j in others[:k])
    return scores


def _rank(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    # ascending score, ties by smaller client id
    return np.lexsort((ids, scores))


# --- rules -------------------------------------------------------------------

def krum_select(reports: Sequence[ClientReport], m_tilde: int, count: int = 1) -> list:
    """Ids of the ``count`` reports with the smallest Krum score.

    The score of a report is the sum of squared L2 distances to its
    ``n - m_tilde - 2`` nearest neighbours.
    """
    mat, ids, _ = _check_reports(reports)
    n = len(reports)
    if m_tilde < 0 or n < m_tilde + 3:
        raise ValueError(f"Krum needs n >= m_tilde + 3 (n={n}, m_tilde={m_tilde})")
    if not 1 <= count <= n:
        raise ValueError(f"count must lie in [1, {n}], got {count}")
    order = _rank(_krum_scores(mat, ids, m_tilde), ids)
    return [int(ids[i]) for i in order[:count]]


def bulyan_select(reports: Sequence[ClientReport], m_tilde: int) -> list:
    """Iterated Krum: pick the best report, remove it, rescore, until n - 2*m_tilde are chosen."""
    mat, ids, _ = _check_reports(reports)
    n = len(reports)
    if m_tilde < 0 or n < 4 * m_tilde + 3:
        raise ValueError(f"Bulyan needs n >= 4*m_tilde + 3 (n={n}, m_tilde={m_tilde})")
    remaining = list(range(n))
    chosen = []
    for _ in range(n - 2 * m_tilde):
        sub = mat[remaining]
        sub_ids = ids[remaining]
        best = _rank(_krum_scores(sub, sub_ids, m_tilde), sub_ids)[0]
        chosen.append(remaining.pop(int(best)))
    return [int(ids[i]) for i in chosen]


def bulyan(reports: Sequence[ClientReport], m_tilde: int) -> np.ndarray:
    return _bulyan(reports, m_tilde)[0]


def _bulyan(reports, m_tilde):
    selected = bulyan_select(reports, m_tilde)
    by_id = {r.client_id: r for r in reports}
    vecs = [by_id[i].update for i in selected]
    return coordinate_trimmed_mean(vecs, m_tilde), selected


def clip_update(update, threshold: float) -> np.ndarray:
    g = as_update(update)
    norm = l2_norm(g)
    if norm <= threshold or norm == 0.0:
        return g
    return g * (threshold / norm)


def norm_bound(reports: Sequence[ClientReport], threshold: float) -> np.ndarray:
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    _check_reports(reports)
    clipped = [clip_update(r.update, threshold) for r in reports]
    return weighted_mean(clipped, [r.quantity for r in reports])


def rfa_geometric_median(reports: Sequence[ClientReport], max_iters: int = 100,
                         smoothing: float = 1e-6, tolerance: float = 1e-10) -> np.ndarray:
    """Quantity-weighted geometric median by smoothed Weiszfeld iterations."""
    mat, _, q = _check_reports(reports)
    if len(reports) == 1:
        return mat[0].copy()
    v = (q / q.sum()) @ mat
    for _ in range(max_iters):
        dist = np.sqrt(np.sum((mat - v) ** 2, axis=1))
        beta = q / np.maximum(dist, smoothing)
        nxt = (beta / beta.sum()) @ mat
        step = float(np.sqrt(np.sum((nxt - v) ** 2)))
        v = nxt
        if step < tolerance:
            break
    return v


def _top_share_ok(q: np.ndarray, cap: int, top: int, mass_fraction: float) -> bool:
    capped = np.minimum(q, cap)
    head = np.sort(capped)[::-1][:top].sum()
    return head <= mass_fraction * capped.sum()


def truncate_threshold(quantities: Sequence[int], top_fraction: float = 0.1,
                       mass_fraction: float = 0.5) -> int:
    """Largest cap ``U`` under which the top ``ceil(top_fraction * n)`` clients
    hold at most ``mass_fraction`` of the capped total.  Never below 1."""
    q = np.asarray(quantities, dtype=np.int64)
    if q.size == 0:
        raise ValueError("no quantities")
    top = math.ceil(top_fraction * q.size)
    lo, hi = 1, int(q.max())
    if _top_share_ok(q, hi, top, mass_fraction):
        return hi
    if not _top_share_ok(q, lo, top, mass_fraction):
        return 1
    # invariant: ok(lo), not ok(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _top_share_ok(q, mid, top, mass_fraction):
            lo = mid
        else:
            hi = mid
    return lo


def weighted_trimmed_mean(vectors, weights, k: int) -> np.ndarray:
    """Per coordinate, drop the k smallest and k largest values, then take the
    weighted mean of the survivors using their own weights."""
    mat = stack_updates(vectors)
    w = np.asarray(weights, dtype=np.float64)
    n = mat.shape[0]
    if k < 0 or 2 * k >= n:
        raise ValueError(f"cannot trim {k} from each side of {n} values")
    order = np.argsort(mat, axis=0, kind="stable")[k:n - k]
    vals = np.take_along_axis(mat, order, axis=0)
    ww = w[order]
    return (vals * ww).sum(axis=0) / ww.sum(axis=0)


def truncate_aggregate(reports: Sequence[ClientReport], trim_k: int, top_fraction: float = 0.1,
                       mass_fraction: float = 0.5) -> np.ndarray:
    mat, _, q = _check_reports(reports)
    cap = truncate_threshold(q.astype(np.int64), top_fraction, mass_fraction)
    return weighted_trimmed_mean(mat, np.minimum(q, cap), trim_k)


def aggregate(rule, reports: Sequence[ClientReport]):
    """Apply ``rule`` to the round's reports.  Returns ``(update, SelectionInfo)``."""
    mat, ids, q = _check_reports(reports)
    all_ids = tuple(int(i) for i in ids)

    if isinstance(rule, FedAvgWeighted):
        return weighted_mean(mat, q), SelectionInfo(all_ids)
    if isinstance(rule, (Krum, MKrum)):
        count = 1 if isinstance(rule, Krum) else (rule.count or len(reports) - rule.m_tilde)
        selected = krum_select(reports, rule.m_tilde, count)
        scores = _krum_scores(mat, ids, rule.m_tilde)
        pos = {int(i): k for k, i in enumerate(ids)}
        out = mat[sorted(pos[i] for i in selected)].mean(axis=0)
        return out, SelectionInfo(tuple(selected), dict(zip(all_ids, scores.tolist())),
                                  m_tilde=rule.m_tilde, c=count)
    if isinstance(rule, Median):
        return coordinate_median(mat), SelectionInfo(all_ids)
    if isinstance(rule, Trimean):
        return coordinate_trimmed_mean(mat, rule.k), SelectionInfo(all_ids, m_tilde=rule.k)
    if isinstance(rule, Bulyan):
        out, selected = _bulyan(reports, rule.m_tilde)
        return out, SelectionInfo(tuple(selected), m_tilde=rule.m_tilde, c=len(selected))
    if isinstance(rule, NormBound):
        return norm_bound(reports, rule.threshold), SelectionInfo(all_ids)
    if isinstance(rule, RFA):
        out = rfa_geometric_median(reports, rule.max_iters, rule.smoothing, rule.tolerance)
        return out, SelectionInfo(all_ids)
    if isinstance(rule, Truncate):
        out = truncate_aggregate(reports, rule.trim_k, rule.top_fraction, rule.mass_fraction)
        return out, SelectionInfo(all_ids, m_tilde=rule.trim_k)
    if isinstance(rule, FedRA):
        from .fedra import fedra_aggregate
        return fedra_aggregate(reports, rule.gamma, rule.N, rule.M_tilde, rule.ratio_mode,
                               m_tilde_override=rule.m_tilde_override)
    raise TypeError(f"unknown aggregation rule {rule!r}")
