"""Malicious update and quantity generators.

Colluders are the malicious clients sampled in the current round.  They first
compute honest updates on their own data, then replace them with one shared
crafted update and one shared inflated quantity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .numkit import stack_updates

ATTACK_KINDS = ("none", "labelflip", "lie", "optimize")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    alpha_q: float = 0.0
    z: Optional[float] = None  # LIE; None derives z from (n, m) each round
    lam: float = 4.0  # Optimize

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.alpha_q >= 0:
            raise ValueError("alpha_q must be non-negative")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def is_noop(self) -> bool:
        return self.kind == "none" and self.alpha_q == 0


def flip_label(y: int, num_classes: int) -> int:
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if not 0 <= y < num_classes:
        raise ValueError(f"label {y} outside [0, {num_classes})")
    return num_classes - 1 - y


def _mean_std(updates):
    mat = stack_updates(updates)
    mu = mat.mean(axis=0)
    if mat.shape[0] < 2:
        return mu, np.zeros_like(mu)
    return mu, mat.std(axis=0, ddof=1)


def lie_z(n: int, m: int) -> float:
    """Default LIE scale: the normal quantile that keeps the crafted update
    inside the majority, clamped to [0, 3]."""
    if m <= 0 or m >= n:
        return 0.0
    s = n // 2 + 1 - m
    p = 1.0 - s / (n - m)
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 3.0
    return min(max(NormalDist().inv_cdf(p), 0.0), 3.0)


def lie_update(colluding_benign_updates: Sequence, z: float) -> np.ndarray:
    if len(colluding_benign_updates) < 2:
        return stack_updates(colluding_benign_updates)[0].copy()
    mu, sd = _mean_std(colluding_benign_updates)
    return mu + z * sd


def optimize_update(colluding_benign_updates: Sequence, lam: float) -> np.ndarray:
    """Push against the colluders' mean direction: ``mu - lam * sign(mu) * sd``."""
    mu, sd = _mean_std(colluding_benign_updates)
    return mu - lam * np.sign(mu) * sd


def enhanced_quantity(colluding_quantities: Sequence[int], alpha_q: float) -> int:
    q = np.asarray(colluding_quantities, dtype=np.float64)
    if q.size == 0:
        raise ValueError("need at least one colluder")
    sd = float(q.std(ddof=1)) if q.size > 1 else 0.0
    return max(1, int(round(float(q.mean()) + alpha_q * sd)))


def craft(attack: AttackSpec, honest_updates: Sequence, true_quantities: Sequence[int], n: int):
    """Malicious submissions for one round's colluders.

    Returns ``(updates, quantities)`` aligned with the inputs.  LabelFlip
    colluders keep their own (already poisoned) gradients.
    """
    k = len(honest_updates)
    if k == 0 or attack.is_noop:
        return [np.asarray(u) for u in honest_updates], [int(q) for q in true_quantities]
    if attack.kind == "lie":
        z = lie_z(n, k) if attack.z is None else attack.z
        shared = lie_update(honest_updates, z)
        updates = [shared.copy() for _ in range(k)]
    elif attack.kind == "optimize":
        shared = optimize_update(honest_updates, attack.lam)
        updates = [shared.copy() for _ in range(k)]
    else:
        updates = [np.asarray(u) for u in honest_updates]
    q = enhanced_quantity(true_quantities, attack.alpha_q)
    return updates, [q] * k
