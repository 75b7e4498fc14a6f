"""Round loop: client sampling, attack injection, aggregation, FedAdam step, metrics.

Every random draw comes from a generator seeded by ``(seed, stream, round,
client)`` so a run is a pure function of its configuration.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import aggregators as agg
from .adversary import AttackSpec, craft, flip_label
from .cohort import (
    GaussianMean,
    SoftmaxRegression,
    accuracy,
    load_idx,
    local_loss,
    local_update,
    partition,
    sample_quantities,
    synthetic_blobs,
)
from .config import ExperimentConfig, PopulationConfig, RuleConfig
from .fedra import initial_m_tilde

SETUP, ROUND, CLIENT, EVAL = 0, 1, 2, 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return stream(seed, CLIENT, round_index, client_id)


@dataclass
class ServerState:
    w: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0

    @classmethod
    def init(cls, w0) -> "ServerState":
        w0 = np.array(w0, dtype=np.float64)
        return cls(w0, np.zeros_like(w0), np.zeros_like(w0), 0)


@dataclass
class RoundRecord:
    round: int
    true_m: int
    estimated_m: Optional[int]
    selected_count: int
    filtered_malicious: int
    filtered_benign: int
    train_loss: Optional[float]
    eval_accuracy: Optional[float]  # test accuracy (softmax) or ||w - mu*||_2 (gaussian_mean)
    warnings: frozenset = field(default_factory=frozenset)


@dataclass
class World:
    task: object
    clients: list
    malicious: frozenset
    pop: PopulationConfig
    seed: int
    test_X: Optional[np.ndarray] = None
    test_y: Optional[np.ndarray] = None

    @property
    def num_classes(self) -> int:
        return getattr(self.task, "C", 0)


def sample_round(pop: PopulationConfig, rng: np.random.Generator,
                 malicious_ids: Optional[Sequence[int]] = None) -> list:
    """Sorted ids of the clients sampled this round.

    Fixed ratio: exactly ``ceil(n*M/N)`` malicious ids.  Dynamic ratio: a
    uniform draw, so the malicious count is hypergeometric.
    ``malicious_ids`` defaults to ``range(M)``.
    """
    N, M, n = pop.N, pop.M, pop.n
    if not 1 <= n <= N:
        raise ValueError(f"cannot sample n={n} of N={N}")
    mal = np.arange(M) if malicious_ids is None else np.asarray(sorted(malicious_ids), dtype=np.int64)
    if pop.ratio_mode == "dynamic":
        ids = rng.choice(N, size=n, replace=False)
    else:
        m = initial_m_tilde(n, N, M)
        if m > len(mal) or n - m > N - len(mal):
            raise ValueError(f"fixed-ratio round needs {m} malicious and {n - m} benign clients")
        ben = np.setdiff1d(np.arange(N), mal)
        ids = np.concatenate([rng.choice(mal, size=m, replace=False),
                              rng.choice(ben, size=n - m, replace=False)])
    return sorted(int(i) for i in ids)


def fedadam_step(state: ServerState, g, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, bias_correction: bool = True) -> ServerState:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.w.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {state.w.shape}")
    t = state.step_count + 1
    m = beta1 * state.adam_m + (1 - beta1) * g
    v = beta2 * state.adam_v + (1 - beta2) * g * g
    if bias_correction:
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
    else:
        m_hat, v_hat = m, v
    w = state.w - lr * m_hat / (np.sqrt(v_hat) + eps)
    return ServerState(w, m, v, t)


# --- world construction -------------------------------------------------------

def _load_mnist(cfg, rng):
    d = Path(cfg.task.mnist_dir)

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (d / name).exists():
                return d / name
        raise FileNotFoundError(f"{d / stem} not found")

    X, y = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
    Xt, yt = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))
    pick = rng.choice(X.shape[0], size=min(cfg.task.train_size, X.shape[0]), replace=False)
    tpick = rng.choice(Xt.shape[0], size=min(cfg.task.test_size, Xt.shape[0]), replace=False)
    return X[pick], y[pick], Xt[tpick], yt[tpick]


def build_world(cfg: ExperimentConfig) -> World:
    rng = stream(cfg.seed, SETUP)
    pop = cfg.population
    tc = cfg.task
    quantities = sample_quantities(pop.N, rng, cfg.quantities.target_mean, cfg.quantities.log_sigma)
    malicious = frozenset(int(i) for i in rng.choice(pop.N, size=pop.M, replace=False))

    test_X = test_y = None
    if tc.kind == "gaussian_mean":
        task = GaussianMean(tc.mean_scale * rng.normal(size=tc.d), np.full(tc.d, tc.sigma))
        X = task.draw(rng, int(quantities.sum()))
        y = np.zeros(X.shape[0], dtype=np.int64)
    else:
        if tc.source == "mnist":
            X, y, test_X, test_y = _load_mnist(cfg, rng)
            task = SoftmaxRegression(X.shape[1], 10, tc.l2_reg)
        else:
            X, y = synthetic_blobs(rng, tc.train_size + tc.test_size, tc.d, tc.C, tc.blob_spread)
            X, test_X = X[: tc.train_size], X[tc.train_size:]
            y, test_y = y[: tc.train_size], y[tc.train_size:]
            task = SoftmaxRegression(tc.d, tc.C, tc.l2_reg)

    clients = partition(X, y, quantities, rng, cfg.partition.mode, cfg.partition.single_class_fraction)
    for c in clients:
        c.is_malicious = c.client_id in malicious
    return World(task, clients, malicious, pop, cfg.seed, test_X, test_y)


def initial_weights(cfg: ExperimentConfig, world: World) -> np.ndarray:
    if isinstance(world.task, GaussianMean):
        return np.zeros(world.task.dim)
    return 0.01 * stream(cfg.seed, SETUP, 1).normal(size=world.task.dim)


def resolve_rule(rc: RuleConfig, pop: PopulationConfig, n: int, true_m: int):
    """Concrete aggregation rule for a round with ``n`` reports."""
    if rc.m_tilde == "auto":
        m = initial_m_tilde(n, pop.N, pop.M_est)
    elif rc.m_tilde == "true":
        m = true_m
    else:
        m = int(rc.m_tilde)
    kind = rc.kind
    if kind == "fedavg":
        return agg.FedAvgWeighted()
    if kind == "krum":
        return agg.Krum(m)
    if kind == "mkrum":
        return agg.MKrum(m, rc.count)
    if kind == "median":
        return agg.Median()
    if kind == "trimean":
        return agg.Trimean(m if rc.trim_k is None else rc.trim_k)
    if kind == "bulyan":
        return agg.Bulyan(m)
    if kind == "normbound":
        return agg.NormBound(rc.threshold)
    if kind == "rfa":
        return agg.RFA(rc.max_iters, rc.smoothing, rc.tolerance)
    if kind == "truncate":
        return agg.Truncate(m if rc.trim_k is None else rc.trim_k, rc.top_fraction, rc.mass_fraction)
    if kind == "fedra":
        return agg.FedRA(rc.gamma, pop.M_est, pop.N, pop.ratio_mode, rc.m_tilde_override)
    raise ValueError(f"unknown rule kind {kind!r}")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("FEDRA_SIM_THREADS", "1")))
    except ValueError:
        return 1


# --- one round -----------------------------------------------------------------

def collect_reports(world: World, w: np.ndarray, ids: Sequence[int], attack: AttackSpec):
    """Honest updates for every sampled client, then the colluders' overwrite."""
    task = world.task

    def honest(cid):
        c = world.clients[cid]
        labels = None
        if c.is_malicious and attack.kind == "labelflip":
            labels = np.array([flip_label(int(v), world.num_classes) for v in c.y], dtype=np.int64)
        return local_update(task, w, c, labels)

    workers = _workers()
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(honest, ids))
    else:
        results = [honest(cid) for cid in ids]

    updates = {cid: g for cid, (g, _) in zip(ids, results)}
    quantities = {cid: q for cid, (_, q) in zip(ids, results)}
    colluders = [cid for cid in ids if cid in world.malicious]
    if colluders:
        new_u, new_q = craft(attack, [updates[c] for c in colluders], [quantities[c] for c in colluders],
                             len(ids))
        for cid, u, q in zip(colluders, new_u, new_q):
            updates[cid] = u
            quantities[cid] = q
    return [agg.ClientReport(cid, updates[cid], quantities[cid]) for cid in ids]


def evaluate(world: World, w: np.ndarray) -> float:
    if isinstance(world.task, GaussianMean):
        return float(np.linalg.norm(w - world.task.true_mean))
    return accuracy(world.task, w, world.test_X, world.test_y)


def run_round(world: World, server: ServerState, rule, attack: AttackSpec, rng: np.random.Generator,
              round_index: int = 0, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, bias_correction: bool = True, evaluate_now: bool = False,
              trace: Optional[list] = None):
    """Play one round.  ``rule`` is an aggregation rule or a callable ``(n, true_m) -> rule``.

    When ``trace`` is a list, ``(reports, rule, output, info)`` is appended to it.
    """
    ids = sample_round(world.pop, rng, world.malicious)
    true_m = sum(1 for i in ids if i in world.malicious)
    concrete = rule(len(ids), true_m) if callable(rule) else rule
    reports = collect_reports(world, server.w, ids, attack)

    benign = [world.clients[i] for i in ids if i not in world.malicious]
    if benign:
        weights = np.array([c.quantity for c in benign], dtype=np.float64)
        losses = np.array([local_loss(world.task, server.w, c.X, c.y) for c in benign])
        train_loss = float(weights @ losses / weights.sum())
    else:
        train_loss = None

    g, info = agg.aggregate(concrete, reports)
    if trace is not None:
        trace.append((reports, concrete, g, info))
    new_state = fedadam_step(server, g, lr, beta1, beta2, eps, bias_correction)

    selected = set(info.selected_ids)
    dropped = [i for i in ids if i not in selected]
    fm = sum(1 for i in dropped if i in world.malicious)
    record = RoundRecord(
        round=round_index,
        true_m=true_m,
        estimated_m=info.m_tilde,
        selected_count=len(selected),
        filtered_malicious=fm,
        filtered_benign=len(dropped) - fm,
        train_loss=train_loss,
        eval_accuracy=evaluate(world, new_state.w) if evaluate_now else None,
        warnings=info.warnings,
    )
    return new_state, record


def run_simulation(cfg: ExperimentConfig, world: Optional[World] = None,
                   trace: Optional[list] = None, return_state: bool = False):
    """Run ``cfg.rounds`` rounds and return the list of :class:`RoundRecord`."""
    cfg.validate()
    world = build_world(cfg) if world is None else world
    state = ServerState.init(initial_weights(cfg, world))
    attack = AttackSpec(cfg.attack.kind, cfg.attack.alpha_q, cfg.attack.z, cfg.attack.lam)
    rc, pop = cfg.rule, cfg.population

    def rule_for(n, true_m):
        return resolve_rule(rc, pop, n, true_m)

    records = []
    for t in range(cfg.rounds):
        rng = stream(cfg.seed, ROUND, t)
        evaluate_now = (t + 1) % cfg.eval_interval == 0 or t == cfg.rounds - 1
        try:
            state, rec = run_round(world, state, rule_for, attack, rng, t, cfg.lr, cfg.server.beta1,
                                   cfg.server.beta2, cfg.server.eps, cfg.server.bias_correction,
                                   evaluate_now, trace)
        except Exception as exc:
            raise RuntimeError(f"round {t} failed: {exc}") from exc
        records.append(rec)
    if return_state:
        return records, state
    return records
