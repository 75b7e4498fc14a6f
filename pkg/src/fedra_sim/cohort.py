"""Client population: quantities, data partitioning, local gradients, MNIST files."""
from __future__ import annotations

import gzip
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numkit import as_update


@dataclass
class ClientDataset:
    client_id: int
    X: np.ndarray  # (q, d) features
    y: np.ndarray  # (q,) class indices
    is_malicious: bool = False

    @property
    def quantity(self) -> int:
        return int(self.X.shape[0])


@dataclass(frozen=True)
class GaussianMean:
    """Estimate a mean: ``f(w; z) = 0.5 * ||w - z||^2`` with ``z ~ N(mu*, diag(sigma^2))``."""

    true_mean: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("all per-dimension std must be positive")

    @property
    def d(self) -> int:
        return int(np.asarray(self.true_mean).size)

    @property
    def dim(self) -> int:
        return self.d

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.normal(self.true_mean, self.sigma, size=(count, self.d))


@dataclass(frozen=True)
class SoftmaxRegression:
    """Multinomial logistic regression with bias; parameters are ``(C, d+1)`` flattened."""

    d: int
    C: int
    l2_reg: float = 1e-4

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("softmax regression needs C >= 2")

    @property
    def dim(self) -> int:
        return self.C * (self.d + 1)


def sample_quantities(N: int, rng: np.random.Generator, target_mean: float = 20.0,
                      log_sigma: float = 3.0) -> np.ndarray:
    """Log-normal sample counts with analytic mean ``target_mean``, clamped to >= 1."""
    if N < 1:
        raise ValueError("N must be >= 1")
    loc = math.log(target_mean) - log_sigma ** 2 / 2
    x = rng.normal(loc, log_sigma, size=N)
    return np.maximum(1, np.rint(np.exp(x))).astype(np.int64)


def _take(budget_left: int, clients_left: int, want: int) -> int:
    # keep at least one sample for every client still waiting
    return max(1, min(want, budget_left - clients_left))


def partition(X: np.ndarray, y: np.ndarray, quantities: Sequence[int], rng: np.random.Generator,
              mode: str = "iid", single_class_fraction: float = 0.9) -> list:
    """Split ``(X, y)`` among ``len(quantities)`` clients.

    Clients are served in id order; once data runs short later clients are
    truncated, but every client keeps at least one sample.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    quantities = [int(q) for q in quantities]
    N = len(quantities)
    total = X.shape[0]
    if total < N:
        raise ValueError(f"dataset has {total} samples but there are {N} clients")
    if mode not in ("iid", "noniid"):
        raise ValueError(f"unknown partition mode {mode!r}")

    assigned: list = [None] * N
    left = total
    if mode == "noniid":
        n_single = int(round(single_class_fraction * N))
        single = np.sort(rng.choice(N, size=n_single, replace=False))
        classes = np.unique(y)
        pools = {c: list(rng.permutation(np.flatnonzero(y == c))) for c in classes}
        waiting = N
        for cid in single:
            waiting -= 1
            sizes = np.array([len(pools[c]) for c in classes], dtype=np.float64)
            c = classes[rng.choice(len(classes), p=sizes / sizes.sum())]
            k = min(_take(left, waiting, quantities[cid]), len(pools[c]))
            assigned[cid] = np.array(pools[c][:k], dtype=np.int64)
            del pools[c][:k]
            left -= k
        rest = np.concatenate([np.asarray(p, dtype=np.int64) for p in pools.values()])
        pool = list(rng.permutation(rest))
    else:
        pool = list(rng.permutation(total))

    iid_ids = [i for i in range(N) if assigned[i] is None]
    waiting = len(iid_ids)
    pos = 0
    for cid in iid_ids:
        waiting -= 1
        k = _take(left, waiting, quantities[cid])
        assigned[cid] = np.array(pool[pos:pos + k], dtype=np.int64)
        pos += k
        left -= k
    return [ClientDataset(i, X[idx], y[idx]) for i, idx in enumerate(assigned)]


def _softmax_grad(task: SoftmaxRegression, w: np.ndarray, X: np.ndarray, y: np.ndarray):
    W = w.reshape(task.C, task.d + 1)
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    logits = Xb @ W.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    n = X.shape[0]
    loss = -np.log(p[np.arange(n), y] + 1e-300).mean() + 0.5 * task.l2_reg * float(w @ w)
    p[np.arange(n), y] -= 1.0
    grad = (p.T @ Xb) / n
    return grad.reshape(-1) + task.l2_reg * w, loss


def local_loss(task, w, X: np.ndarray, y: np.ndarray) -> float:
    w = as_update(w)
    if isinstance(task, GaussianMean):
        return float(0.5 * np.mean(np.sum((w - X) ** 2, axis=1)))
    return float(_softmax_grad(task, w, X, y)[1])


def local_update(task, w, data: ClientDataset, labels: Optional[np.ndarray] = None):
    """Full-batch gradient of the client's mean loss at ``w``.  Returns ``(g, quantity)``.

    ``labels`` replaces the client's labels (label-flipping clients).
    """
    w = as_update(w)
    if w.size != task.dim:
        raise ValueError(f"parameter dimension {w.size} does not match task dimension {task.dim}")
    if isinstance(task, GaussianMean):
        return w - data.X.mean(axis=0), data.quantity
    y = data.y if labels is None else labels
    return _softmax_grad(task, w, data.X, y)[0], data.quantity


def accuracy(task: SoftmaxRegression, w, X: np.ndarray, y: np.ndarray) -> float:
    W = np.asarray(w).reshape(task.C, task.d + 1)
    pred = np.argmax(X @ W[:, :-1].T + W[:, -1], axis=1)
    return float(np.mean(pred == y))


def synthetic_blobs(rng: np.random.Generator, count: int, d: int, C: int,
                    spread: float = 1.0) -> tuple:
    """Gaussian class blobs with unit-variance noise and random unit-norm centres scaled by ``spread``."""
    centres = rng.normal(size=(C, d))
    centres *= spread * math.sqrt(d) / np.linalg.norm(centres, axis=1, keepdims=True)
    y = rng.integers(0, C, size=count)
    X = centres[y] + rng.normal(size=(count, d))
    return X, y


class IDXFormatError(ValueError):
    pass


def _read(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _header(buf: bytes, magic: int, ndim: int, path) -> tuple:
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise IDXFormatError(f"{path}: truncated header at byte {len(buf)}, need {need}")
    got = int.from_bytes(buf[0:4], "big")
    if got != magic:
        raise IDXFormatError(f"{path}: bad magic 0x{got:08x} at byte 0, expected 0x{magic:08x}")
    return tuple(int.from_bytes(buf[4 + 4 * k: 8 + 4 * k], "big") for k in range(ndim))


def load_idx(images_path, labels_path) -> tuple:
    """Read an IDX image/label pair (optionally gzipped).

    Returns ``(X, y)`` with ``X`` of shape ``(count, rows*cols)`` scaled to
    [0, 1] and ``y`` of integer labels in 0..9.
    """
    img = _read(images_path)
    lab = _read(labels_path)
    count, rows, cols = _header(img, 0x00000803, 3, images_path)
    (nlab,) = _header(lab, 0x00000801, 1, labels_path)
    if (rows, cols) != (28, 28):
        raise IDXFormatError(f"{images_path}: expected 28x28 images at byte 8, got {rows}x{cols}")
    if nlab != count:
        raise IDXFormatError(f"{labels_path}: label count {nlab} at byte 4 != image count {count}")
    body = 16 + count * rows * cols
    if len(img) < body:
        raise IDXFormatError(f"{images_path}: truncated at byte {len(img)}, expected {body}")
    if len(lab) < 8 + count:
        raise IDXFormatError(f"{labels_path}: truncated at byte {len(lab)}, expected {8 + count}")
    X = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    y = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if y.size and y.max() > 9:
        bad = int(np.argmax(y > 9))
        raise IDXFormatError(f"{labels_path}: label {y[bad]} > 9 at byte {8 + bad}")
    return X.reshape(count, rows * cols).astype(np.float64) / 255.0, y
