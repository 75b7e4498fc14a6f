"""Experiment configuration: nested dataclasses parsed strictly from JSON.

Unknown keys are rejected and every range is checked before round 0.  Defaults
follow the reference experimental setup where one exists (n=50, M/N=0.1,
gamma=0.1, log-normal quantities with mean 20 and sigma 3).
"""
from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union


class ConfigError(ValueError):
    pass


RULE_KINDS = ("fedavg", "krum", "mkrum", "median", "trimean", "bulyan", "normbound", "rfa",
              "truncate", "fedra")


@dataclass
class TaskConfig:
    kind: str = "gaussian_mean"  # or "softmax"
    d: int = 10
    sigma: float = 1.0  # gaussian_mean: per-dimension sample std
    mean_scale: float = 1.0  # gaussian_mean: true mean drawn as mean_scale * N(0, I)
    C: int = 10  # softmax
    l2_reg: float = 1e-4
    source: str = "synthetic"  # softmax data: "synthetic" blobs or "mnist" IDX files
    mnist_dir: Optional[str] = None
    train_size: int = 3000  # softmax: training pool size (MNIST subset size)
    test_size: int = 1000
    blob_spread: float = 1.0

    def validate(self):
        if self.kind not in ("gaussian_mean", "softmax"):
            raise ConfigError(f"task.kind: unknown task {self.kind!r}")
        if self.d < 1:
            raise ConfigError("task.d: must be >= 1")
        if not self.sigma > 0:
            raise ConfigError("task.sigma: must be positive")
        if self.C < 2:
            raise ConfigError("task.C: must be >= 2")
        if self.l2_reg < 0:
            raise ConfigError("task.l2_reg: must be non-negative")
        if self.source not in ("synthetic", "mnist"):
            raise ConfigError(f"task.source: unknown source {self.source!r}")
        if self.source == "mnist" and not self.mnist_dir:
            raise ConfigError("task.mnist_dir: required when source is 'mnist'")
        if self.train_size < 1 or self.test_size < 1:
            raise ConfigError("task.train_size/test_size: must be >= 1")


@dataclass
class PopulationConfig:
    N: int = 500
    M: int = 50
    n: int = 50
    M_tilde: Optional[int] = None  # None: the server's estimate equals M
    ratio_mode: str = "dynamic"

    @property
    def M_est(self) -> int:
        return self.M if self.M_tilde is None else self.M_tilde

    def validate(self):
        if self.N < 1:
            raise ConfigError("population.N: must be >= 1")
        if not 0 <= self.M <= self.N:
            raise ConfigError("population.M: must lie in [0, N]")
        if not 1 <= self.n <= self.N:
            raise ConfigError("population.n: must lie in [1, N]")
        if self.M_tilde is not None and not 0 <= self.M_tilde <= self.N:
            raise ConfigError("population.M_tilde: must lie in [0, N]")
        if self.ratio_mode not in ("fixed", "dynamic"):
            raise ConfigError(f"population.ratio_mode: unknown mode {self.ratio_mode!r}")
        if self.ratio_mode == "fixed":
            m = -((-self.n * self.M) // self.N)
            if m > self.M or self.n - m > self.N - self.M:
                raise ConfigError("population: fixed-ratio sampling impossible for these N, M, n")


@dataclass
class QuantityConfig:
    target_mean: float = 20.0
    log_sigma: float = 3.0

    def validate(self):
        if not self.target_mean >= 1:
            raise ConfigError("quantities.target_mean: must be >= 1")
        if self.log_sigma < 0:
            raise ConfigError("quantities.log_sigma: must be non-negative")


@dataclass
class PartitionConfig:
    mode: str = "iid"
    single_class_fraction: float = 0.9

    def validate(self):
        if self.mode not in ("iid", "noniid"):
            raise ConfigError(f"partition.mode: unknown mode {self.mode!r}")
        if not 0 <= self.single_class_fraction <= 1:
            raise ConfigError("partition.single_class_fraction: must lie in [0, 1]")


@dataclass
class RuleConfig:
    kind: str = "fedra"
    gamma: float = 0.1
    # baselines: "auto" = ceil(n*M_tilde/N), "true" = the round's real malicious count, or an int
    m_tilde: Union[str, int] = "auto"
    m_tilde_override: Optional[int] = None  # FedRA only: pin the cut instead of MCNE
    count: Optional[int] = None  # mKrum selection size; None = n - m_tilde
    trim_k: Optional[int] = None  # Trimean / Truncate; None = m_tilde
    threshold: float = 1.0  # Norm-bound
    max_iters: int = 100  # RFA
    smoothing: float = 1e-6
    tolerance: float = 1e-10
    top_fraction: float = 0.1  # Truncate
    mass_fraction: float = 0.5

    def validate(self):
        if self.kind not in RULE_KINDS:
            raise ConfigError(f"rule.kind: unknown rule {self.kind!r}")
        if not 0 < self.gamma <= 0.5:
            raise ConfigError("rule.gamma: must lie in (0, 0.5]")
        if isinstance(self.m_tilde, str):
            if self.m_tilde not in ("auto", "true"):
                raise ConfigError("rule.m_tilde: must be 'auto', 'true' or a non-negative int")
        elif self.m_tilde < 0:
            raise ConfigError("rule.m_tilde: must be non-negative")
        if self.m_tilde_override is not None and self.m_tilde_override < 0:
            raise ConfigError("rule.m_tilde_override: must be non-negative")
        if self.count is not None and self.count < 1:
            raise ConfigError("rule.count: must be >= 1")
        if self.trim_k is not None and self.trim_k < 0:
            raise ConfigError("rule.trim_k: must be non-negative")
        if not self.threshold > 0:
            raise ConfigError("rule.threshold: must be positive")
        if self.max_iters < 0:
            raise ConfigError("rule.max_iters: must be non-negative")
        if not self.smoothing > 0:
            raise ConfigError("rule.smoothing: must be positive")
        if not self.tolerance >= 0:
            raise ConfigError("rule.tolerance: must be non-negative")
        if not 0 < self.top_fraction < 1:
            raise ConfigError("rule.top_fraction: must lie in (0, 1)")
        if not 0 < self.mass_fraction < 1:
            raise ConfigError("rule.mass_fraction: must lie in (0, 1)")


@dataclass
class AttackConfig:
    kind: str = "none"
    alpha_q: float = 0.0
    z: Optional[float] = None
    lam: float = 4.0

    def validate(self):
        if self.kind not in ("none", "labelflip", "lie", "optimize"):
            raise ConfigError(f"attack.kind: unknown attack {self.kind!r}")
        if not self.alpha_q >= 0:
            raise ConfigError("attack.alpha_q: must be non-negative")
        if not self.lam > 0:
            raise ConfigError("attack.lam: must be positive")


@dataclass
class ServerConfig:
    lr: Optional[float] = None  # None: 0.03 for gaussian_mean, 0.05 for softmax
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bias_correction: bool = True

    def validate(self):
        if self.lr is not None and not self.lr > 0:
            raise ConfigError("server.lr: must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("server.beta1/beta2: must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("server.eps: must be positive")


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    quantities: QuantityConfig = field(default_factory=QuantityConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    rule: RuleConfig = field(default_factory=RuleConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    rounds: int = 100
    eval_interval: int = 10
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        for part in (self.task, self.population, self.quantities, self.partition, self.rule,
                     self.attack, self.server):
            part.validate()
        if self.rounds < 0:
            raise ConfigError("rounds: must be non-negative")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval: must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")
        if self.attack.kind == "labelflip" and self.task.kind != "softmax":
            raise ConfigError("attack.kind: labelflip needs a classification task")
        return self

    @property
    def lr(self) -> float:
        if self.server.lr is not None:
            return self.server.lr
        return 0.03 if self.task.kind == "gaussian_mean" else 0.05

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_type(value, hint, key):
    origin = typing.get_origin(hint)
    if origin is Union:
        for arm in typing.get_args(hint):
            try:
                return _check_type(value, arm, key)
            except ConfigError:
                continue
        raise ConfigError(f"{key}: value {value!r} has the wrong type")
    if hint is type(None):
        if value is None:
            return None
        raise ConfigError(f"{key}: expected null")
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean")
    if hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected an integer")
    if hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
            return float(value)
        raise ConfigError(f"{key}: expected a finite number")
    if hint is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected a string")
    if dataclasses.is_dataclass(hint):
        return _from_dict(hint, value, key)
    raise ConfigError(f"{key}: unsupported field type {hint}")


def _from_dict(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}{key}: unknown key")
    return cls(**{k: _check_type(v, hints[k], f"{prefix}{k}") for k, v in data.items()})


def config_from_dict(data: dict) -> ExperimentConfig:
    # nested dataclasses get a "section." prefix in error messages
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    hints = typing.get_type_hints(ExperimentConfig)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{key}: unknown key")
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _from_dict(hint, value, f"{key}.")
        else:
            kwargs[key] = _check_type(value, hint, key)
    return ExperimentConfig(**kwargs).validate()


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return config_from_dict(data)
