"""Quantity-robust federated aggregation (FedRA), baseline defenses, attacks and a
deterministic round simulator."""

__version__ = "0.1.0"

from .aggregators import (  # noqa: E402
    RFA,
    Bulyan,
    ClientReport,
    FedAvgWeighted,
    FedRA,
    Krum,
    Median,
    MKrum,
    NormBound,
    SelectionInfo,
    Trimean,
    Truncate,
    aggregate,
)
from .config import ExperimentConfig, config_from_dict, parse_config  # noqa: E402
from .engine import run_simulation  # noqa: E402
from .fedra import estimate_malicious_count, fedra_aggregate, robust_scores  # noqa: E402

__all__ = [
    "ClientReport", "SelectionInfo", "aggregate", "FedAvgWeighted", "Krum", "MKrum", "Median",
    "Trimean", "Bulyan", "NormBound", "RFA", "Truncate", "FedRA", "robust_scores",
    "estimate_malicious_count", "fedra_aggregate", "ExperimentConfig", "config_from_dict",
    "parse_config", "run_simulation",
]
