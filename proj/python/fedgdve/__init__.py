"""Federated graph recommendation with learned data selection."""

from ._core import (
    Config,
    ConfigError,
    DataError,
    EvaluationError,
    PartitionError,
    adjusted_mutual_information,
    aggregate,
    code_version,
    evaluate,
    load_config,
    load_dataset,
    ndcg_at_k,
    parse_config,
    partition,
    precision_at_k,
    propagate,
    recall_at_k,
    run_experiment,
)

__all__ = [
    "Config",
    "ConfigError",
    "DataError",
    "EvaluationError",
    "PartitionError",
    "adjusted_mutual_information",
    "aggregate",
    "code_version",
    "evaluate",
    "load_config",
    "load_dataset",
    "ndcg_at_k",
    "parse_config",
    "partition",
    "precision_at_k",
    "propagate",
    "recall_at_k",
    "run_experiment",
]
