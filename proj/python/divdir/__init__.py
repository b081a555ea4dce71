"""Bayesian networks trained with input-gradient diversity penalties."""

from ._divdir import (
    Dataset,
    Network,
    NonFiniteLoss,
    TrainingDiverged,
    attack,
    direction_stats,
    evaluate_attack,
    gen_synthetic,
    load_idx,
    mlp_spec,
    mnist_spec,
    model_id,
    run_command,
    run_verify,
    standard_accuracy,
    sweep,
    train,
)

__all__ = [
    "Dataset",
    "Network",
    "NonFiniteLoss",
    "TrainingDiverged",
    "attack",
    "direction_stats",
    "evaluate_attack",
    "gen_synthetic",
    "load_idx",
    "mlp_spec",
    "mnist_spec",
    "model_id",
    "run_command",
    "run_verify",
    "standard_accuracy",
    "sweep",
    "train",
]
