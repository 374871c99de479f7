"""Hybrid inter-layer / data parallel training engine and performance simulator."""

from ._hybridpipe import (
    HybridpipeError,
    activation_units,
    estimated_training_time,
    flops_and_peak_fraction,
    model_state_bytes,
    resolved_config,
    round_to_half,
    run_cli,
    select_checkpoint_interval,
    simulate,
    sweep_columns,
    train,
    validate,
)

__all__ = [
    "HybridpipeError",
    "activation_units",
    "estimated_training_time",
    "flops_and_peak_fraction",
    "model_state_bytes",
    "resolved_config",
    "round_to_half",
    "run_cli",
    "select_checkpoint_interval",
    "simulate",
    "sweep_columns",
    "train",
    "validate",
]
