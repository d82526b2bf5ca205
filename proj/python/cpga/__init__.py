"""Contrastive prototype generation and adaptation on synthetic domain shift."""

from ._cpga import (
    ConfigError,
    ContractError,
    DivergenceError,
    LossToggles,
    RunConfig,
    ShapeError,
    ShiftConfig,
    TrainConfig,
    assign_labels,
    elr,
    inject_label_noise,
    make_gaussian_domains,
    neighborhood_clustering,
    nonparametric_predict,
    parse_run_config,
    refresh_centroids,
    rotated_gaussians_benchmark,
    run,
    weighted_contrastive,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DivergenceError",
    "LossToggles",
    "RunConfig",
    "ShapeError",
    "ShiftConfig",
    "TrainConfig",
    "assign_labels",
    "elr",
    "inject_label_noise",
    "make_gaussian_domains",
    "neighborhood_clustering",
    "nonparametric_predict",
    "parse_run_config",
    "refresh_centroids",
    "rotated_gaussians_benchmark",
    "run",
    "weighted_contrastive",
]
