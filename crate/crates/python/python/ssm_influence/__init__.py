"""Token influence scores for selective state-space language models."""

from ._native import (
    Model,
    basic_stats,
    controllability_rank,
    discretize_zoh,
    influence_scores,
    observability_rank,
    spearman_rho,
)

__all__ = [
    "Model",
    "basic_stats",
    "controllability_rank",
    "discretize_zoh",
    "influence_scores",
    "observability_rank",
    "spearman_rho",
]
