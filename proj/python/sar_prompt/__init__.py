"""Similarity alignment regularization for prompt tuning."""
import json

from . import _core
from ._core import (
    DimensionError,
    FormatError,
    IoError,
    NumericError,
    ParameterError,
    cosine_matrix,
    full_distribution,
    gradcheck,
    harmonic_mean,
    kl_rows,
    rank_disagreements,
    sample_index_family,
    sampled_distribution,
    train_synthetic,
)


def analyze(learned_path, hand_path, tau=0.01):
    return json.loads(_core.analyze(learned_path, hand_path, tau))


__all__ = [
    "DimensionError",
    "FormatError",
    "IoError",
    "NumericError",
    "ParameterError",
    "analyze",
    "cosine_matrix",
    "full_distribution",
    "gradcheck",
    "harmonic_mean",
    "kl_rows",
    "rank_disagreements",
    "sample_index_family",
    "sampled_distribution",
    "train_synthetic",
]
