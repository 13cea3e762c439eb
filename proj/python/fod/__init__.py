# SPDX-License-Identifier: Apache-2.0
"""Correlation-supervised transformer anomaly detection on synthetic textures."""

from ._core import (
    Config,
    ConfigError,
    DimensionError,
    EmptyBankError,
    FodError,
    FormatError,
    MetricError,
    NumericError,
    UsageError,
    auroc,
    combine_rec_div,
    coreset_indices,
    correlation_entropy,
    decode_tensor,
    encode_tensor,
    extract_features,
    generate_dataset,
    read_tensor,
    run,
    symmetric_kl,
    target_correlation,
    write_tensor,
)

__all__ = [
    "Config",
    "ConfigError",
    "DimensionError",
    "EmptyBankError",
    "FodError",
    "FormatError",
    "MetricError",
    "NumericError",
    "UsageError",
    "auroc",
    "combine_rec_div",
    "coreset_indices",
    "correlation_entropy",
    "decode_tensor",
    "encode_tensor",
    "extract_features",
    "generate_dataset",
    "read_tensor",
    "run",
    "symmetric_kl",
    "target_correlation",
    "write_tensor",
]
