"""Heterogeneous federated LoRA simulator."""

from ._hafl import (
    ConfigError,
    ImportanceTracker,
    LoraAdapter,
    UploadPayload,
    aggregate_adaptive,
    aggregate_zero_padding,
    config_keys,
    extract_upload,
    init_adapter,
    parse_config,
    rank1_component,
    run,
    simulate,
    topk_indices,
    trained_count,
    upload_size,
)

__all__ = [
    "ConfigError",
    "ImportanceTracker",
    "LoraAdapter",
    "UploadPayload",
    "aggregate_adaptive",
    "aggregate_zero_padding",
    "config_keys",
    "extract_upload",
    "init_adapter",
    "parse_config",
    "rank1_component",
    "run",
    "simulate",
    "topk_indices",
    "trained_count",
    "upload_size",
]
