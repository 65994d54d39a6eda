"""Python access to the image-text training laboratory."""

from ._core import (
    ConfigError,
    ContractError,
    DataError,
    DualEncoder,
    IoError,
    NumericError,
    UsageError,
    bench,
    class_prompt,
    config_keys,
    format_config,
    generate_dataset,
    geometry,
    gradcheck,
    lr_at,
    read_checkpoint,
    read_metrics,
    retrieval_recall,
    train,
    vocabulary,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DualEncoder",
    "IoError",
    "NumericError",
    "UsageError",
    "bench",
    "class_prompt",
    "config_keys",
    "format_config",
    "generate_dataset",
    "geometry",
    "gradcheck",
    "lr_at",
    "read_checkpoint",
    "read_metrics",
    "retrieval_recall",
    "train",
    "vocabulary",
]
