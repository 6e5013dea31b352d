"""Preference-data pipeline: prompt and pair filters, reward model, best-of-n."""

from ._prefpipe import (  # noqa: F401
    ConfigError,
    Error,
    IntegrityError,
    NumericError,
    ValidationError,
    bon_gain,
    bon_select,
    filter_keep,
    funnel,
    keep_prompt,
    neg_log_sigmoid,
    run_pipeline,
    train_pairs,
)

__all__ = [
    "ConfigError",
    "Error",
    "IntegrityError",
    "NumericError",
    "ValidationError",
    "bon_gain",
    "bon_select",
    "filter_keep",
    "funnel",
    "keep_prompt",
    "neg_log_sigmoid",
    "run_pipeline",
    "train_pairs",
]
