"""Bitemporal semantic change detection with long-range scan blocks and
text-prompt semantic gating."""

from .types import (
    IGNORE_LABEL,
    BitemporalSample,
    ClassTaxonomy,
    PromptRecord,
    default_taxonomy,
    validate_sample,
)

__version__ = "0.1.0"

__all__ = [
    "IGNORE_LABEL",
    "BitemporalSample",
    "ClassTaxonomy",
    "PromptRecord",
    "default_taxonomy",
    "validate_sample",
    "__version__",
]
