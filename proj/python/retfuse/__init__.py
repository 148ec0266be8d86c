"""Python bindings for the retfuse C++ core."""

from ._retfuse import (
    RetfuseError,
    ablate,
    augment,
    backbone_registry,
    cross_entropy,
    expand_metadata,
    format4,
    generate_synthetic,
    inverse_augment_op,
    load_manifest,
    minmax_normalize,
    predict,
    render_tables,
    report,
    row_average,
    stage_diff,
    synth,
    train,
)

__all__ = [
    "RetfuseError",
    "ablate",
    "augment",
    "backbone_registry",
    "cross_entropy",
    "expand_metadata",
    "format4",
    "generate_synthetic",
    "inverse_augment_op",
    "load_manifest",
    "minmax_normalize",
    "predict",
    "render_tables",
    "report",
    "row_average",
    "stage_diff",
    "synth",
    "train",
]
