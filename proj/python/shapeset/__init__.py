"""Part-based shape generation: SSMs, label codebook and set diffusion."""

from ._core import (
    Error,
    Model,
    NumericalError,
    PartSSM,
    ShapeLatent,
    ValidationError,
    chamfer,
    cov,
    emd,
    fit_ssm,
    forward_noise,
    generate_dataset,
    kl_from_moments,
    load_checkpoint,
    load_ssm,
    mmd,
    nna,
    normalize_to_unit_cube,
    train_model,
    write_synthetic_dataset,
)

__all__ = [
    "Error",
    "Model",
    "NumericalError",
    "PartSSM",
    "ShapeLatent",
    "ValidationError",
    "chamfer",
    "cov",
    "emd",
    "fit_ssm",
    "forward_noise",
    "generate_dataset",
    "kl_from_moments",
    "load_checkpoint",
    "load_ssm",
    "mmd",
    "nna",
    "normalize_to_unit_cube",
    "train_model",
    "write_synthetic_dataset",
]
