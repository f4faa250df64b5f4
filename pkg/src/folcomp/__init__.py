"""folcomp: curvature bounds and diffusion checks for homogeneous foliations."""

__version__ = "0.1.0"

from .models import (  # noqa: F401
    BUNDLED_MODELS,
    FoliatedModel,
    ModelSpec,
    ad_star,
    bracket,
    bundled_model,
    bundled_path,
    bundled_spec,
    canonical_variation,
    load_model,
    load_spec,
    split,
    validate_model,
)
