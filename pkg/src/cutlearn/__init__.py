"""cutlearn: censoring unbiased outcome transformations and HTE learners.

The package converts right-censored (optionally competing-risks) data into
transformed outcomes whose conditional means equal counterfactual survival
functionals, then feeds them to a catalog of heterogeneous-treatment-effect
learners with cross-fitting, convex ensemble selection, simulation
generators, and evaluation metrics.
"""

from .curves import CurveBundle, NuisanceSet
from .survival import (
    CifCurve,
    CumulativeHazard,
    Observation,
    StepFunction,
    SurvivalCurve,
    cif_from_hazards,
    martingale_integral,
    product_limit,
    restricted_integral,
    step_eval,
    step_left_limit,
)
from .transforms import (
    CutKind,
    Diagnostics,
    EstimandSpec,
    TransformedSample,
    cut_separable,
    cut_value,
    cut_values,
    if_transform,
    if_transform_values,
    minimization_target,
    separable_cut_values,
)

__version__ = "0.1.0"

__all__ = [
    "CurveBundle",
    "NuisanceSet",
    "CifCurve",
    "CumulativeHazard",
    "Observation",
    "StepFunction",
    "SurvivalCurve",
    "cif_from_hazards",
    "martingale_integral",
    "product_limit",
    "restricted_integral",
    "step_eval",
    "step_left_limit",
    "CutKind",
    "Diagnostics",
    "EstimandSpec",
    "TransformedSample",
    "cut_separable",
    "cut_value",
    "cut_values",
    "if_transform",
    "if_transform_values",
    "minimization_target",
    "separable_cut_values",
    "__version__",
]
