"""Counterfactual estimation for a single treated unit in a macro panel.

Low-rank matrix completion with two-way fixed effects, rolling-origin
cross-validation, placebo inference and a synthetic difference-in-differences
comparison.
"""

__version__ = "0.1.0"

from .panel import (  # noqa: E402
    DuplicateCellError,
    ObservedSets,
    PanelFormatError,
    PanelMatrix,
    PeriodIndex,
    TreatmentAssignment,
    UnknownUnitError,
    build_observed_sets,
    load_panel,
)
from .mc import McConfig, McFit, fit, impute_counterfactual  # noqa: E402
from .pipeline import Estimate, estimate  # noqa: E402

__all__ = [
    "DuplicateCellError",
    "Estimate",
    "McConfig",
    "McFit",
    "ObservedSets",
    "PanelFormatError",
    "PanelMatrix",
    "PeriodIndex",
    "TreatmentAssignment",
    "UnknownUnitError",
    "build_observed_sets",
    "estimate",
    "fit",
    "impute_counterfactual",
    "load_panel",
]
