"""One full estimation run: optional cross-validation, fit, effect path."""

from __future__ import annotations

from dataclasses import dataclass

from . import cv as cv_mod
from . import mc
from .effects import EffectPath, effect_path
from .panel import ObservedSets, PanelMatrix, TreatmentAssignment, build_observed_sets


@dataclass
class Estimate:
    panel: PanelMatrix
    treat: TreatmentAssignment
    sets: ObservedSets
    config: mc.McConfig
    fit: mc.McFit
    path: EffectPath
    cv: cv_mod.CvReport | None = None

    @property
    def ate(self) -> float:
        return self.path.ate


def estimate(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    config: mc.McConfig,
    cv_plan: cv_mod.CvPlan | None = None,
    one_se: bool = False,
    jobs: int = 1,
) -> Estimate:
    """Fit the treated unit's counterfactual; with ``cv_plan`` the weight is cross-validated first."""
    report = None
    if cv_plan is not None:
        report = cv_mod.select_lambda(panel, treat, cv_plan, config, jobs=jobs)
        config = config.with_lambda(report.one_se_lambda if one_se else report.selected_lambda)
    sets = build_observed_sets(panel, treat)
    res = mc.fit(panel, sets, config)
    return Estimate(panel, treat, sets, config, res, effect_path(panel, sets, res), report)
