"""Placebo-based inference: in-space and in-time placebos, p-values, resampling summaries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from . import cv as cv_mod
from . import mc
from .panel import PanelMatrix, PeriodIndex, TreatmentAssignment
from .pipeline import estimate

IN_SPACE = "in_space"
IN_TIME = "in_time"
SDID_SPACE = "sdid_in_space"

DEFAULT_PSEUDO_STEP = 6
BOOT_SIZES = (100, 1000, 10000)


class InfeasiblePseudoDateError(ValueError):
    pass


def derive_seed(root: int, index: int) -> int:
    """Per-run seed that depends only on the root seed and the run index."""
    return int(np.random.SeedSequence([int(root), int(index)]).generate_state(1)[0])


def placebo_pvalue(effects: Sequence[float], observed: float) -> float:
    """``(1 + #{|placebo| >= |observed|}) / (1 + n)``."""
    e = np.abs(np.asarray(effects, dtype=float))
    return (1 + int(np.sum(e >= abs(observed)))) / (1 + e.size)


@dataclass
class PlaceboDistribution:
    kind: str
    labels: list[str]
    effects: np.ndarray
    observed_ate: float
    p_value: float
    ci_low: float
    ci_high: float
    n_runs: int
    n_failed: int = 0
    seeds: list[int] = field(default_factory=list)
    paths: dict[str, list[float]] = field(default_factory=dict, repr=False)

    @classmethod
    def from_effects(
        cls,
        kind: str,
        labels: Sequence[str],
        effects: Sequence[float],
        observed: float,
        n_failed: int = 0,
        seeds: Sequence[int] = (),
        paths: dict | None = None,
    ) -> "PlaceboDistribution":
        e = np.asarray(effects, dtype=float)
        if e.size == 0:
            raise ValueError("no successful placebo runs")
        lo, hi = np.percentile(e, [2.5, 97.5])
        return cls(
            kind=kind,
            labels=list(labels),
            effects=e,
            observed_ate=float(observed),
            p_value=placebo_pvalue(e, observed),
            ci_low=float(lo),
            ci_high=float(hi),
            n_runs=int(e.size),
            n_failed=n_failed,
            seeds=[int(s) for s in seeds],
            paths=dict(paths or {}),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "observed_ate": self.observed_ate,
            "p_value": self.p_value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_runs": self.n_runs,
            "n_failed": self.n_failed,
            "runs": [
                {"label": lab, "effect": float(v), **({"seed": self.seeds[k]} if self.seeds else {})}
                for k, (lab, v) in enumerate(zip(self.labels, self.effects))
            ],
        }

    def paths_csv(self) -> str:
        lines = ["run,step,tau"]
        for lab, path in self.paths.items():
            for k, v in enumerate(path):
                lines.append(f"{_csv_field(lab)},{k},{float(v)!r}")
        return "\n".join(lines) + "\n"


def _csv_field(text: str) -> str:
    return f'"{text}"' if ("," in text or '"' in text) else text


def _run(fn: Callable, *args):
    try:
        return fn(*args)
    except (mc.IdentificationError, cv_mod.CvError) as exc:
        return exc


def _collect(kind, labels, results, observed, seeds):
    ok_labels, effects, paths, ok_seeds = [], [], {}, []
    failed = 0
    for lab, res, s in zip(labels, results, seeds):
        if isinstance(res, Exception):
            failed += 1
            continue
        ate, tau = res
        ok_labels.append(lab)
        effects.append(ate)
        ok_seeds.append(s)
        paths[lab] = list(map(float, tau))
    if failed:
        warnings.warn(f"{failed} {kind} placebo run(s) failed identification and were excluded", stacklevel=3)
    return PlaceboDistribution.from_effects(kind, ok_labels, effects, observed, failed, ok_seeds, paths)


def _space_run(panel, unit, t0, config, cv_plan):
    est = estimate(panel, TreatmentAssignment(unit, t0), config, cv_plan=cv_plan)
    return est.ate, est.path.tau


def in_space_placebos(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    config: mc.McConfig,
    observed_ate: float | None = None,
    cv_plan: cv_mod.CvPlan | None = None,
    seed: int = 0,
    jobs: int = 1,
) -> PlaceboDistribution:
    """Re-run the estimator with each donor as the treated unit at the true date.

    The true treated unit is removed from every placebo panel. ``cv_plan``
    re-selects the weight inside each placebo run; by default ``config`` is
    reused as is.
    """
    donors = [u for u in panel.units if u != treat.treated_unit]
    if len(donors) < 2:
        raise ValueError("in-space placebos need at least 2 donors")
    if observed_ate is None:
        observed_ate = estimate(panel, treat, config, cv_plan=cv_plan).ate
    pool = panel.drop_units([treat.treated_unit])
    seeds = [derive_seed(seed, k) for k in range(len(donors))]
    results = Parallel(n_jobs=jobs)(
        delayed(_run)(_space_run, pool, d, treat.t0, config, cv_plan) for d in donors
    )
    return _collect(IN_SPACE, donors, results, observed_ate, seeds)


def pseudo_date_bounds(panel: PanelMatrix, treat: TreatmentAssignment, horizon: int, min_train: int) -> tuple[int, int]:
    """Inclusive range of feasible pseudo-treatment positions."""
    t0 = treat.t0_index(panel)
    return min_train, t0 - horizon


def default_pseudo_dates(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    horizon: int,
    min_train: int = cv_mod.DEFAULT_MIN_TRAIN,
    step: int = DEFAULT_PSEUDO_STEP,
) -> list[PeriodIndex]:
    lo, hi = pseudo_date_bounds(panel, treat, horizon, min_train)
    if hi < lo:
        raise InfeasiblePseudoDateError(
            f"no feasible pseudo-dates: need t0 position >= min_train {min_train} + horizon {horizon}"
        )
    return [panel.periods[k] for k in range(lo, hi + 1, step)]


def _time_run(panel, unit, pseudo, horizon, config, cv_plan):
    est = estimate(panel, TreatmentAssignment(unit, pseudo), config, cv_plan=cv_plan)
    tau = est.path.tau[:horizon]
    return float(np.mean(tau)), tau


def in_time_placebos(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    pseudo_dates: Sequence[PeriodIndex | str] | None,
    config: mc.McConfig,
    horizon: int | None = None,
    min_train: int = cv_mod.DEFAULT_MIN_TRAIN,
    observed_ate: float | None = None,
    cv_plan: cv_mod.CvPlan | None = None,
    seed: int = 0,
    jobs: int = 1,
) -> PlaceboDistribution:
    """Pretend treatment started at each pseudo-date inside the pre-period.

    The panel is cut just before the true treatment date; each pseudo-effect
    is the mean gap over the ``horizon`` periods following its pseudo-date.
    """
    t0 = treat.t0_index(panel)
    n_post = len(panel.periods) - t0
    if horizon is None:
        horizon = min(n_post, cv_mod.MAX_DEFAULT_HORIZON)
    if pseudo_dates is None:
        pseudo_dates = default_pseudo_dates(panel, treat, horizon, min_train)
    lo, hi = pseudo_date_bounds(panel, treat, horizon, min_train)
    dates = []
    for p in pseudo_dates:
        p = PeriodIndex.parse(p) if isinstance(p, str) else p
        k = panel.periods[0].distance(p)
        if not lo <= k <= hi:
            first = panel.periods[lo] if 0 <= lo < len(panel.periods) else f"position {lo}"
            last = panel.periods[hi] if 0 <= hi < len(panel.periods) else f"position {hi}"
            raise InfeasiblePseudoDateError(
                f"pseudo-date {p} infeasible: must lie in {first}..{last} "
                f"(min_train {min_train}, horizon {horizon}, t0 {treat.t0})"
            )
        dates.append(p)
    if not dates:
        raise InfeasiblePseudoDateError("no pseudo-dates given")
    if observed_ate is None:
        observed_ate = estimate(panel, treat, config, cv_plan=cv_plan).ate
    cut = panel.truncate(t0)
    seeds = [derive_seed(seed, k) for k in range(len(dates))]
    results = Parallel(n_jobs=jobs)(
        delayed(_run)(_time_run, cut, treat.treated_unit, p, horizon, config, cv_plan) for p in dates
    )
    return _collect(IN_TIME, [str(p) for p in dates], results, observed_ate, seeds)


@dataclass
class ResampleSummary:
    n_boot: int
    seed: int
    se_location: float
    se_p_value: float
    degenerate: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def resample_summary(dist: PlaceboDistribution, n_boot: int, seed: int) -> ResampleSummary:
    """Bootstrap the placebo effects with replacement.

    Reports the standard error of the placebo mean and of the p-value
    recomputed on each resample.
    """
    e = np.asarray(dist.effects, dtype=float)
    if e.size < 2:
        raise ValueError("resampling needs at least 2 placebo runs")
    if np.all(e == e[0]):
        return ResampleSummary(n_boot, seed, 0.0, 0.0, True)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, e.size, size=(n_boot, e.size))
    draws = e[idx]
    loc = draws.mean(axis=1)
    pv = (1 + np.sum(np.abs(draws) >= abs(dist.observed_ate), axis=1)) / (1 + e.size)
    return ResampleSummary(n_boot, seed, float(loc.std(ddof=1)), float(pv.std(ddof=1)), False)


def stability_table(dist: PlaceboDistribution, seed: int, sizes: Sequence[int] = BOOT_SIZES) -> list[ResampleSummary]:
    """``resample_summary`` at each bootstrap size, with seeds derived from ``seed``."""
    return [resample_summary(dist, n, derive_seed(seed, k)) for k, n in enumerate(sizes)]
