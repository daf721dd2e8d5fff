"""Rolling-origin cross-validation of the nuclear-norm weight on the pre-treatment block."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import mc
from .panel import PanelMatrix, TreatmentAssignment, build_observed_sets

DEFAULT_GRID = tuple(float(x) for x in np.logspace(-5, -1, 12))
DEFAULT_FOLDS = 4
DEFAULT_MIN_TRAIN = 60
MAX_DEFAULT_HORIZON = 24


class CvError(ValueError):
    pass


@dataclass(frozen=True)
class CvPlan:
    lambda_grid: tuple[float, ...] = DEFAULT_GRID
    horizon: int = MAX_DEFAULT_HORIZON
    n_folds: int = DEFAULT_FOLDS
    min_train: int = DEFAULT_MIN_TRAIN

    def __post_init__(self) -> None:
        grid = tuple(float(x) for x in self.lambda_grid)
        if not grid:
            raise CvError("lambda grid is empty")
        if any(x < 0 or not np.isfinite(x) for x in grid):
            raise CvError("lambda grid values must be finite and >= 0")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise CvError("lambda grid must be strictly ascending")
        if self.horizon < 1 or self.n_folds < 1 or self.min_train < 1:
            raise CvError("horizon, n_folds and min_train must be >= 1")
        object.__setattr__(self, "lambda_grid", grid)

    @classmethod
    def default_for(cls, n_post: int, **kw) -> "CvPlan":
        kw.setdefault("horizon", min(n_post, MAX_DEFAULT_HORIZON))
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "lambda_grid": list(self.lambda_grid),
            "horizon": self.horizon,
            "n_folds": self.n_folds,
            "min_train": self.min_train,
        }


@dataclass(frozen=True)
class Fold:
    """``train_end`` training periods, then validation on ``validation`` (0-based positions)."""

    train_end: int
    validation: range


def make_folds(pre_periods: int, plan: CvPlan) -> list[Fold]:
    """Validation windows tiling backward from the last pre-treatment period."""
    need = plan.min_train + plan.n_folds * plan.horizon
    if pre_periods < need:
        raise CvError(
            f"{pre_periods} pre-treatment periods are too few: min_train {plan.min_train} + "
            f"{plan.n_folds} folds x horizon {plan.horizon} requires >= {need}"
        )
    folds = []
    for k in range(plan.n_folds):
        end = pre_periods - k * plan.horizon
        start = end - plan.horizon
        folds.append(Fold(train_end=start, validation=range(start, end)))
    return folds


@dataclass
class CvReport:
    lambda_grid: tuple[float, ...]
    folds: list[Fold]
    mse: np.ndarray  # (n_lambda, n_folds)
    mean_mse: np.ndarray
    selected_lambda: float
    one_se_lambda: float
    plan: CvPlan = field(repr=False)
    lambda_scale: str = mc.SCALE_ABSOLUTE

    def to_dict(self) -> dict:
        def clean(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "plan": self.plan.to_dict(),
            "lambda_scale": self.lambda_scale,
            "folds": [
                {"train_end": f.train_end, "validation": [f.validation.start, f.validation.stop - 1]}
                for f in self.folds
            ],
            "mse": [[clean(v) for v in row] for row in self.mse],
            "mean_mse": [clean(v) for v in self.mean_mse],
            "selected_lambda": self.selected_lambda,
            "one_se_lambda": self.one_se_lambda,
        }


def _fold_path(panel: PanelMatrix, treat_unit: str, fold: Fold, config: mc.McConfig, grid) -> list[float]:
    """Validation MSE for every grid value on one fold, warm-started from large to small weights."""
    sub = panel.truncate(fold.validation.stop)
    t = TreatmentAssignment(treat_unit, sub.periods[fold.train_end])
    sets = build_observed_sets(sub, t)
    actual = sub.values[sets.treated, sets.missing_periods]
    out = [float("nan")] * len(grid)
    warm = None
    for a in reversed(range(len(grid))):
        try:
            res = mc.fit(sub, sets, config.with_lambda(grid[a]), warm_start=warm)
        except mc.NonFiniteObjectiveError:
            warm = None
            continue
        warm = res.l
        out[a] = float(np.mean((actual - res.imputed) ** 2))
    return out


def select_lambda(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    plan: CvPlan,
    config_template: mc.McConfig,
    jobs: int = 1,
) -> CvReport:
    """Score every grid value on every fold and pick the lowest mean validation MSE.

    Only the treated unit's validation window is hidden; everything from the
    true treatment date on is dropped before fitting. Ties go to the larger
    weight.
    """
    t0 = treat.t0_index(panel)
    folds = make_folds(t0, plan)
    assert max(f.validation.stop for f in folds) <= t0

    paths = Parallel(n_jobs=jobs)(
        delayed(_fold_path)(panel, treat.treated_unit, f, config_template, plan.lambda_grid) for f in folds
    )
    mse = np.array(paths, dtype=float).T

    finite_rows = np.all(np.isfinite(mse), axis=1)
    if not finite_rows.any():
        bad = plan.lambda_grid[int(np.argmax(~np.isfinite(mse).all(axis=1)))]
        raise FloatingPointError(f"every cross-validation fit was non-finite (e.g. lambda={bad})")
    mean = np.where(finite_rows, mse.mean(axis=1), np.nan)
    grid = np.asarray(plan.lambda_grid)
    best = float(np.nanmin(mean))
    near = finite_rows & np.isclose(mean, best, rtol=1e-9, atol=0.0)
    selected = float(grid[near].max())

    k = int(np.flatnonzero(near)[-1])
    se = float(np.std(mse[k], ddof=1) / np.sqrt(len(folds))) if len(folds) > 1 else 0.0
    within = finite_rows & (mean <= best + se)
    one_se = float(grid[within].max())
    return CvReport(
        lambda_grid=plan.lambda_grid,
        folds=folds,
        mse=mse,
        mean_mse=mean,
        selected_lambda=selected,
        one_se_lambda=one_se,
        plan=plan,
        lambda_scale=config_template.lambda_scale,
    )
