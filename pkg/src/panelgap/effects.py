"""Dynamic effects, window averages, horizon decomposition and pre-period diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mc import McFit
from .panel import ObservedSets, PanelMatrix, PeriodIndex

DEFAULT_IMPACT = 3
DEFAULT_ADJUSTMENT_END = 12
MIN_PRE_FOR_DIAGNOSTICS = 8


@dataclass
class EffectPath:
    periods: tuple[PeriodIndex, ...]
    tau: np.ndarray
    ate: float
    observed: np.ndarray
    counterfactual: np.ndarray
    pre_periods: tuple[PeriodIndex, ...]
    pre_residuals: np.ndarray
    pre_mse: float
    pre_mean: float

    def to_dict(self) -> dict:
        return {
            "periods": [str(p) for p in self.periods],
            "tau": self.tau.tolist(),
            "observed": self.observed.tolist(),
            "counterfactual": self.counterfactual.tolist(),
            "ate": self.ate,
            "pre_mse": self.pre_mse,
            "pre_mean": self.pre_mean,
            "pre_periods": [str(p) for p in self.pre_periods],
            "pre_residuals": self.pre_residuals.tolist(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "tau"])
        for p, v in zip(self.periods, self.tau):
            w.writerow([str(p), repr(float(v))])
        return buf.getvalue()


def effect_path(panel: PanelMatrix, sets: ObservedSets, fit: McFit) -> EffectPath:
    """Observed minus imputed outcome for each treated period, plus pre-period residuals."""
    if fit.l.shape != panel.shape or sets.omega.shape != panel.shape:
        raise ValueError("fit, observed sets and panel have different shapes")
    miss = sets.missing_periods
    if fit.imputed.shape != miss.shape:
        raise ValueError("fit was produced for a different treatment block")
    i = sets.treated
    observed = panel.values[i, miss]
    tau = observed - fit.imputed
    pre = sets.pre_periods
    fitted = fit.fitted()[i, pre]
    delta = panel.values[i, pre] - fitted
    return EffectPath(
        periods=tuple(panel.periods[k] for k in miss),
        tau=tau,
        ate=float(np.mean(tau)),
        observed=observed,
        counterfactual=fit.imputed.copy(),
        pre_periods=tuple(panel.periods[k] for k in pre),
        pre_residuals=delta,
        pre_mse=float(np.mean(delta**2)) if delta.size else float("nan"),
        pre_mean=float(np.mean(delta)) if delta.size else float("nan"),
    )


def window_ate(path: EffectPath, window: range) -> float:
    """Mean effect over a window of post-period positions (0 = first treated period)."""
    n = len(path.tau)
    if len(window) == 0:
        raise ValueError("empty window")
    if window.start < 0 or window.stop > n or window.step != 1:
        raise ValueError(f"window {window.start}..{window.stop - 1} outside post period 0..{n - 1}")
    return float(np.mean(path.tau[window.start : window.stop]))


@dataclass(frozen=True)
class HorizonWindows:
    impact: range
    adjustment: range
    persistence: range

    def __post_init__(self) -> None:
        ws = (self.impact, self.adjustment, self.persistence)
        if any(len(w) == 0 or w.step != 1 for w in ws):
            raise ValueError("horizon windows must be non-empty contiguous ranges")
        if self.impact.start != 0 or self.impact.stop != self.adjustment.start or self.adjustment.stop != self.persistence.start:
            raise ValueError("horizon windows must be ordered, disjoint and contiguous from the first post period")

    @classmethod
    def default(cls, n_post: int) -> "HorizonWindows":
        """Impact months 1-3, adjustment 4-12, persistence 13 onward."""
        if n_post < DEFAULT_ADJUSTMENT_END + 1:
            raise ValueError(f"default windows need >= {DEFAULT_ADJUSTMENT_END + 1} post periods, got {n_post}")
        return cls.from_sizes(DEFAULT_IMPACT, DEFAULT_ADJUSTMENT_END - DEFAULT_IMPACT, n_post - DEFAULT_ADJUSTMENT_END)

    @classmethod
    def from_sizes(cls, impact: int, adjustment: int, persistence: int) -> "HorizonWindows":
        a = impact
        b = a + adjustment
        return cls(range(0, a), range(a, b), range(b, b + persistence))

    @classmethod
    def parse(cls, text: str, n_post: int) -> "HorizonWindows":
        """Parse ``"i:a:p"`` window sizes; ``p`` may be ``*`` for the remainder."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"windows must look like i:a:p, got {text!r}")
        i, a = int(parts[0]), int(parts[1])
        p = n_post - i - a if parts[2] in ("*", "") else int(parts[2])
        return cls.from_sizes(i, a, p)

    @property
    def total(self) -> int:
        return self.persistence.stop

    def to_dict(self) -> dict:
        return {k: [w.start, w.stop - 1] for k, w in zip(("impact", "adjustment", "persistence"), (self.impact, self.adjustment, self.persistence))}


def horizon_decomposition(path: EffectPath, windows: HorizonWindows) -> tuple[float, float, float]:
    if windows.total != len(path.tau):
        raise ValueError(f"windows cover {windows.total} periods but the post period has {len(path.tau)}")
    return (
        window_ate(path, windows.impact),
        window_ate(path, windows.adjustment),
        window_ate(path, windows.persistence),
    )


@dataclass
class PreFitReport:
    pre_mean: float
    pre_mse: float
    autocorr_lag1: float
    p_value: float
    n_flips: int
    seed: int
    converged: bool | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sign_flip_pvalue(resid: np.ndarray, n_flips: int, seed: int) -> float:
    """Permutation p-value for ``|mean(resid)|`` under random sign flips."""
    resid = np.asarray(resid, dtype=float)
    observed = abs(resid.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n_flips, resid.size))
    flipped = np.abs(signs @ resid) / resid.size
    # Relative slack so exact ties (e.g. all-zero residuals) count as extreme.
    count = int(np.sum(flipped >= observed * (1 - 1e-12)))
    return (1 + count) / (1 + n_flips)


def pre_fit_report(path: EffectPath, fit: McFit | None = None, n_flips: int = 2000, seed: int = 0) -> PreFitReport:
    """Mean, MSE, lag-1 autocorrelation and sign-flip test of the pre-period residuals."""
    d = path.pre_residuals
    if d.size < MIN_PRE_FOR_DIAGNOSTICS:
        raise ValueError(f"need >= {MIN_PRE_FOR_DIAGNOSTICS} pre-periods, got {d.size}")
    centered = d - d.mean()
    denom = float(centered @ centered)
    rho = float(centered[1:] @ centered[:-1]) / denom if denom > 0 else 0.0
    return PreFitReport(
        pre_mean=float(d.mean()),
        pre_mse=float(np.mean(d**2)),
        autocorr_lag1=rho,
        p_value=sign_flip_pvalue(d, n_flips, seed),
        n_flips=n_flips,
        seed=seed,
        converged=None if fit is None else fit.converged,
    )
