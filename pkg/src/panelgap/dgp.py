"""Seeded latent-factor panel generator with known counterfactuals."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .panel import PanelMatrix, PeriodIndex, TreatmentAssignment, period_range

# Treated unit followed by the default donor pool.
DEFAULT_UNITS = (
    "Israel",
    "Australia",
    "Canada",
    "Denmark",
    "Japan",
    "New Zealand",
    "Norway",
    "South Korea",
    "Sweden",
    "Switzerland",
    "United Kingdom",
    "United States",
)

MAX_HUMP_FLOOR = 0.6


@dataclass(frozen=True)
class EffectProfile:
    """Treatment effect added to the treated unit's post-period outcomes.

    ``kind`` is ``"zero"``, ``"constant"`` (uses ``tau``) or ``"hump"``
    (uses ``peak``, ``peak_time``, ``decay`` and ``floor``).
    """

    kind: str = "constant"
    tau: float = 0.7
    peak: float = 0.8
    peak_time: int = 12
    decay: float = 0.5
    floor: float = 0.5

    @classmethod
    def zero(cls) -> "EffectProfile":
        return cls(kind="zero", tau=0.0)

    @classmethod
    def constant(cls, tau: float) -> "EffectProfile":
        return cls(kind="constant", tau=tau)

    @classmethod
    def hump(cls, peak: float = 0.8, peak_time: int = 12, decay: float = 0.5, floor: float = 0.5):
        return cls(kind="hump", peak=peak, peak_time=peak_time, decay=decay, floor=floor)

    def path(self, n_post: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(n_post)
        if self.kind == "constant":
            return np.full(n_post, float(self.tau))
        if self.kind == "hump":
            return hump_profile(self.peak, self.peak_time, self.decay, n_post, floor=self.floor)
        raise ValueError(f"unknown effect profile {self.kind!r}")


def hump_profile(peak: float, peak_time: int, decay: float, n_post: int, floor: float = 0.5) -> np.ndarray:
    """Rise linearly to ``peak`` at post month ``peak_time``, then decay geometrically.

    After the peak the effect approaches ``peak * (1 - floor)`` at rate
    ``decay`` per period; ``floor`` is capped so the effect never drops
    below ``0.4 * peak``.
    """
    if peak_time < 1:
        raise ValueError("peak_time must be >= 1")
    if not 0 <= decay < 1:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    if not 0 <= floor <= MAX_HUMP_FLOOR:
        raise ValueError(f"floor must lie in [0, {MAX_HUMP_FLOOR}], got {floor}")
    k = np.arange(1, n_post + 1, dtype=float)
    rise = peak * k / peak_time
    base = peak * (1.0 - floor)
    fall = base + (peak - base) * (1.0 - decay) ** (k - peak_time)
    return np.where(k <= peak_time, rise, fall)


@dataclass(frozen=True)
class DgpSpec:
    n_units: int = 12
    n_periods: int = 212
    t0: int = 189
    rank: int = 2
    factor_persistence: float = 0.9
    loading_scale: float = 1.0
    fe_scale: float = 1.0
    noise_sigma: float = 0.1
    effect: EffectProfile = field(default_factory=EffectProfile)
    seed: int = 7
    start: str = "2008-01"

    def __post_init__(self) -> None:
        if self.n_units < 2 or self.n_periods < 3:
            raise ValueError("need at least 2 units and 3 periods")
        if not 0 <= self.rank <= min(self.n_units, self.n_periods):
            raise ValueError(f"rank {self.rank} outside [0, min(n_units, n_periods)]")
        if not 1 <= self.t0 < self.n_periods:
            raise ValueError(f"t0 {self.t0} must be an interior period index")
        if not 0 <= self.factor_persistence < 1:
            raise ValueError("factor_persistence must lie in [0, 1)")
        if self.noise_sigma < 0 or self.loading_scale < 0 or self.fe_scale < 0:
            raise ValueError("scales must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    y0: np.ndarray
    low_rank: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    effect: np.ndarray
    t0: int

    @property
    def y0_missing(self) -> np.ndarray:
        """True untreated outcomes of the treated unit over the post period."""
        return self.y0[0, self.t0 :]

    def to_dict(self) -> dict:
        return {
            "t0_index": self.t0,
            "effect": self.effect.tolist(),
            "y0_missing": self.y0_missing.tolist(),
            "ate": float(self.effect.mean()),
        }


def unit_names(n: int) -> tuple[str, ...]:
    extra = tuple(f"donor{k:02d}" for k in range(len(DEFAULT_UNITS), n))
    return (DEFAULT_UNITS + extra)[:n]


def generate(spec: DgpSpec) -> tuple[PanelMatrix, TreatmentAssignment, GroundTruth]:
    """Draw a panel ``Y(0) = alpha + gamma + Lambda f + eps`` and add the effect to unit 0."""
    rng = np.random.default_rng(spec.seed)
    n, t, r = spec.n_units, spec.n_periods, spec.rank
    alpha = rng.normal(0.0, spec.fe_scale, n)
    gamma = rng.normal(0.0, spec.fe_scale, t)
    loadings = rng.normal(0.0, spec.loading_scale, (n, r))
    rho = spec.factor_persistence
    shocks = rng.normal(0.0, 1.0, (r, t))
    factors = np.empty((r, t))
    if t:
        factors[:, 0] = shocks[:, 0]
    innov = np.sqrt(1.0 - rho**2)
    for k in range(1, t):
        factors[:, k] = rho * factors[:, k - 1] + innov * shocks[:, k]
    noise = rng.normal(0.0, 1.0, (n, t)) * spec.noise_sigma
    low_rank = loadings @ factors
    y0 = alpha[:, None] + gamma[None, :] + low_rank + noise

    effect = spec.effect.path(t - spec.t0)
    y = y0.copy()
    y[0, spec.t0 :] += effect

    start = PeriodIndex.parse(spec.start)
    periods = period_range(start, start + (t - 1))
    units = unit_names(n)
    panel = PanelMatrix(units, periods, y, np.ones((n, t), dtype=bool))
    treat = TreatmentAssignment(units[0], periods[spec.t0])
    truth = GroundTruth(y0=y0, low_rank=low_rank, alpha=alpha, gamma=gamma, effect=effect, t0=spec.t0)
    return panel, treat, truth
