"""Matrix-completion estimator with two-way fixed effects.

Minimizes ``sum_{Omega} (Y - alpha_i - gamma_t - L)^2 + lam * ||L||_*`` by
block-coordinate descent: an exact fixed-effects update given ``L``, then a
soft-impute proximal step on ``L`` given the fixed effects. Because the
squared error is not halved, the proximal threshold is ``lam / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .panel import ObservedSets, PanelMatrix

FE_BOTH = "both"
FE_NONE = "none"

SCALE_ABSOLUTE = "absolute"
SCALE_MAX_SINGULAR = "max-singular"

RANK_TOL = 1e-9


class IdentificationError(ValueError):
    """A unit or period has no cells in the estimation set."""


class NonFiniteObjectiveError(FloatingPointError):
    """The objective became NaN or infinite during fitting."""


@dataclass(frozen=True)
class McConfig:
    """Solver settings.

    ``lam`` is the nuclear-norm weight. With ``lambda_scale="max-singular"``
    it is read as a multiple of the largest singular value of the initial
    fixed-effects residual matrix, which is convenient for simulated data of
    arbitrary scale.
    """

    lam: float
    max_iters: int = 10_000
    rel_tol: float = 1e-8
    fe_mode: str = FE_BOTH
    lambda_scale: str = SCALE_ABSOLUTE
    accelerate: bool = True

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.fe_mode not in (FE_BOTH, FE_NONE):
            raise ValueError(f"fe_mode must be 'both' or 'none', got {self.fe_mode!r}")
        if self.lambda_scale not in (SCALE_ABSOLUTE, SCALE_MAX_SINGULAR):
            raise ValueError(f"unknown lambda_scale {self.lambda_scale!r}")

    def with_lambda(self, lam: float) -> "McConfig":
        return replace(self, lam=float(lam))


@dataclass
class McFit:
    alpha: np.ndarray
    gamma: np.ndarray
    l: np.ndarray
    imputed: np.ndarray
    objective_trace: list[float]
    converged: bool
    iters: int
    effective_rank: int
    lambda_used: float
    singular_values: np.ndarray = field(repr=False)

    def fitted(self) -> np.ndarray:
        """Untreated-outcome surface ``alpha_i + gamma_t + L_it`` on the whole grid."""
        return self.alpha[:, None] + self.gamma[None, :] + self.l

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def summary(self) -> dict:
        return {
            "lambda": self.lambda_used,
            "converged": self.converged,
            "iters": self.iters,
            "effective_rank": self.effective_rank,
            "objective": self.objective,
            "alpha": self.alpha.tolist(),
            "gamma": self.gamma.tolist(),
            "singular_values": self.singular_values.tolist(),
            "imputed": self.imputed.tolist(),
        }


def _design(panel: PanelMatrix, sets: ObservedSets) -> tuple[np.ndarray, np.ndarray]:
    if sets.omega.shape != panel.shape:
        raise ValueError(f"sets shape {sets.omega.shape} does not match panel {panel.shape}")
    w = sets.omega.astype(float)
    y = np.where(sets.omega, panel.values, 0.0)
    return y, w


class _FixedEffects:
    """Exact Omega-restricted two-way least squares for the additive effects.

    The normal equations are reduced to the smaller of the two dimensions;
    the reduced matrix is a weighted graph Laplacian whose null space is the
    level shift between alpha and gamma, so it is regularized along that
    direction and inverted once per fit.
    """

    def __init__(self, w: np.ndarray, fe_mode: str):
        self.w = w
        self.mode = fe_mode
        self.n_row = w.sum(axis=1)
        self.n_col = w.sum(axis=0)
        self.alpha = np.zeros(w.shape[0])
        self.gamma = np.zeros(w.shape[1])
        if fe_mode == FE_NONE:
            return
        self.rows_first = w.shape[0] <= w.shape[1]
        if self.rows_first:
            lap = np.diag(self.n_row) - (w / self.n_col) @ w.T
        else:
            lap = np.diag(self.n_col) - (w.T / self.n_row) @ w
        # Pin the null direction with a rank-one term; the right-hand sides
        # always sum to zero, so the solution is unchanged on the range.
        k = lap.shape[0]
        self.lap_pinv = np.linalg.inv(lap + np.full((k, k), np.trace(lap) / k**2))

    def update(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Refit effects to the Omega cells of residual ``r`` (already zero off Omega)."""
        if self.mode == FE_NONE:
            return self.alpha, self.gamma
        w = self.w
        row_sum = r.sum(axis=1)
        col_sum = r.sum(axis=0)
        if self.rows_first:
            alpha = self.lap_pinv @ (row_sum - w @ (col_sum / self.n_col))
            gamma = (col_sum - w.T @ alpha) / self.n_col
        else:
            gamma = self.lap_pinv @ (col_sum - w.T @ (row_sum / self.n_row))
            alpha = (row_sum - w @ gamma) / self.n_row
        # Omega-weighted zero-mean unit effects; the level lives in gamma.
        c = float(self.n_row @ alpha) / float(self.n_row.sum())
        self.alpha, self.gamma = alpha - c, gamma + c
        return self.alpha, self.gamma


def _check_identified(w: np.ndarray) -> None:
    empty_rows = np.flatnonzero(w.sum(axis=1) == 0)
    empty_cols = np.flatnonzero(w.sum(axis=0) == 0)
    if empty_rows.size or empty_cols.size:
        raise IdentificationError(
            f"no estimation cells for unit rows {empty_rows.tolist()} / period columns {empty_cols.tolist()}"
        )
    n, t = w.shape
    if w.sum() < n + t:
        raise IdentificationError(f"|Omega| = {int(w.sum())} < units + periods = {n + t}")


def objective(panel: PanelMatrix, sets: ObservedSets, alpha, gamma, l, lam: float) -> float:
    """Penalized squared error over the estimation set."""
    alpha = np.asarray(alpha, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    l = np.asarray(l, dtype=float)
    n, t = panel.shape
    if alpha.shape != (n,) or gamma.shape != (t,) or l.shape != (n, t):
        raise ValueError(
            f"shape mismatch: alpha {alpha.shape}, gamma {gamma.shape}, L {l.shape} for panel {(n, t)}"
        )
    y, w = _design(panel, sets)
    resid = w * (y - alpha[:, None] - gamma[None, :] - l)
    return float(np.sum(resid**2) + lam * np.sum(np.linalg.svd(l, compute_uv=False)))


def initial_residual_smax(panel: PanelMatrix, sets: ObservedSets, fe_mode: str = FE_BOTH) -> float:
    """Largest singular value of the Omega residuals after the fixed-effects-only fit."""
    y, w = _design(panel, sets)
    _check_identified(w)
    fe = _FixedEffects(w, fe_mode)
    alpha, gamma = fe.update(y)
    resid = w * (y - alpha[:, None] - gamma[None, :])
    return float(np.linalg.svd(resid, compute_uv=False)[0])


def fit(panel: PanelMatrix, sets: ObservedSets, config: McConfig, warm_start: np.ndarray | None = None) -> McFit:
    """Fit fixed effects and the low-rank component on the estimation set.

    With the fixed effects profiled out, the soft-impute update is a
    proximal-gradient step of length 1/2 on ``L``. ``config.accelerate``
    adds monotone momentum (rejected steps restart it), so every recorded
    objective is no larger than the previous one. Convergence is declared
    only after a plain, momentum-free step changes the objective by less
    than ``rel_tol``.

    ``warm_start`` replaces the zero initial ``L`` (used along a lambda path
    during cross-validation).
    """
    y, w = _design(panel, sets)
    _check_identified(w)
    obs = w > 0

    fe = _FixedEffects(w, config.fe_mode)
    alpha, gamma = fe.update(y)
    lam = config.lam
    if config.lambda_scale == SCALE_MAX_SINGULAR:
        resid0 = w * (y - alpha[:, None] - gamma[None, :])
        lam *= float(np.linalg.svd(resid0, compute_uv=False)[0])
    thresh = lam / 2.0

    def effects_at(l: np.ndarray, s: np.ndarray):
        a, g = fe.update(w * (y - l))
        r = w * (y - a[:, None] - g[None, :] - l)
        return a, g, float(np.sum(r**2) + lam * s.sum())

    def prox_step(l: np.ndarray, a: np.ndarray, g: np.ndarray):
        z = np.where(obs, y - a[:, None] - g[None, :], l)
        u, s, vt = np.linalg.svd(z, full_matrices=False)
        s = np.maximum(s - thresh, 0.0)
        k = int(np.count_nonzero(s))
        return (u[:, :k] * s[:k]) @ vt[:k], s

    s_x = np.zeros(min(panel.shape))
    if warm_start is None:
        x = np.zeros(panel.shape)
    else:
        u, s_x, vt = np.linalg.svd(np.asarray(warm_start, dtype=float), full_matrices=False)
        x = (u * s_x) @ vt
    ax, gx, fx = effects_at(x, s_x)
    trace = [fx]

    # Changes below this are rounding noise; matters when the fit becomes exact.
    floor = 1e-14 * fx
    x_prev = x
    yl, ay, gy = x, ax, gx
    t = 1.0
    plain = True
    converged = False
    iters = 0
    for iters in range(1, config.max_iters + 1):
        z, s_z = prox_step(yl, ay, gy)
        az, gz, fz = effects_at(z, s_z)
        if not np.isfinite(fz):
            raise NonFiniteObjectiveError(f"objective became {fz} at iteration {iters} (lambda={lam})")
        if fz <= fx:
            small = fx - fz <= config.rel_tol * abs(fx) + floor
            x_prev, x, s_x, ax, gx, fx = x, z, s_z, az, gz, fz
            trace.append(fx)
            if small and plain:
                converged = True
                break
            if config.accelerate and not small:
                t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
                beta = (t - 1.0) / t_next
                t = t_next
                if beta > 0:
                    yl = x + beta * (x - x_prev)
                    ay, gy = fe.update(w * (y - yl))
                    plain = False
                    continue
            if small:
                t = 1.0
        else:
            trace.append(fx)
            if plain and fz - fx <= config.rel_tol * abs(fx) + floor:
                converged = True
                break
            t = 1.0
        # next step starts from the current iterate without momentum
        yl, ay, gy, plain = x, ax, gx, True

    miss = sets.missing_periods
    i = sets.treated
    imputed = ax[i] + gx[miss] + x[i, miss]
    return McFit(
        alpha=ax,
        gamma=gx,
        l=x,
        imputed=imputed,
        objective_trace=trace,
        converged=converged,
        iters=iters,
        effective_rank=int(np.sum(s_x > RANK_TOL)),
        lambda_used=lam,
        singular_values=s_x,
    )


def impute_counterfactual(fit: McFit, sets: ObservedSets) -> np.ndarray:
    """Counterfactual untreated outcomes for the treated unit over the missing block."""
    miss = sets.missing_periods
    i = sets.treated
    return fit.alpha[i] + fit.gamma[miss] + fit.l[i, miss]
