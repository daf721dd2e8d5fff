"""Synthetic difference-in-differences with simplex unit and time weights."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .inference import SDID_SPACE, PlaceboDistribution, derive_seed
from .panel import PanelMatrix, TreatmentAssignment

KKT_TOL = 1e-8
MAX_ITERS = 100_000
REPORT_ZERO_BELOW = 1e-4


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}``."""
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


@dataclass
class SimplexSolution:
    x: np.ndarray
    objective: float
    kkt: float
    iters: int
    converged: bool
    trace: list[float] = field(repr=False, default_factory=list)


def simplex_least_squares(
    m: np.ndarray,
    c: np.ndarray,
    reg: float = 0.0,
    tol: float = KKT_TOL,
    max_iters: int = MAX_ITERS,
) -> SimplexSolution:
    """Minimize ``||c - m x||^2 + reg ||x||^2`` over the probability simplex.

    Monotone accelerated projected gradient from the uniform point, followed
    by an equality-constrained solve on the detected support when that
    lowers the objective. ``kkt`` is the sup-norm of the projected-gradient
    step at the returned point.
    """
    k = m.shape[1]
    q = m.T @ m + reg * np.eye(k)
    b = m.T @ c
    cc = float(c @ c)

    def f(x):
        return float(x @ q @ x - 2.0 * b @ x + cc)

    lip = 2.0 * float(np.linalg.eigvalsh(q)[-1])
    if lip <= 0:
        x = np.full(k, 1.0 / k)
        return SimplexSolution(x, f(x), 0.0, 0, True, [f(x)])

    def grad_map(x):
        return project_simplex(x - 2.0 * (q @ x - b) / lip)

    def kkt(x):
        return float(np.abs(x - grad_map(x)).max())

    x = np.full(k, 1.0 / k)
    fx = f(x)
    trace = [fx]
    y, t = x.copy(), 1.0
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        z = grad_map(y)
        fz = f(z)
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        x_prev = x
        if fz <= fx:
            x, fx = z, fz
        y = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next
        trace.append(fx)
        if iters % 10 == 0 and kkt(x) <= tol:
            converged = True
            break

    polished = _polish(q, b, x)
    if polished is not None:
        fp = f(polished)
        if fp <= fx:
            x, fx = polished, fp
            trace.append(fx)
    res = kkt(x)
    return SimplexSolution(x, fx, res, iters, converged or res <= tol, trace)


def _polish(q: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray | None:
    """Solve the KKT system on the support of ``x``; None if it is not optimal there."""
    support = np.flatnonzero(x > 1e-10)
    if support.size == 0:
        return None
    s = support.size
    kkt = np.zeros((s + 1, s + 1))
    kkt[:s, :s] = q[np.ix_(support, support)]
    kkt[:s, s] = -1.0
    kkt[s, :s] = 1.0
    rhs = np.concatenate([b[support], [1.0]])
    try:
        if np.linalg.cond(kkt) > 1e12:
            return None
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    xs, nu = sol[:s], sol[s]
    if np.any(xs < 0):
        return None
    out = np.zeros_like(x)
    out[support] = xs
    half_grad = q @ out - b
    scale = 1.0 + np.abs(half_grad).max()
    if np.any(half_grad < nu - 1e-10 * scale):
        return None
    return project_simplex(out)


@dataclass
class SdidWeights:
    donors: tuple[str, ...]
    omega: np.ndarray
    omega_intercept: float
    time_weights: np.ndarray
    time_intercept: float
    zeta: float
    unit_kkt: float = 0.0
    time_kkt: float = 0.0
    converged: bool = True

    def table(self) -> list[tuple[str, float]]:
        """Donor weights with entries below the reporting threshold shown as 0."""
        return [(d, 0.0 if w < REPORT_ZERO_BELOW else float(w)) for d, w in zip(self.donors, self.omega)]

    def to_dict(self) -> dict:
        tw = self.time_weights
        return {
            "zeta": self.zeta,
            "unit_weights": {d: w for d, w in self.table()},
            "omega_intercept": self.omega_intercept,
            "time_weights": tw.tolist(),
            "time_intercept": self.time_intercept,
            "time_weight_summary": {
                "n_pre": int(tw.size),
                "n_nonzero": int(np.sum(tw >= REPORT_ZERO_BELOW)),
                "max": float(tw.max()),
                "argmax": int(np.argmax(tw)),
            },
            "unit_kkt": self.unit_kkt,
            "time_kkt": self.time_kkt,
            "converged": self.converged,
        }

    def weights_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["donor", "weight"])
        for d, v in self.table():
            w.writerow([d, f"{v:.2f}" if v else "0"])
        return buf.getvalue()


@dataclass
class SdidEstimate:
    tau: float
    per_donor_delta: np.ndarray
    treated_delta: float
    weights: SdidWeights

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "treated_delta": self.treated_delta,
            "per_donor_delta": dict(zip(self.weights.donors, self.per_donor_delta.tolist())),
            "weights": self.weights.to_dict(),
        }


@dataclass
class _Blocks:
    donors: tuple[str, ...]
    y1_pre: np.ndarray
    y1_post: np.ndarray
    yd_pre: np.ndarray  # donors x pre
    yd_post: np.ndarray


def _blocks(panel: PanelMatrix, treat: TreatmentAssignment) -> _Blocks:
    t0 = treat.t0_index(panel)
    i = panel.unit_index(treat.treated_unit)
    donors = tuple(u for u in panel.units if u != treat.treated_unit)
    rows = [panel.unit_index(d) for d in donors]
    if not panel.mask[[i] + rows].all():
        raise ValueError("synthetic DiD needs a balanced panel: treated and donor cells must all be observed")
    y = panel.values
    return _Blocks(donors, y[i, :t0], y[i, t0:], y[rows, :t0], y[rows, t0:])


def auto_zeta(yd_pre: np.ndarray, n_post: int) -> float:
    """``(N_donors * T_post)^(1/4)`` times the sd of first-differenced donor pre-period outcomes."""
    d = np.diff(yd_pre, axis=1).ravel()
    sigma = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    return (yd_pre.shape[0] * n_post) ** 0.25 * sigma


def solve_unit_weights(panel: PanelMatrix, treat: TreatmentAssignment, zeta: float) -> tuple[np.ndarray, float, SimplexSolution]:
    """Simplex donor weights plus intercept matching the treated pre-period path."""
    if zeta < 0:
        raise ValueError("zeta must be >= 0")
    b = _blocks(panel, treat)
    return _unit_weights(b, zeta)


def _unit_weights(b: _Blocks, zeta: float):
    n_donors, n_pre = b.yd_pre.shape
    if n_donors < 2 or n_pre < 2:
        raise ValueError("unit weights need >= 2 donors and >= 2 pre-periods")
    target = b.y1_pre - b.y1_pre.mean()
    design = (b.yd_pre - b.yd_pre.mean(axis=1, keepdims=True)).T
    sol = simplex_least_squares(design, target, reg=zeta**2 * n_pre)
    intercept = float(b.y1_pre.mean() - sol.x @ b.yd_pre.mean(axis=1))
    return sol.x, intercept, sol


def solve_time_weights(panel: PanelMatrix, treat: TreatmentAssignment) -> tuple[np.ndarray, float, SimplexSolution]:
    """Simplex pre-period weights plus intercept matching donors' post-period means."""
    return _time_weights(_blocks(panel, treat))


def _time_weights(b: _Blocks):
    n_donors, n_pre = b.yd_pre.shape
    if n_pre < 1 or b.yd_post.shape[1] < 1:
        raise ValueError("time weights need >= 1 pre-period and >= 1 post-period")
    if n_pre == 1:
        x = np.ones(1)
        return x, float(np.mean(b.yd_post.mean(axis=1) - b.yd_pre[:, 0])), SimplexSolution(x, 0.0, 0.0, 0, True)
    post_mean = b.yd_post.mean(axis=1)
    target = post_mean - post_mean.mean()
    design = b.yd_pre - b.yd_pre.mean(axis=0, keepdims=True)
    sol = simplex_least_squares(design, target)
    intercept = float(post_mean.mean() - b.yd_pre.mean(axis=0) @ sol.x)
    return sol.x, intercept, sol


def sdid_estimate(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    zeta: float | None = None,
    unit_weights: np.ndarray | None = None,
    time_weights: np.ndarray | None = None,
) -> SdidEstimate:
    """Weighted DiD contrast ``delta_treated - sum_d omega_d delta_d``.

    ``zeta=None`` picks the regularization automatically; explicit weight
    vectors bypass the solvers.
    """
    b = _blocks(panel, treat)
    n_post = b.y1_post.size
    if zeta is None:
        zeta = auto_zeta(b.yd_pre, n_post)
    if unit_weights is None:
        omega, omega0, usol = _unit_weights(b, zeta)
        ukkt, uconv = usol.kkt, usol.converged
    else:
        omega = np.asarray(unit_weights, dtype=float)
        omega0 = float(b.y1_pre.mean() - omega @ b.yd_pre.mean(axis=1))
        ukkt, uconv = 0.0, True
    if time_weights is None:
        lam, lam0, tsol = _time_weights(b)
        tkkt, tconv = tsol.kkt, tsol.converged
    else:
        lam = np.asarray(time_weights, dtype=float)
        lam0 = float(b.yd_post.mean() - b.yd_pre.mean(axis=0) @ lam)
        tkkt, tconv = 0.0, True

    donor_delta = b.yd_post.mean(axis=1) - b.yd_pre @ lam
    treated_delta = float(b.y1_post.mean() - b.y1_pre @ lam)
    tau = treated_delta - float(omega @ donor_delta)
    weights = SdidWeights(b.donors, omega, omega0, lam, lam0, float(zeta), ukkt, tkkt, uconv and tconv)
    return SdidEstimate(tau, donor_delta, treated_delta, weights)


def sdid_placebo(
    panel: PanelMatrix,
    treat: TreatmentAssignment,
    n: int,
    seed: int,
    zeta: float | None = None,
    observed_tau: float | None = None,
) -> PlaceboDistribution:
    """Placebo distribution from ``n`` random donor reassignments.

    The true treated unit is dropped; run ``k`` treats the donor picked by
    the seed derived from ``(seed, k)``. Each donor's estimate is computed at
    most once.
    """
    donors = [u for u in panel.units if u != treat.treated_unit]
    if len(donors) < 3:
        raise ValueError("SDID placebos need at least 3 donors")
    if n < 1:
        raise ValueError("n must be >= 1")
    if observed_tau is None:
        observed_tau = sdid_estimate(panel, treat, zeta).tau
    pool = panel.drop_units([treat.treated_unit])
    cache: dict[str, float] = {}
    labels, effects, seeds = [], [], []
    for k in range(n):
        s = derive_seed(seed, k)
        d = donors[s % len(donors)]
        if d not in cache:
            cache[d] = sdid_estimate(pool, TreatmentAssignment(d, treat.t0), zeta).tau
        labels.append(d)
        effects.append(cache[d])
        seeds.append(s)
    return PlaceboDistribution.from_effects(SDID_SPACE, labels, effects, observed_tau, seeds=seeds)
