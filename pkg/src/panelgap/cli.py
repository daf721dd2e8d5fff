"""Command-line front end: ``panelgap estimate | placebo | sdid | cv | simulate``."""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, cv, dgp, inference, mc, sdid
from .effects import HorizonWindows, horizon_decomposition, pre_fit_report
from .panel import (
    DuplicateCellError,
    PanelFormatError,
    PeriodIndex,
    TreatmentAssignment,
    UnknownUnitError,
    load_panel,
)
from .pipeline import estimate
from .report import write_json, write_text

EXIT_OK = 0
EXIT_DATA = 2
EXIT_NOT_CONVERGED = 3

DEFAULT_TREATED = "Israel"
DEFAULT_T0 = "2023-10"
DEFAULT_DONORS = dgp.DEFAULT_UNITS[1:]
SEED_ENV = "PANELGAP_SEED"

DATA_ERRORS = (
    PanelFormatError,
    DuplicateCellError,
    UnknownUnitError,
    mc.IdentificationError,
    cv.CvError,
    inference.InfeasiblePseudoDateError,
    ValueError,
    FileNotFoundError,
)


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    outcome: str | None = None
    treated: str = DEFAULT_TREATED
    t0: str = DEFAULT_T0
    donors: list[str] = field(default_factory=lambda: list(DEFAULT_DONORS))
    lam: str = "cv"
    lambda_scale: str = mc.SCALE_ABSOLUTE
    lambda_grid: list[float] = field(default_factory=lambda: list(cv.DEFAULT_GRID))
    cv_horizon: int | None = None
    cv_folds: int = cv.DEFAULT_FOLDS
    min_train: int = cv.DEFAULT_MIN_TRAIN
    one_se: bool = False
    max_iters: int = 10_000
    rel_tol: float = 1e-8
    windows: str | None = None
    seed: int = 0
    n_boot: list[int] = field(default_factory=lambda: list(inference.BOOT_SIZES))
    jobs: int = 1
    out_dir: str = "."
    kind: str | None = None
    pseudo_dates: list[str] | None = None
    pseudo_step: int = inference.DEFAULT_PSEUDO_STEP
    placebo_horizon: int | None = None
    recv: bool = False
    zeta: float | None = None
    n_placebo: int = 100

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def _seed_default() -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else 0


def _parse_grid(text: str) -> list[float]:
    """``lo:hi:n`` (log-spaced) or a comma list."""
    if ":" in text:
        lo, hi, n = text.split(":")
        return [float(x) for x in np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(n))]
    return [float(x) for x in text.split(",") if x]


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="long-format CSV (unit,period,value)")
    p.add_argument("--outcome", default=None, help="outcome to keep when the CSV has an outcome column")
    p.add_argument("--treated", default=DEFAULT_TREATED)
    p.add_argument("--t0", default=DEFAULT_T0, help="first treated period, YYYY-MM or YYYY")
    p.add_argument(
        "--donors",
        default=",".join(DEFAULT_DONORS),
        help="comma-separated donor pool, or 'all' for every other unit",
    )
    p.add_argument("--seed", type=int, default=None, help=f"root seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default=".")


def _add_mc_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", default="cv", help="nuclear-norm weight, or 'cv'")
    p.add_argument(
        "--lambda-scale",
        choices=[mc.SCALE_ABSOLUTE, mc.SCALE_MAX_SINGULAR],
        default=mc.SCALE_ABSOLUTE,
    )
    p.add_argument("--lambda-grid", default=None, help="CV grid: lo:hi:n (log-spaced) or comma list")
    p.add_argument("--cv-horizon", type=int, default=None)
    p.add_argument("--cv-folds", type=int, default=cv.DEFAULT_FOLDS)
    p.add_argument("--min-train", type=int, default=cv.DEFAULT_MIN_TRAIN)
    p.add_argument("--one-se", action="store_true", help="pick the one-standard-error weight")
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--rel-tol", type=float, default=1e-8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelgap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"panelgap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit the counterfactual and report effects")
    _add_data_args(p)
    _add_mc_args(p)
    p.add_argument("--windows", default=None, help="horizon window sizes i:a:p (p may be *)")

    p = sub.add_parser("cv", help="cross-validate the nuclear-norm weight only")
    _add_data_args(p)
    _add_mc_args(p)

    p = sub.add_parser("placebo", help="in-space or in-time placebo inference")
    _add_data_args(p)
    _add_mc_args(p)
    p.add_argument("--kind", choices=["space", "time"], default="space")
    p.add_argument("--pseudo-dates", default=None, help="comma-separated YYYY-MM pseudo-treatment dates")
    p.add_argument("--pseudo-step", type=int, default=inference.DEFAULT_PSEUDO_STEP)
    p.add_argument("--placebo-horizon", type=int, default=None)
    p.add_argument("--recv", action="store_true", help="re-run cross-validation inside every placebo")
    p.add_argument("--n-boot", default=",".join(map(str, inference.BOOT_SIZES)))

    p = sub.add_parser("sdid", help="synthetic difference-in-differences")
    _add_data_args(p)
    p.add_argument("--zeta", type=float, default=None, help="fixed unit-weight regularization (default: auto)")
    p.add_argument("--n-placebo", type=int, default=100)
    p.add_argument("--n-boot", default=",".join(map(str, inference.BOOT_SIZES)))

    p = sub.add_parser("simulate", help="write a synthetic latent-factor panel")
    p.add_argument("--n-units", type=int, default=12)
    p.add_argument("--n-periods", type=int, default=212)
    p.add_argument("--t0-index", type=int, default=189, help="0-based position of the first treated period")
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--rho", type=float, default=0.9, help="factor AR(1) persistence")
    p.add_argument("--loading-scale", type=float, default=1.0)
    p.add_argument("--fe-scale", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--effect", choices=["zero", "constant", "hump"], default="constant")
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--peak", type=float, default=0.8)
    p.add_argument("--peak-time", type=int, default=12)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--floor", type=float, default=0.5)
    p.add_argument("--start", default="2008-01")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    return parser


def _config_from_args(args) -> RunConfig:
    seed = args.seed if args.seed is not None else _seed_default()
    cfg = RunConfig(command=args.command, seed=seed, out_dir=args.out_dir)
    if args.command == "simulate":
        return cfg
    cfg.input = args.input
    cfg.outcome = args.outcome
    cfg.treated = args.treated
    cfg.t0 = args.t0
    cfg.donors = [] if args.donors == "all" else [d.strip() for d in args.donors.split(",") if d.strip()]
    cfg.jobs = args.jobs
    if hasattr(args, "lam"):
        cfg.lam = args.lam
        cfg.lambda_scale = args.lambda_scale
        if args.lambda_grid:
            cfg.lambda_grid = _parse_grid(args.lambda_grid)
        cfg.cv_horizon = args.cv_horizon
        cfg.cv_folds = args.cv_folds
        cfg.min_train = args.min_train
        cfg.one_se = args.one_se
        cfg.max_iters = args.max_iters
        cfg.rel_tol = args.rel_tol
    if hasattr(args, "windows"):
        cfg.windows = args.windows
    if hasattr(args, "n_boot"):
        cfg.n_boot = [int(x) for x in args.n_boot.split(",") if x]
    if args.command == "placebo":
        cfg.kind = args.kind
        cfg.pseudo_dates = [d.strip() for d in args.pseudo_dates.split(",")] if args.pseudo_dates else None
        cfg.pseudo_step = args.pseudo_step
        cfg.placebo_horizon = args.placebo_horizon
        cfg.recv = args.recv
    if args.command == "sdid":
        cfg.zeta = args.zeta
        cfg.n_placebo = args.n_placebo
    return cfg


def _load(cfg: RunConfig):
    panel = load_panel(cfg.input, outcome=cfg.outcome)
    if cfg.treated not in panel.units:
        raise DataError(f"treated unit {cfg.treated!r} not found in {cfg.input}")
    donors = cfg.donors or [u for u in panel.units if u != cfg.treated]
    missing = [d for d in donors if d not in panel.units]
    if missing:
        raise DataError(f"donor(s) not found in {cfg.input}: {', '.join(missing)}")
    if cfg.treated in donors:
        raise DataError(f"treated unit {cfg.treated!r} is also listed as a donor")
    panel = panel.select_units([cfg.treated, *donors])
    treat = TreatmentAssignment(cfg.treated, PeriodIndex.parse(cfg.t0))
    treat.t0_index(panel)
    return panel, treat


def _mc_setup(cfg: RunConfig, n_post: int):
    lam = 1.0 if cfg.lam == "cv" else float(cfg.lam)
    config = mc.McConfig(lam, max_iters=cfg.max_iters, rel_tol=cfg.rel_tol, lambda_scale=cfg.lambda_scale)
    plan = None
    if cfg.lam == "cv":
        plan = cv.CvPlan(
            lambda_grid=tuple(cfg.lambda_grid),
            horizon=cfg.cv_horizon or min(n_post, cv.MAX_DEFAULT_HORIZON),
            n_folds=cfg.cv_folds,
            min_train=cfg.min_train,
        )
    return config, plan


def _header(cfg: RunConfig) -> dict:
    return {"config": cfg.to_dict(), "seed": cfg.seed, "version": __version__}


def _write_meta(out: Path, cfg: RunConfig) -> None:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    write_json(out / f"{cfg.command}.meta.json", {"command": cfg.command, "finished_utc": stamp})


def _run_estimate(cfg: RunConfig, out: Path, cv_only: bool = False) -> int:
    panel, treat = _load(cfg)
    n_post = len(panel.periods) - treat.t0_index(panel)
    config, plan = _mc_setup(cfg, n_post)
    if cv_only:
        if plan is None:
            raise DataError("the cv command needs --lambda cv")
        rep = cv.select_lambda(panel, treat, plan, config, jobs=cfg.jobs)
        write_json(out / "cv.json", {**_header(cfg), "cv": rep.to_dict()})
        return EXIT_OK
    est = estimate(panel, treat, config, cv_plan=plan, one_se=cfg.one_se, jobs=cfg.jobs)
    if est.cv is not None:
        write_json(out / "cv.json", {**_header(cfg), "cv": est.cv.to_dict()})
    write_json(out / "fit.json", {**_header(cfg), "fit": est.fit.summary(), "units": list(panel.units)})

    effects = {**_header(cfg), "effects": est.path.to_dict()}
    windows = None
    if cfg.windows:
        windows = HorizonWindows.parse(cfg.windows, n_post)
    elif n_post > 12:
        windows = HorizonWindows.default(n_post)
    if windows is not None:
        imp, adj, per = horizon_decomposition(est.path, windows)
        effects["horizons"] = {"windows": windows.to_dict(), "impact": imp, "adjustment": adj, "persistence": per}
    if est.path.pre_residuals.size >= 8:
        effects["pre_fit"] = pre_fit_report(est.path, est.fit, seed=inference.derive_seed(cfg.seed, 0)).to_dict()
    write_json(out / "effects.json", effects)
    write_text(out / "effects.csv", est.path.to_csv())
    if not est.fit.converged:
        print(f"warning: solver stopped at max_iters={cfg.max_iters} without converging", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _stability(dist, cfg: RunConfig) -> list[dict]:
    if dist.n_runs < 2:
        return []
    return [s.to_dict() for s in inference.stability_table(dist, cfg.seed, cfg.n_boot)]


def _run_placebo(cfg: RunConfig, out: Path) -> int:
    panel, treat = _load(cfg)
    n_post = len(panel.periods) - treat.t0_index(panel)
    config, plan = _mc_setup(cfg, n_post)
    real = estimate(panel, treat, config, cv_plan=plan, one_se=cfg.one_se, jobs=cfg.jobs)
    config = real.config
    recv_plan = plan if cfg.recv else None
    if cfg.kind == "space":
        dist = inference.in_space_placebos(
            panel, treat, config, observed_ate=real.ate, cv_plan=recv_plan, seed=cfg.seed, jobs=cfg.jobs
        )
    else:
        horizon = cfg.placebo_horizon or min(n_post, cv.MAX_DEFAULT_HORIZON)
        dates = cfg.pseudo_dates
        if dates is None:
            dates = inference.default_pseudo_dates(panel, treat, horizon, cfg.min_train, cfg.pseudo_step)
        dist = inference.in_time_placebos(
            panel,
            treat,
            dates,
            config,
            horizon=horizon,
            min_train=cfg.min_train,
            observed_ate=real.ate,
            cv_plan=recv_plan,
            seed=cfg.seed,
            jobs=cfg.jobs,
        )
    report = {
        **_header(cfg),
        "lambda_used": real.fit.lambda_used,
        "lambda_selected": real.config.lam,
        "placebo": dist.to_dict(),
        "resampling": _stability(dist, cfg),
    }
    write_json(out / "placebo.json", report)
    write_text(out / "placebo_paths.csv", dist.paths_csv())
    return EXIT_OK if real.fit.converged else EXIT_NOT_CONVERGED


def _run_sdid(cfg: RunConfig, out: Path) -> int:
    panel, treat = _load(cfg)
    est = sdid.sdid_estimate(panel, treat, zeta=cfg.zeta)
    report = {**_header(cfg), "zeta_mode": "auto" if cfg.zeta is None else "fixed", "sdid": est.to_dict()}
    if cfg.n_placebo > 0 and len(panel.units) - 1 >= 3:
        dist = sdid.sdid_placebo(panel, treat, cfg.n_placebo, cfg.seed, zeta=cfg.zeta, observed_tau=est.tau)
        report["placebo"] = dist.to_dict()
        report["resampling"] = _stability(dist, cfg)
        report["se"] = float(np.std(dist.effects, ddof=1)) if dist.n_runs > 1 else 0.0
    write_json(out / "sdid.json", report)
    write_text(out / "sdid_weights.csv", est.weights.weights_csv())
    return EXIT_OK if est.weights.converged else EXIT_NOT_CONVERGED


def _run_simulate(args, cfg: RunConfig, out: Path) -> int:
    effect = dgp.EffectProfile(
        kind=args.effect,
        tau=0.0 if args.effect == "zero" else args.tau,
        peak=args.peak,
        peak_time=args.peak_time,
        decay=args.decay,
        floor=args.floor,
    )
    spec = dgp.DgpSpec(
        n_units=args.n_units,
        n_periods=args.n_periods,
        t0=args.t0_index,
        rank=args.rank,
        factor_persistence=args.rho,
        loading_scale=args.loading_scale,
        fe_scale=args.fe_scale,
        noise_sigma=args.sigma,
        effect=effect,
        seed=cfg.seed,
        start=args.start,
    )
    panel, treat, truth = dgp.generate(spec)
    panel.to_csv(out / "panel.csv")
    write_json(
        out / "truth.json",
        {
            "spec": spec.to_dict(),
            "seed": cfg.seed,
            "treated": treat.treated_unit,
            "t0": str(treat.t0),
            "units": list(panel.units),
            **truth.to_dict(),
        },
    )
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _config_from_args(args)
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if args.command == "simulate":
                code = _run_simulate(args, cfg, out)
            elif args.command == "estimate":
                code = _run_estimate(cfg, out)
            elif args.command == "cv":
                code = _run_estimate(cfg, out, cv_only=True)
            elif args.command == "placebo":
                code = _run_placebo(cfg, out)
            else:
                code = _run_sdid(cfg, out)
    except (DataError, *DATA_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    _write_meta(out, cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
