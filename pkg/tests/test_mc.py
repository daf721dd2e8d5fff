import numpy as np
import pytest

from conftest import make_panel, treat_at
from oracles import naive_objective, twfe_lstsq_impute, twfe_normal_equations_impute
from panelgap import dgp, mc
from panelgap.panel import build_observed_sets


def _fe_panel(rng, n=5, t=30, k=24):
    a, g = rng.normal(size=n), rng.normal(size=t)
    y = a[:, None] + g[None, :]
    p = make_panel(y)
    return p, treat_at(p, k), a, g


def _low_rank_panel(rng, n=8, t=40, r=2, sigma=0.1, k=32, holes=0.0):
    y = rng.normal(size=n)[:, None] + rng.normal(size=t)[None, :]
    y = y + rng.normal(size=(n, r)) @ rng.normal(size=(r, t)) + sigma * rng.normal(size=(n, t))
    mask = rng.random((n, t)) >= holes
    mask[0] = True
    p = make_panel(y, mask)
    return p, build_observed_sets(p, treat_at(p, k))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            mc.McConfig(-1.0)
        with pytest.raises(ValueError):
            mc.McConfig(float("nan"))
        with pytest.raises(ValueError):
            mc.McConfig(0.1, lambda_scale="relative")
        assert mc.McConfig(0.1).with_lambda(0.2).lam == 0.2


class TestObjective:
    def test_perfect_fit_is_zero(self, rng):
        p, t, a, g = _fe_panel(rng)
        s = build_observed_sets(p, t)
        assert mc.objective(p, s, a, g, np.zeros(p.shape), 0.3) == pytest.approx(0.0, abs=1e-20)

    def test_zero_parameters(self, rng):
        p, s = _low_rank_panel(rng, holes=0.1)
        n, t = p.shape
        expected = float(np.sum(p.values[s.omega] ** 2))
        assert mc.objective(p, s, np.zeros(n), np.zeros(t), np.zeros((n, t)), 0.5) == pytest.approx(expected)

    def test_naive_oracle(self, rng):
        for _ in range(10):
            p, s = _low_rank_panel(rng, n=6, t=15, k=10, holes=0.2)
            n, t = p.shape
            a, g, l = rng.normal(size=n), rng.normal(size=t), rng.normal(size=(n, t))
            lam = rng.uniform(0, 2)
            y = np.where(p.mask, p.values, 0.0)
            ref = naive_objective(y, s.omega, a, g, l, lam)
            assert abs(mc.objective(p, s, a, g, l, lam) - ref) <= 1e-10 * max(1.0, abs(ref))

    def test_shape_mismatch(self, rng):
        p, s = _low_rank_panel(rng)
        with pytest.raises(ValueError, match="shape"):
            mc.objective(p, s, np.zeros(3), np.zeros(p.shape[1]), np.zeros(p.shape), 0.1)


class TestFit:
    def test_pure_two_way_structure(self, rng):
        p, t, a, g = _fe_panel(rng)
        s = build_observed_sets(p, t)
        f = mc.fit(p, s, mc.McConfig(1.0))
        assert f.converged and f.effective_rank == 0
        np.testing.assert_allclose(f.l, 0.0, atol=1e-12)
        np.testing.assert_allclose(f.fitted()[s.omega], p.values[s.omega], atol=1e-10)
        np.testing.assert_allclose(f.imputed, a[0] + g[24:], atol=1e-10)

    def test_fe_normalization(self, rng):
        p, s = _low_rank_panel(rng, holes=0.2)
        f = mc.fit(p, s, mc.McConfig(0.5))
        w = s.omega.sum(axis=1)
        assert abs(float(w @ f.alpha)) <= 1e-10

    def test_imputed_matches_components(self, rng):
        p, s = _low_rank_panel(rng, holes=0.1)
        f = mc.fit(p, s, mc.McConfig(0.05))
        i, miss = s.treated, s.missing_periods
        np.testing.assert_allclose(f.imputed, f.alpha[i] + f.gamma[miss] + f.l[i, miss], atol=1e-12)
        np.testing.assert_allclose(mc.impute_counterfactual(f, s), f.imputed, atol=0)

    def test_large_lambda_collapses_to_fe(self, rng):
        for _ in range(5):
            p, s = _low_rank_panel(rng, holes=0.1)
            lam = 2.0 * mc.initial_residual_smax(p, s) * 1.01
            f = mc.fit(p, s, mc.McConfig(lam))
            assert f.effective_rank == 0
            y = np.where(p.mask, p.values, 0.0)
            cells = [(s.treated, k) for k in s.missing_periods]
            np.testing.assert_allclose(f.imputed, twfe_lstsq_impute(y, s.omega, cells), atol=1e-8)

    def test_normal_equations_oracle_lambda_zero(self, rng):
        for _ in range(10):
            y = rng.normal(size=(4, 6))
            p = make_panel(y)
            s = build_observed_sets(p, treat_at(p, 5, "u2"))
            f = mc.fit(p, s, mc.McConfig(0.0))
            assert f.converged
            ref = twfe_normal_equations_impute(y, s.omega, [(2, 5)])
            np.testing.assert_allclose(f.imputed, ref, atol=1e-6)

    def test_monotone_descent(self, rng):
        for lam in np.logspace(-4, 0, 6):
            p, s = _low_rank_panel(rng, holes=0.1)
            for acc in (True, False):
                f = mc.fit(p, s, mc.McConfig(lam, accelerate=acc))
                tr = np.asarray(f.objective_trace)
                assert np.all(np.diff(tr) <= 1e-12)
                ref = mc.objective(p, s, f.alpha, f.gamma, f.l, lam)
                assert tr[-1] == pytest.approx(ref, rel=1e-10, abs=1e-14)

    def test_acceleration_reaches_same_optimum(self, rng):
        p, s = _low_rank_panel(rng)
        fast = mc.fit(p, s, mc.McConfig(0.3, rel_tol=1e-12))
        slow = mc.fit(p, s, mc.McConfig(0.3, rel_tol=1e-12, accelerate=False, max_iters=50_000))
        assert fast.objective == pytest.approx(slow.objective, rel=1e-8)
        np.testing.assert_allclose(fast.imputed, slow.imputed, atol=1e-3)

    def test_shift_invariance(self, rng):
        p, s = _low_rank_panel(rng)
        f0 = mc.fit(p, s, mc.McConfig(0.2, rel_tol=1e-12))
        q = p.with_values(p.values + 37.5)
        f1 = mc.fit(q, s, mc.McConfig(0.2, rel_tol=1e-12))
        tau0 = p.values[0, s.missing_periods] - f0.imputed
        tau1 = q.values[0, s.missing_periods] - f1.imputed
        np.testing.assert_allclose(tau0, tau1, atol=1e-8)

    def test_donor_permutation_equivariance(self, rng):
        p, s = _low_rank_panel(rng)
        f0 = mc.fit(p, s, mc.McConfig(0.2, rel_tol=1e-12))
        order = [0] + list(rng.permutation(np.arange(1, p.shape[0])))
        q = p.select_units([p.units[i] for i in order])
        sq = build_observed_sets(q, treat_at(q, s.t0))
        f1 = mc.fit(q, sq, mc.McConfig(0.2, rel_tol=1e-12))
        np.testing.assert_allclose(f1.imputed, f0.imputed, atol=1e-10)
        np.testing.assert_allclose(f1.alpha, f0.alpha[order], atol=1e-9)
        np.testing.assert_allclose(f1.l, f0.l[order], atol=1e-9)

    def test_rank_non_increasing_in_lambda(self, rng):
        p, s = _low_rank_panel(rng, r=3, sigma=0.3)
        smax = mc.initial_residual_smax(p, s)
        ranks = [mc.fit(p, s, mc.McConfig(lam)).effective_rank for lam in np.logspace(-3, 0.5, 12) * smax]
        assert all(b <= a for a, b in zip(ranks, ranks[1:]))
        assert ranks[-1] == 0 and ranks[0] > 0

    def test_stationarity_at_convergence(self, rng):
        p, s = _low_rank_panel(rng, holes=0.1)
        cfg = mc.McConfig(0.1)
        f = mc.fit(p, s, cfg)
        assert f.converged
        again = mc.fit(p, s, mc.McConfig(0.1, max_iters=1, accelerate=False), warm_start=f.l)
        assert abs(again.objective - f.objective) < 10 * cfg.rel_tol * abs(f.objective)

    def test_max_singular_scale(self, rng):
        p, s = _low_rank_panel(rng)
        smax = mc.initial_residual_smax(p, s)
        f = mc.fit(p, s, mc.McConfig(0.05, lambda_scale="max-singular"))
        assert f.lambda_used == pytest.approx(0.05 * smax)

    def test_non_convergence_is_flagged(self, rng):
        p, s = _low_rank_panel(rng)
        f = mc.fit(p, s, mc.McConfig(1e-4, max_iters=3))
        assert not f.converged and f.iters == 3
        assert f.summary()["converged"] is False

    def test_identification_errors(self):
        y = np.ones((3, 5))
        mask = np.ones((3, 5), bool)
        mask[1] = False
        p = make_panel(y, mask)
        s = build_observed_sets(p, treat_at(p, 3))
        with pytest.raises(mc.IdentificationError, match="unit rows \\[1\\]"):
            mc.fit(p, s, mc.McConfig(0.1))
        mask = np.ones((3, 5), bool)
        mask[1:, 4] = False
        p = make_panel(y, mask)
        s = build_observed_sets(p, treat_at(p, 4))
        with pytest.raises(mc.IdentificationError, match="period columns \\[4\\]"):
            mc.fit(p, s, mc.McConfig(0.1))

    def test_non_finite_objective(self):
        y = np.array([[1e200, -1e200, 1e200, 5.0], [1e200, 1e200, -1e200, 1.0], [1.0, 2.0, 3.0, 1e200]])
        p = make_panel(y)
        s = build_observed_sets(p, treat_at(p, 3))
        with pytest.raises(mc.NonFiniteObjectiveError):
            mc.fit(p, s, mc.McConfig(0.1))

    def test_dgp_imputation_accuracy(self):
        spec = dgp.DgpSpec(n_periods=60, t0=48, effect=dgp.EffectProfile.zero(), seed=7)
        panel, treat, truth = dgp.generate(spec)
        s = build_observed_sets(panel, treat)
        f = mc.fit(panel, s, mc.McConfig(0.03, lambda_scale="max-singular"))
        rmse = float(np.sqrt(np.mean((f.imputed - truth.y0_missing) ** 2)))
        assert rmse <= 3 * spec.noise_sigma

    def test_dgp_effect_recovered(self):
        panel, treat, truth = dgp.generate(dgp.DgpSpec(seed=11))
        s = build_observed_sets(panel, treat)
        f = mc.fit(panel, s, mc.McConfig(0.03, lambda_scale="max-singular"))
        gap = panel.values[0, s.missing_periods] - f.imputed
        assert abs(gap.mean() - 0.7) <= 0.15

    def test_deterministic(self, rng):
        p, s = _low_rank_panel(rng)
        a = mc.fit(p, s, mc.McConfig(0.1))
        b = mc.fit(p, s, mc.McConfig(0.1))
        assert np.array_equal(a.l, b.l) and a.objective_trace == b.objective_trace
