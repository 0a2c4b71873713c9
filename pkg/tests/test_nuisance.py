"""Working-model evaluation and the theta-profiled nuisance fit."""

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from medrobust import ConvergenceError, Dataset, EtaParams, ModelSpec, RankDeficiencyError, Theta
from medrobust.core import gamma
from medrobust.nuisance import (
    eval_nuisances,
    fit_eta_profile,
    fit_logistic,
    least_squares,
    outcome_residual_base,
    rho_start,
)


def _data(n=200, seed=4):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    a = (rng.random(n) < 0.4).astype(float)
    m = 1 + a + x[:, 1] + rng.standard_normal(n) * (1 + a)
    y = 1 + a + 2 * m + rng.standard_normal(n)
    return Dataset(y, a, m, x)


class TestEvalNuisances:
    def test_logistic_at_origin(self):
        x = np.array([[1.0, 0.0, 0.0]] * 8)
        d = Dataset(np.zeros(8), np.r_[np.ones(4), np.zeros(4)], np.arange(8.0), np.column_stack(
            [np.ones(8), np.arange(8.0), np.arange(8.0) ** 2]))
        eta = EtaParams(np.array([-1, 1.5, -0.3]), np.zeros(3), np.zeros(3), np.zeros(3))
        nv = eval_nuisances(eta, d, ModelSpec.default(3))
        assert nv.pi[0] == pytest.approx(1 / (1 + np.e), abs=1e-12)
        assert x.shape == (8, 3)

    def test_rho_intercept_zero(self):
        d = _data()
        spec = ModelSpec((0,), (0,), (0,), (0,))
        nv = eval_nuisances(EtaParams(*(np.zeros(1),) * 4), d, spec)
        np.testing.assert_array_equal(nv.rho, 1.0)

    def test_identity_matches_naive_multiply(self):
        d = _data()
        coef = np.array([0.3, -1.7, 2.2])
        nv = eval_nuisances(EtaParams(np.zeros(3), coef, np.zeros(3), coef[::-1]), d,
                            ModelSpec.default(3))
        naive = [sum(d.x[i, j] * coef[j] for j in range(3)) for i in range(d.n)]
        np.testing.assert_allclose(nv.g_star, naive, rtol=1e-13, atol=1e-13)

    def test_exp_overflow_clamped(self):
        d = _data()
        spec = ModelSpec.default(3)
        eta = EtaParams(np.zeros(3), np.zeros(3), np.array([0.0, 900.0, 0.0]), np.zeros(3))
        with pytest.warns(RuntimeWarning, match="clamped"):
            nv = eval_nuisances(eta, d, spec)
        assert nv.overflow and np.all(np.isfinite(nv.rho))


class TestFitters:
    def test_logistic_intercept_half(self):
        a = np.r_[np.ones(10), np.zeros(10)]
        assert fit_logistic(np.ones((20, 1)), a)[0] == pytest.approx(0.0, abs=1e-12)

    def test_logistic_nonconvergence(self):
        # perfect separation has no finite MLE
        x = np.column_stack([np.ones(20), np.arange(20.0) - 9.5])
        a = (x[:, 1] > 0).astype(float)
        with pytest.raises(ConvergenceError):
            fit_logistic(x, a)

    def test_least_squares_rank_deficiency(self):
        x = np.column_stack([np.ones(10), np.ones(10)])
        with pytest.raises(RankDeficiencyError):
            least_squares(x, np.arange(10.0))

    def test_rho_start(self):
        x = np.ones((4, 1))
        assert rho_start(x, np.array([1.0, -2.0, 0.0, 0.0])) is None
        assert rho_start(x, np.full(4, 1e-9))[0] == pytest.approx(np.log(1e-6))


class TestProfile:
    def test_gamma_mean_zero(self):
        d = _data()
        spec = ModelSpec.default(3)
        th = Theta(1.8, 1.1, 0.9)
        eta = fit_eta_profile(d, th, spec)
        assert np.max(np.abs(gamma(d, th, eta, spec).mean(axis=0))) <= 1e-8

    def test_eta2_closed_form(self):
        d = _data()
        spec = ModelSpec.default(3, rho_link="identity")
        th = Theta(1.5, 0.5, 1.0)
        eta = fit_eta_profile(d, th, spec)
        r = d.y - th.theta1 * d.m - th.theta2 * d.a
        np.testing.assert_allclose(eta.eta2, np.linalg.solve(d.x.T @ d.x, d.x.T @ r), rtol=1e-10)

    def test_identity_residuals_orthogonal(self):
        d = _data()
        spec = ModelSpec.default(3, rho_link="identity")
        th = Theta(1.5, 0.5, 1.0)
        eta = fit_eta_profile(d, th, spec)
        r_y = outcome_residual_base(d, th) - d.x @ eta.eta2
        r_m = d.m - th.theta3 * d.a - d.x @ eta.eta4
        r_p = r_m * r_y - d.x @ eta.eta3
        for r in (r_y, r_m, r_p):
            assert np.max(np.abs(d.x.T @ r)) / d.n <= 1e-8

    def test_fixed_point(self):
        d = _data()
        spec = ModelSpec.default(3)
        th = Theta(0.5, 1.0, 1.0)
        eta = fit_eta_profile(d, th, spec)
        assert eta.rho_link == "log"
        again = fit_eta_profile(d, th, spec, init=eta)
        np.testing.assert_array_equal(again.as_array(), eta.as_array())

    def test_eta1_free_of_theta(self):
        d = _data()
        spec = ModelSpec.default(3)
        e1 = fit_eta_profile(d, Theta(0.5, 1.0, 1.0), spec).eta1
        e2 = fit_eta_profile(d, Theta(-3.0, 0.0, 3.0), spec).eta1
        np.testing.assert_array_equal(e1, e2)

    def test_intercept_only_pi(self):
        d = _data()
        a = np.r_[np.ones(100), np.zeros(100)]
        d2 = Dataset(d.y, a, d.m, d.x)
        spec = ModelSpec((0,), (0, 1, 2), (0, 1, 2), (0, 1, 2))
        eta = fit_eta_profile(d2, Theta(2, 1, 1), spec)
        assert eta.eta1[0] == pytest.approx(0.0, abs=1e-12)

    def test_rho_matches_derivative_free_oracle(self):
        # intercept-only log link: minimise the squared mean gamma3 by golden section
        d = _data()
        spec = ModelSpec((0, 1, 2), (0, 1, 2), (0,), (0, 1, 2))
        th = Theta(0.5, 1.0, 1.0)
        eta = fit_eta_profile(d, th, spec)
        r_y = outcome_residual_base(d, th) - d.x @ eta.eta2
        r_m = d.m - th.theta3 * d.a - d.x @ eta.eta4
        prod = r_m * r_y

        def crit(c):
            rho = np.exp(c)
            return np.mean(rho * (prod - rho)) ** 2

        centre = np.log(prod.mean())
        grid = np.linspace(centre - 3, centre + 3, 601)
        k = int(np.argmin([crit(c) for c in grid]))
        res = minimize_scalar(crit, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden",
                              tol=1e-10)
        assert eta.eta3[0] == pytest.approx(res.x, rel=1e-4)

    def test_log_link_fallback(self):
        d = _data()
        spec = ModelSpec.default(3)
        # at this theta the mean residual product is negative
        th = Theta(5.0, 1.0, -2.0)
        with pytest.warns(RuntimeWarning, match="identity link"):
            eta = fit_eta_profile(d, th, spec)
        assert eta.rho_link == "identity"
        assert np.max(np.abs(gamma(d, th, eta, spec.replace(rho_link="identity")).mean(0))) <= 1e-8
