"""Domain types and pointwise estimating functions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medrobust import (
    Dataset,
    EtaParams,
    InputError,
    ModelSpec,
    NuisanceValues,
    Theta,
    effects_from_theta,
    gamma,
    phi_tilde,
    psi,
)
from medrobust.core import effect_gradients
from medrobust.simulation import oracle_nuisances

finite = st.floats(-50, 50, allow_nan=False)


def _tiny(n=12, seed=0):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    a = (np.arange(n) % 2).astype(float)
    return Dataset(rng.standard_normal(n), a, rng.standard_normal(n), x)


class TestDataset:
    def test_valid(self):
        d = _tiny()
        assert d.n == 12 and d.p == 2
        assert not d.y.flags.writeable

    def test_length_mismatch(self):
        d = _tiny()
        with pytest.raises(InputError):
            Dataset(d.y[:-1], d.a, d.m, d.x)

    def test_missing_value(self):
        d = _tiny()
        y = d.y.copy()
        y[3] = np.nan
        with pytest.raises(InputError):
            Dataset(y, d.a, d.m, d.x)

    def test_first_column_constant(self):
        d = _tiny()
        with pytest.raises(InputError):
            Dataset(d.y, d.a, d.m, d.x[:, ::-1])

    def test_rank_deficient(self):
        d = _tiny()
        x = np.column_stack([d.x, 2 * d.x[:, 1]])
        with pytest.raises(InputError):
            Dataset(d.y, d.a, d.m, x)

    def test_too_few_rows(self):
        d = _tiny()
        with pytest.raises(InputError, match="n > p"):
            Dataset(d.y[:6], d.a[:6], d.m[:6], d.x[:6])

    def test_take(self):
        d = _tiny()
        sub = d.take([0, 0, 5, 7, 1, 2, 3, 4, 8, 9])
        assert sub.n == 10 and sub.y[1] == d.y[0]


class TestModelSpec:
    def test_logistic_needs_binary(self):
        with pytest.raises(InputError):
            ModelSpec((0,), (0,), (0,), (0,), exposure_kind="continuous")

    def test_default_continuous_uses_identity(self):
        assert ModelSpec.default(3, "continuous").pi_link == "identity"

    def test_check_columns(self):
        spec = ModelSpec((0, 5), (0,), (0,), (0,))
        with pytest.raises(InputError):
            spec.check(_tiny())

    def test_check_binary_exposure(self):
        d = _tiny()
        d2 = Dataset(d.y, d.a + 0.5, d.m, d.x)
        with pytest.raises(InputError):
            ModelSpec.default(2).check(d2)

    def test_duplicate_columns(self):
        with pytest.raises(InputError):
            ModelSpec((0, 0), (0,), (0,), (0,))


class TestPsi:
    def test_worked_example(self):
        out = psi(4.0, 1.0, 1.0, Theta(2, 1, 1.5), -0.5)
        np.testing.assert_allclose(out, [1.0, 0.0, -0.5])

    @given(finite, finite, finite)
    def test_zero_theta(self, y, a, m):
        out = psi(y, a, m, Theta(0, 0, 0), 0.0)
        np.testing.assert_allclose(out, [y, m * y, m], rtol=1e-12, atol=1e-12)

    def test_row_permutation(self):
        d = _tiny()
        perm = np.random.default_rng(1).permutation(d.n)
        th = Theta(0.3, -1.0, 2.0)
        h = d.x[:, 1] * 0.7
        full = psi(d.y, d.a, d.m, th, h)
        np.testing.assert_array_equal(full[perm], psi(d.y[perm], d.a[perm], d.m[perm], th, h[perm]))

    def test_lemma_restriction(self, big_draw):
        # E[psi2 - rho | A] = 0: strata means at A = 0 and A = 1
        cfg, data, _ = big_draw
        nv = oracle_nuisances(cfg, data.x)
        d = psi(data.y, data.a, data.m, cfg.theta, nv.h_star)[:, 1] - nv.rho
        for level in (0.0, 1.0):
            sel = d[data.a == level]
            assert abs(sel.mean()) < 4 * sel.std(ddof=1) / np.sqrt(sel.size)

    def test_printed_and_full_residual_forms_agree(self, big_draw):
        # psi2 with Y - theta1 M or with the full outcome residual both satisfy the restriction
        cfg, data, _ = big_draw
        nv = oracle_nuisances(cfg, data.x)
        th = cfg.theta
        r_m = data.m - th.theta3 * data.a - nv.h_star
        for r_y in (data.y - th.theta1 * data.m,
                    data.y - th.theta1 * data.m - th.theta2 * data.a - nv.g_star):
            d = (data.a - nv.pi) * (r_m * r_y - nv.rho)
            assert abs(d.mean()) < 4 * d.std(ddof=1) / np.sqrt(d.size)


class TestPhiTilde:
    def _nv(self, pi, rho):
        return NuisanceValues(np.float64(pi), np.float64(0.0), np.float64(rho), np.float64(0.0))

    def test_worked_example(self):
        # outcome residual 1, mediator residual -0.5 at theta = 0; bracket (rM rY - rho)
        out = phi_tilde(1.0, 1.0, -0.5, Theta(0, 0, 0), self._nv(0.5, 0.2))
        np.testing.assert_allclose(out, [0.5, 0.5 * (-0.5 * 1.0 - 0.2), -0.25])
        np.testing.assert_allclose(out, [0.5, -0.35, -0.25])

    def test_vanishing_exposure_residual(self):
        out = phi_tilde(3.0, 0.4, 1.2, Theta(1, 1, 1), self._nv(0.4, 0.7))
        np.testing.assert_allclose(out, [0.0, 0.0, 0.0])

    def test_mean_zero_at_truth(self, big_draw):
        cfg, data, _ = big_draw
        phi = phi_tilde(data.y, data.a, data.m, cfg.theta, oracle_nuisances(cfg, data.x))
        se = phi.std(axis=0, ddof=1) / np.sqrt(data.n)
        assert np.all(np.abs(phi.mean(axis=0)) < 4 * se)

    def test_row_permutation(self):
        d = _tiny()
        nv = NuisanceValues(np.full(d.n, 0.4), d.x[:, 1], np.full(d.n, 0.2), -d.x[:, 1])
        perm = np.random.default_rng(2).permutation(d.n)
        nvp = NuisanceValues(nv.pi[perm], nv.g_star[perm], nv.rho[perm], nv.h_star[perm])
        th = Theta(1.0, 0.5, -0.3)
        np.testing.assert_array_equal(phi_tilde(d.y, d.a, d.m, th, nv)[perm],
                                      phi_tilde(d.y[perm], d.a[perm], d.m[perm], th, nvp))


class TestGamma:
    def _one_row(self, y, a, m):
        # n must exceed p + 4, so replicate the row
        n = 6
        return Dataset(np.full(n, y), np.r_[a, 1 - a, a, 1 - a, a, 1 - a],
                       np.full(n, m), np.ones((n, 1)))

    def test_logistic_score_at_zero(self):
        d = self._one_row(0.0, 1.0, 0.0)
        spec = ModelSpec((0,), (0,), (0,), (0,), rho_link="identity")
        eta = EtaParams(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
        g = gamma(d, Theta(0, 0, 0), eta, spec)
        assert g[0, 0] == pytest.approx(0.5)

    def test_log_link_rho_score(self):
        # rM rY = -0.45, rho = 0.2: 0.2 * (-0.45 - 0.2)
        d = self._one_row(1.0, 1.0, -0.45)
        spec = ModelSpec((0,), (0,), (0,), (0,))
        eta = EtaParams(np.zeros(1), np.zeros(1), np.array([np.log(0.2)]), np.zeros(1))
        g = gamma(d, Theta(0, 0, 0), eta, spec)
        assert g[0, 2] == pytest.approx(-0.13)

    def test_gamma1_free_of_theta(self, sample800):
        data, spec = sample800
        eta = EtaParams(np.array([-1, 1.5, -0.3]), np.ones(3), np.zeros(3), np.ones(3))
        g_a = gamma(data, Theta(2, 1, 1.5), eta, spec)
        g_b = gamma(data, Theta(-4, 3, 0.1), eta, spec)
        np.testing.assert_array_equal(g_a[:, :3], g_b[:, :3])


class TestEffects:
    def test_true_effects(self):
        assert effects_from_theta(Theta(2, 1, 1.5), (0, 1)) == pytest.approx((1.0, 3.0))

    @given(finite, finite, finite, finite)
    def test_null_contrast(self, t1, t2, t3, a):
        assert effects_from_theta(Theta(t1, t2, t3), (a, a)) == (0.0, 0.0)

    @given(finite, finite, finite, st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=50)
    def test_zeta_zero_reduces(self, t1, t2, t3, a, mean_h):
        base = effects_from_theta(Theta(t1, t2, t3), (0.0, a))
        inter = effects_from_theta(Theta(t1, t2, t3, 0.0), (0.0, a), mean_h)
        np.testing.assert_allclose(inter, base, rtol=1e-12, atol=1e-9)

    @given(finite, finite, finite, st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=50)
    def test_linear_in_contrast(self, t1, t2, t3, d1, d2):
        th = Theta(t1, t2, t3)
        s = np.add(effects_from_theta(th, (0, d1)), effects_from_theta(th, (0, d2)))
        np.testing.assert_allclose(effects_from_theta(th, (0, d1 + d2)), s, rtol=1e-9, atol=1e-7)

    def test_interaction_example(self):
        nde, nie = effects_from_theta(Theta(2, 1, 1.5, 0.5), (0, 1), mean_h_star=1.0)
        assert nde == pytest.approx(1.5)
        assert nie == pytest.approx(3.75)

    def test_interaction_needs_mean_h(self):
        with pytest.raises(InputError):
            effects_from_theta(Theta(2, 1, 1.5, 0.5), (0, 1))

    def test_gradients_match_finite_differences(self):
        th, mh, c = Theta(2.0, 1.0, 1.5, 0.5), 1.3, (0.2, 1.7)
        g_nde, g_nie = effect_gradients(th, c, mh)
        base = np.r_[th.as_array(), mh]
        for which, grad in ((0, g_nde), (1, g_nie)):
            num = []
            for k in range(5):
                step = np.zeros(5)
                step[k] = 1e-6
                hi = effects_from_theta(Theta(*(base + step)[:4]), c, (base + step)[4])[which]
                lo = effects_from_theta(Theta(*(base - step)[:4]), c, (base - step)[4])[which]
                num.append((hi - lo) / 2e-6)
            np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-8)
