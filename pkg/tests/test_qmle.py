from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epichange import _kernels as K
from epichange.models import get_model, simulate
from epichange.qmle import (
    ConfigurationError,
    G_F_hat,
    Segment,
    fit,
    neg_qlik,
    q_term,
    q_terms,
    sandwich_term,
    score_hessian,
    sigma_hat,
)
from test_models import EXAMPLES, direct_moments


class TestSegment:
    def test_first_term_skips_seed_value(self):
        assert Segment(1, 10).card == 9
        assert Segment(5, 10).card == 6

    def test_bounds(self):
        with pytest.raises(ConfigurationError):
            Segment(0, 5).check(10)
        with pytest.raises(ConfigurationError):
            Segment(3, 11).check(10)
        with pytest.raises(ConfigurationError, match="need >= 4"):
            Segment(5, 7).check(10, d=3)


class TestObjective:
    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_terms_match_direct_moments(self, family, rng):
        th = EXAMPLES[family]
        x = simulate(family, th, 40, rng=rng)
        for t in (2, 9, 40):
            f, h = direct_moments(family, th, x, t)
            assert q_term(family, th, x, t) == pytest.approx(
                (x[t - 1] - f) ** 2 / h + np.log(h), rel=1e-10, abs=1e-12)

    def test_segment_sum(self, rng):
        x = simulate("garch11", EXAMPLES["garch11"], 80, rng=rng)
        th = EXAMPLES["garch11"]
        assert neg_qlik("garch11", th, x, (1, 80)) == pytest.approx(
            q_terms("garch11", th, x, (2, 80)).sum(), rel=1e-13)

    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_score_hessian_central_differences(self, family, rng):
        th = np.asarray(EXAMPLES[family], dtype=float)
        x = simulate(family, th, 120, rng=rng)
        T = Segment(11, 120)
        g, h = score_hessian(family, th, x, T)
        for i in range(th.size):
            e = np.zeros_like(th)
            e[i] = 1e-6 * max(1.0, abs(th[i]))
            vp, vm = neg_qlik(family, th + e, x, T), neg_qlik(family, th - e, x, T)
            assert (vp - vm) / (2 * e[i]) == pytest.approx(g[i], rel=1e-5, abs=1e-6)
            gp, _ = score_hessian(family, th + e, x, T)
            gm, _ = score_hessian(family, th - e, x, T)
            np.testing.assert_allclose((gp - gm) / (2 * e[i]), h[:, i],
                                       rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_hot_sweep_agrees_with_generic(self, family, rng):
        m = get_model(family)
        th = np.asarray(EXAMPLES[family], dtype=float)
        x = simulate(family, th, 300, rng=rng)
        for lo, hi in ((1, 300), (40, 250)):
            for exact in (True, False):
                v, g, h, _ = K.objective(m.code, th, x, lo, hi, K.MODE_HESS, exact)
                hv, hg, hh = K.hot_objective(m.code, th, x, lo, hi, exact)
                assert hv == pytest.approx(v, rel=1e-12)
                np.testing.assert_allclose(hg, g, rtol=1e-10, atol=1e-10)
                np.testing.assert_allclose(hh, h, rtol=1e-10, atol=1e-10)

    def test_per_term_outer_products(self, rng):
        th = np.asarray(EXAMPLES["arch1"])
        x = simulate("arch1", th, 60, rng=rng)
        _, _, gs = score_hessian("arch1", th, x, (2, 60), per_term=True)
        manual = np.zeros((2, 2))
        for t in range(2, 61):
            g, _ = score_hessian("arch1", th, x, (t, t))
            manual += np.outer(g, g)
        np.testing.assert_allclose(gs, manual, rtol=1e-12)

    def test_G_F_are_averages(self, rng):
        th = np.asarray(EXAMPLES["garch11"])
        x = simulate("garch11", th, 100, rng=rng)
        T = Segment(1, 100)
        G, F = G_F_hat("garch11", th, x, T)
        _, h, gs = score_hessian("garch11", th, x, T, per_term=True)
        np.testing.assert_allclose(G, gs / T.card, rtol=1e-12)
        np.testing.assert_allclose(F, h / T.card, rtol=1e-12)


class TestFit:
    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_recovers_parameters(self, family):
        th = np.asarray(EXAMPLES[family])
        x = simulate(family, th, 4000, rng=2024)
        f = fit(family, x, (1, 4000))
        assert f.converged
        se = f.std_errors
        assert np.all(np.abs(f.theta_hat - th) <= 4 * se + 1e-3)

    def test_stationary_point(self):
        x = simulate("arma11-zero", (-0.4, -0.25), 800, rng=1)
        f = fit("arma11-zero", x, (1, 800))
        g, _ = score_hessian("arma11-zero", f.theta_hat, x, (1, 800))
        assert np.max(np.abs(g)) <= 1e-6 * max(1.0, abs(f.neg_qlik))

    def test_estimates_inside_region(self):
        x = simulate("garch11", (0.15, 0.3, 0.25), 200, rng=4)
        f = fit("garch11", x, (1, 96))
        a, b = get_model("garch11").constraints()
        assert np.all(a @ f.theta_hat <= b + 1e-12)

    def test_initial_value_does_not_matter_on_clear_optimum(self):
        x = simulate("ar1", (813.0, 0.3), 1000, rng=6)
        a = fit("ar1", x, (1, 1000))
        b = fit("ar1", x, (1, 1000), init=(1100.0, 0.05))
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-6)

    def test_short_segment_rejected(self):
        with pytest.raises(ConfigurationError):
            fit("garch11", np.ones(20), (5, 7))


class TestSandwich:
    def test_formula(self):
        G = np.array([[2.0, 0.3], [0.3, 1.0]])
        F = np.array([[1.5, 0.2], [0.2, 0.7]])
        np.testing.assert_allclose(sandwich_term(G, F), F @ np.linalg.solve(G, F), rtol=1e-12)

    def test_singular_is_dropped(self):
        v = np.array([1.0, 2.0])
        assert sandwich_term(np.outer(v, v), np.eye(2)) is None
        assert sandwich_term(np.diag([1.0, 0.0]), np.eye(2)) is None
        assert sandwich_term(np.full((2, 2), np.nan), np.eye(2)) is None

    @settings(max_examples=50, deadline=None)
    @given(scale=st.floats(1e-4, 1e4), rho=st.floats(-0.9, 0.9))
    def test_units_do_not_read_as_singularity(self, scale, rho):
        D = np.diag([scale, 1.0])
        G = D @ np.array([[1.0, rho], [rho, 1.0]]) @ D
        assert sandwich_term(G, np.eye(2)) is not None

    def test_near_singular_threshold(self):
        eps = 1e-12
        G = np.array([[1.0, 1.0 - eps], [1.0 - eps, 1.0]])
        assert sandwich_term(G, np.eye(2)) is None
        G = np.array([[1.0, 1.0 - 1e-6], [1.0 - 1e-6, 1.0]])
        assert sandwich_term(G, np.eye(2)) is not None

    def test_sigma_hat_psd_and_symmetric(self):
        x = simulate("arch1", (0.6, 0.4), 600, rng=8)
        s = sigma_hat("arch1", x, 80)
        assert all(s.used_segments)
        np.testing.assert_array_equal(s.sigma, s.sigma.T)
        assert np.linalg.eigvalsh(s.sigma).min() > 0

    def test_sigma_hat_window_check(self):
        with pytest.raises(ConfigurationError):
            sigma_hat("arch1", np.ones(20), 10)
