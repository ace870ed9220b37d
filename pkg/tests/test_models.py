from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epichange import _kernels as K
from epichange.models import (
    FAMILIES,
    DomainError,
    EpidemicScenario,
    conditional_moments,
    constraint_violations,
    get_model,
    innovation_norm,
    moment_derivatives,
    simulate,
    simulate_epidemic,
    validate_params,
)


def direct_moments(family: str, th, x, t):
    """Truncated moments written out as explicit sums over the past."""
    past = np.asarray(x[:t - 1], dtype=float)[::-1]
    j = np.arange(past.size)
    if family == "ar1":
        a0, a1 = th
        return a0 + a1 * (past[0] if past.size else 0.0), 1.0
    if family == "arma11":
        a0, a1, b1 = th
        return a0 / (1 + b1) + (a1 + b1) * np.sum((-b1) ** j * past), 1.0
    if family == "arma11-zero":
        a1, b1 = th
        return (a1 + b1) * np.sum((-b1) ** j * past), 1.0
    if family == "arch1":
        a0, a1 = th
        return 0.0, a0 + a1 * (past[0] ** 2 if past.size else 0.0)
    a0, a1, b1 = th
    return 0.0, a0 / (1 - b1) + a1 * np.sum(b1 ** j * past ** 2)


EXAMPLES = {
    "ar1": (813.0, 0.3),
    "arma11": (1.0, 0.15, 0.2),
    "arma11-zero": (-0.4, -0.25),
    "arch1": (0.6, 0.4),
    "garch11": (0.15, 0.3, 0.25),
}


class TestRegistry:
    def test_five_families(self):
        assert sorted(FAMILIES) == ["ar1", "arch1", "arma11", "arma11-zero", "garch11"]
        assert [FAMILIES[f].d for f in ("ar1", "arma11", "arma11-zero", "arch1", "garch11")] \
            == [2, 3, 2, 2, 3]

    def test_aliases_and_case(self):
        assert get_model("ARMA11_ZERO").family == "arma11-zero"
        assert get_model(" GARCH11 ").family == "garch11"

    def test_unknown_family(self):
        with pytest.raises(ValueError, match="unknown model"):
            get_model("tar")


class TestConditionalMoments:
    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_matches_direct_sums(self, family, rng):
        x = simulate(family, EXAMPLES[family], 60, rng=rng)
        for t in (2, 3, 17, 60):
            f, h = conditional_moments(family, EXAMPLES[family], x, t)
            fd, hd = direct_moments(family, EXAMPLES[family], x, t)
            assert f == pytest.approx(fd, rel=1e-12, abs=1e-12)
            assert h == pytest.approx(hd, rel=1e-12, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(a1=st.floats(0.01, 0.6), b1=st.floats(0.0, 0.35), seed=st.integers(0, 10_000))
    def test_garch_expansion_random_parameters(self, a1, b1, seed):
        x = np.random.default_rng(seed).standard_normal(40)
        th = (0.2, a1, b1)
        f, h = conditional_moments("garch11", th, x, 40)
        assert f == 0.0
        assert h == pytest.approx(direct_moments("garch11", th, x, 40)[1], rel=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(a1=st.floats(-0.45, 0.45), b1=st.floats(-0.45, 0.45), seed=st.integers(0, 10_000))
    def test_arma_zero_expansion_random_parameters(self, a1, b1, seed):
        x = np.random.default_rng(seed).standard_normal(40)
        f, _ = conditional_moments("arma11-zero", (a1, b1), x, 40)
        assert f == pytest.approx(direct_moments("arma11-zero", (a1, b1), x, 40)[0],
                                  rel=1e-10, abs=1e-12)

    def test_only_past_values_enter(self, rng):
        x = rng.standard_normal(30)
        y = x.copy()
        y[20:] += 100.0
        assert conditional_moments("garch11", EXAMPLES["garch11"], x, 21) == \
            conditional_moments("garch11", EXAMPLES["garch11"], y, 21)

    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_derivatives_central_differences(self, family, rng):
        th = np.asarray(EXAMPLES[family], dtype=float)
        x = simulate(family, th, 40, rng=rng)
        df, _, dh, _ = moment_derivatives(family, th, x, 40)
        for i in range(th.size):
            e = np.zeros_like(th)
            e[i] = 1e-6 * max(1.0, abs(th[i]))
            fp, hp = conditional_moments(family, th + e, x, 40)
            fm, hm = conditional_moments(family, th - e, x, 40)
            assert (fp - fm) / (2 * e[i]) == pytest.approx(df[i], rel=1e-6, abs=1e-7)
            assert (hp - hm) / (2 * e[i]) == pytest.approx(dh[i], rel=1e-6, abs=1e-7)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            conditional_moments("ar1", (0.0, 0.3), np.zeros(10), 11)


class TestDomain:
    def test_gaussian_fourth_norm(self):
        assert innovation_norm(4.0) ** 2 == pytest.approx(math.sqrt(3.0))
        assert innovation_norm(2.0) == pytest.approx(1.0)

    def test_garch_moment_region_of_order_four(self):
        assert validate_params("garch11", (0.15, 0.3, 0.25), r=4)
        assert validate_params("garch11", (0.15, 0.3, 0.55), r=2)
        assert not validate_params("garch11", (0.15, 0.3, 0.55), r=4)

    @pytest.mark.parametrize("family, theta", [
        ("ar1", (0.0, 1.0)), ("arma11-zero", (0.7, 0.4)), ("arch1", (-0.1, 0.3)),
        ("garch11", (0.1, 0.6, 0.5)), ("garch11", (0.1, -0.1, 0.5)),
    ])
    def test_outside_region(self, family, theta):
        assert constraint_violations(get_model(family), theta)
        with pytest.raises(DomainError):
            simulate(family, theta, 10, rng=0)

    def test_wrong_dimension(self):
        with pytest.raises(ValueError, match="takes 3 parameters"):
            simulate("garch11", (0.1, 0.2), 10)


class TestSimulation:
    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_reproducible_and_sized(self, family):
        a = simulate(family, EXAMPLES[family], 300, rng=7)
        b = simulate(family, EXAMPLES[family], 300, rng=7)
        assert a.shape == (300,)
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a))

    def test_burn_in_drops_prefix(self):
        long = simulate("arch1", EXAMPLES["arch1"], 400, burn_in=100, rng=3)
        short = simulate("arch1", EXAMPLES["arch1"], 300, burn_in=200, rng=3)
        assert np.array_equal(long[100:], short)

    def test_arch_sample_variance(self):
        x = simulate("arch1", (0.6, 0.4), 200_000, rng=11)
        assert x.var() == pytest.approx(0.6 / (1 - 0.4), rel=0.03)

    def test_ar1_sample_mean(self):
        x = simulate("ar1", (813.0, 0.3), 50_000, rng=11)
        assert x.mean() == pytest.approx(813.0 / 0.7, rel=1e-3)

    @pytest.mark.parametrize("family", sorted(EXAMPLES))
    def test_equal_regimes_reproduce_null_path(self, family):
        th = EXAMPLES[family]
        x, _, _ = simulate_epidemic(family, EpidemicScenario(th, th, 0.3, 0.7, 250), rng=5)
        assert np.array_equal(x, simulate(family, th, 250, rng=5))

    def test_epidemic_window_and_prefix(self):
        th1, th2 = (0.6, 0.4), (0.2, 0.4)
        x, t1, t2 = simulate_epidemic("arch1", EpidemicScenario(th1, th2, 0.3, 0.7, 500), rng=9)
        assert (t1, t2) == (150, 350)
        null = simulate("arch1", th1, 500, rng=9)
        assert np.array_equal(x[:t1], null[:t1])
        assert not np.array_equal(x[t1:t2], null[t1:t2])

    def test_invalid_fractions(self):
        with pytest.raises(DomainError):
            simulate_epidemic("arch1", EpidemicScenario((0.6, 0.4), (0.2, 0.4), 0.7, 0.3, 500))

    def test_first_term_constant(self):
        assert K.FIRST_TERM == 2
