from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epichange import scan
from epichange.models import simulate
from epichange.qmle import ConfigurationError, fit
from epichange.scan import (
    DegenerateNormalizationError,
    ScanConfig,
    c_vector,
    default_windows,
    q_pair,
    read_heatmap,
    run_scan,
    scan_set,
    scan_size,
    write_heatmap,
)


def brute_pairs(n, v):
    return [(k1, k2) for k1 in range(v, n - v + 1) for k2 in range(k1 + v, n - v + 1)]


class TestScanSet:
    def test_small_example(self):
        pairs = scan_set(20, 5)
        assert len(pairs) == 21
        assert pairs[0].tolist() == [5, 10] and pairs[-1].tolist() == [10, 15]

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(12, 80), data=st.data())
    def test_matches_enumeration(self, n, data):
        v = data.draw(st.integers(1, n // 3))
        assert scan_set(n, v).tolist() == [list(p) for p in brute_pairs(n, v)]
        assert scan_size(n, v) == len(brute_pairs(n, v))

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(30, 120), stride=st.integers(2, 7), data=st.data())
    def test_stride_is_a_subset_keeping_row_ends(self, n, stride, data):
        v = data.draw(st.integers(2, n // 3))
        full = {tuple(p) for p in scan_set(n, v).tolist()}
        thin = scan_set(n, v, stride).tolist()
        assert {tuple(p) for p in thin} <= full
        assert len(thin) == scan_size(n, v, stride)
        for k1 in {p[0] for p in thin}:
            assert [k1, n - v] in thin
            assert (k1 - v) % stride == 0

    def test_empty_set(self):
        with pytest.raises(ConfigurationError):
            scan_set(20, 7)

    def test_default_windows(self):
        assert default_windows(500) == (96, 38)
        assert default_windows(1000) == (125, 47)
        with pytest.raises(ConfigurationError):
            default_windows(20)


class TestContrast:
    @settings(max_examples=100, deadline=None)
    @given(th=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=3),
           k1=st.integers(10, 200), gap=st.integers(10, 200))
    def test_zero_for_equal_estimates(self, th, k1, gap):
        c = c_vector(500, k1, min(k1 + gap, 490), th, th, th)
        assert np.all(c == 0.0)

    def test_expanded_form(self, rng):
        tl, tm, tr = rng.standard_normal((3, 2))
        n, k1, k2 = 500, 120, 380
        c = c_vector(n, k1, k2, tl, tm, tr)
        direct = (k2 - k1) / n ** 1.5 * ((n - (k2 - k1)) * tm - k1 * tl - (n - k2) * tr)
        np.testing.assert_allclose(c, direct, rtol=1e-12, atol=1e-15)

    def test_quadratic_form(self):
        assert q_pair([1.0, 2.0], np.array([[2.0, 0.5], [0.5, 1.0]])) == pytest.approx(8.0)


@pytest.fixture(scope="module")
def small_scan():
    x = simulate("arma11-zero", (-0.4, -0.25), 150, rng=31)
    return x, run_scan("arma11-zero", x, ScanConfig(u_n=40, v_n=20))


class TestRunScan:
    def test_argmax_and_counts(self, small_scan):
        _, r = small_scan
        assert r.n_pairs == scan_size(150, 20)
        vals = [q for _, _, q in r.iter_surface()]
        assert len(vals) == r.n_pairs
        assert r.Q_n == max(vals)
        k1, k2 = r.t_hat
        assert r.surface[k1, k2] == r.Q_n
        assert r.reject == (r.Q_n > r.critical_value)

    @pytest.mark.parametrize("family, theta", [
        ("ar1", (813.0, 0.3)), ("arma11", (1.0, 0.15, 0.2)),
        ("arma11-zero", (-0.4, -0.25)), ("arch1", (0.6, 0.4)),
        ("garch11", (0.15, 0.3, 0.25)),
    ])
    def test_warm_starts_match_cold_fits(self, family, theta):
        # 20 random pairs at the default windows; equal Q means the warm
        # chains reached the same optima as independent cold fits
        n = 500
        x = simulate(family, theta, n, rng=1)
        r = run_scan(family, x, ScanConfig(refit_regimes=False))
        pairs = scan_set(n, r.v_n)
        pick = np.random.default_rng(1).choice(len(pairs), 20, replace=False)
        off = []
        for k1, k2 in pairs[pick]:
            th = [fit(family, x, s).theta_hat for s in ((1, k1), (k1 + 1, k2), (k2 + 1, n))]
            q = q_pair(c_vector(n, k1, k2, *th), r.sigma)
            if abs(q - r.surface[k1, k2]) > 1e-5 * max(1.0, q):
                off.append((int(k1), int(k2), q, float(r.surface[k1, k2])))
        assert not off, off

    def test_regime_fits_follow_breaks(self, small_scan):
        _, r = small_scan
        k1, k2 = r.t_hat
        segs = [(f.segment.lo, f.segment.hi) for f in r.regime_fits]
        assert segs == [(1, k1), (k1 + 1, k2), (k2 + 1, 150)]

    def test_stride_never_exceeds_full_scan(self, small_scan):
        x, r = small_scan
        thin = run_scan("arma11-zero", x, ScanConfig(u_n=40, v_n=20, stride=3,
                                                     refit_regimes=False))
        assert thin.Q_n <= r.Q_n + 1e-9
        assert thin.n_pairs == scan_size(150, 20, 3)

    def test_supplied_critical_value(self, small_scan):
        x, _ = small_scan
        r = run_scan("arma11-zero", x, ScanConfig(u_n=40, v_n=20, critical_value=0.0,
                                                  refit_regimes=False))
        assert r.critical_value == 0.0 and r.reject

    def test_degenerate_normalisation(self):
        x = np.tile([1.0, -1.0], 40)
        with pytest.raises(DegenerateNormalizationError):
            run_scan("arch1", x, ScanConfig(u_n=20, v_n=10))

    @pytest.mark.parametrize("cfg", [ScanConfig(alpha=1.5), ScanConfig(stride=0),
                                     ScanConfig(u_n=2), ScanConfig(v_n=40)])
    def test_bad_configuration(self, cfg):
        with pytest.raises(ConfigurationError):
            run_scan("arch1", np.random.default_rng(0).standard_normal(100), cfg)


class TestHeatmap:
    def test_round_trip(self, small_scan, tmp_path):
        _, r = small_scan
        path = tmp_path / "h.csv"
        rows = write_heatmap(r, path)
        data, meta = read_heatmap(path)
        assert rows == r.n_pairs == data.shape[0]
        assert float(meta["critical_value"]) == pytest.approx(r.critical_value, abs=1e-6)
        assert meta["t_hat"] == f"{r.t_hat[0]},{r.t_hat[1]}"
        for k1, k2, q in data[:: max(1, rows // 50)]:
            assert q == pytest.approx(r.surface[int(k1), int(k2)], rel=1e-9)
