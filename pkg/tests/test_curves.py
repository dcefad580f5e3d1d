import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupfts.curves import (
    AgeGrid,
    FunctionalTimeSeries,
    Scale,
    SmoothingConfig,
    log_transform,
    select_penalty_gcv,
    smooth_curve,
    smooth_series,
    to_raw,
    trapezoid_weights,
)
from groupfts.errors import ConfigError, DataError

from conftest import make_fts

vals = st.floats(-50, 50, allow_nan=False)


class TestAgeGrid:
    def test_trapezoid_weights_uniform(self):
        np.testing.assert_allclose(trapezoid_weights([0, 1, 2, 3]), [0.5, 1, 1, 0.5])

    def test_trapezoid_weights_integrate_linear_exactly(self):
        u = np.array([0.0, 0.3, 1.0, 2.5, 4.0])
        w = trapezoid_weights(u)
        assert np.all(w > 0)
        assert np.sum(w * (2 * u + 1)) == pytest.approx(4.0**2 + 4.0)

    def test_single_years_has_101_points(self):
        g = AgeGrid.single_years()
        assert g.p == 101 and g.points[0] == 0 and g.points[-1] == 100

    @pytest.mark.parametrize("pts", [[0.0], [0.0, 0.0], [1.0, 0.0], [0.0, np.nan]])
    def test_rejects_bad_points(self, pts):
        with pytest.raises(DataError):
            AgeGrid(pts)


class TestFunctionalTimeSeries:
    def test_rejects_gap_in_years(self):
        with pytest.raises(DataError, match="consecutive"):
            FunctionalTimeSeries(AgeGrid([0, 1]), [2000, 2002], np.zeros((2, 2)))

    def test_rejects_non_finite(self):
        v = np.zeros((2, 3))
        v[1, 2] = np.inf
        with pytest.raises(DataError, match="year 2001, age 2"):
            FunctionalTimeSeries(AgeGrid([0, 1, 2]), [2000, 2001], v)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DataError):
            FunctionalTimeSeries(AgeGrid([0, 1, 2]), [2000, 2001], np.zeros((2, 2)))

    def test_values_are_read_only(self):
        f = make_fts(np.ones((3, 4)))
        with pytest.raises(ValueError):
            f.values[0, 0] = 2.0

    def test_head(self):
        f = make_fts(np.arange(12.0).reshape(4, 3))
        h = f.head(2)
        assert h.n == 2 and list(h.years) == [2000, 2001]


class TestLogTransform:
    def test_power_of_ten(self):
        out = log_transform(make_fts([[0.01, 0.1]], ages=[0, 1]), 10)
        np.testing.assert_allclose(out.values, [[-2.0, -1.0]], atol=1e-15)
        assert out.scale is Scale.LOG10

    def test_floor(self):
        out = log_transform(make_fts([[0.0, 1.0]], ages=[0, 1]), 10, floor=1e-6)
        assert out.values[0, 0] == pytest.approx(-6.0, abs=1e-15)

    def test_natural_log_against_mpmath(self):
        out = log_transform(make_fts([[0.05, 1.0]], ages=[0, 1]), math.e)
        mpmath.mp.dps = 40
        assert out.values[0, 0] == pytest.approx(float(mpmath.log(mpmath.mpf("0.05"))), rel=1e-15)
        assert out.scale is Scale.LN

    def test_negative_rate_names_cell(self):
        with pytest.raises(DataError, match="year 2001, age 1"):
            log_transform(make_fts([[0.1, 0.1], [0.1, -0.2]], ages=[0, 1]))

    def test_rejects_non_raw_scale(self):
        f = log_transform(make_fts([[0.1, 0.2]], ages=[0, 1]))
        with pytest.raises(DataError):
            log_transform(f)

    @pytest.mark.parametrize("base", [2, 0.5])
    def test_rejects_other_bases(self, base):
        with pytest.raises(ConfigError):
            log_transform(make_fts([[0.1, 0.2]], ages=[0, 1]), base)

    @given(
        r=arrays(float, (3, 4), elements=st.floats(0, 10, allow_nan=False)),
        base=st.sampled_from([10, math.e]),
        floor=st.floats(1e-8, 1e-2),
    )
    def test_round_trip(self, r, base, floor):
        f = log_transform(make_fts(r), base, floor)
        back = to_raw(f.values, f.scale)
        np.testing.assert_allclose(back, np.maximum(r, floor), rtol=1e-12)


class TestSmoothCurve:
    grid5 = AgeGrid(np.arange(5.0))

    def test_identity_without_penalty(self, rng):
        raw = rng.standard_normal(5)
        out = smooth_curve(raw, SmoothingConfig(penalty=0.0), self.grid5)
        assert np.array_equal(out, raw)

    def test_pava_hand_case(self):
        out = smooth_curve(
            np.array([1.0, 3.0, 2.0]), SmoothingConfig(0.0, monotone_from_age=65), AgeGrid([65, 66, 67])
        )
        np.testing.assert_allclose(out, [1.0, 2.5, 2.5], atol=1e-15)

    @pytest.mark.parametrize("penalty", [0.0, 0.1, 10.0, 1e3, None])
    def test_linear_ramp_unchanged(self, penalty):
        ramp = np.arange(5.0)
        out = smooth_curve(ramp, SmoothingConfig(penalty), self.grid5)
        np.testing.assert_allclose(out, ramp, atol=1e-9)

    def test_matches_dense_solve(self, rng):
        p = 9
        raw = rng.standard_normal(p)
        w = rng.uniform(0.5, 2.0, p)
        d = np.diff(np.eye(p), 2, axis=0)
        expected = np.linalg.solve(np.diag(w) + 4.0 * d.T @ d, w * raw)
        out = smooth_curve(raw, SmoothingConfig(4.0, weights=w), AgeGrid(np.arange(p)))
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_monotone_only_above_threshold(self):
        g = AgeGrid(np.arange(6.0))
        raw = np.array([5.0, 1.0, 4.0, 3.0, 2.0, 6.0])
        out = smooth_curve(raw, SmoothingConfig(0.0, monotone_from_age=2), g)
        np.testing.assert_allclose(out[:2], raw[:2])
        assert np.all(np.diff(out[2:]) >= 0)

    def test_positive_penalty_needs_three_points(self):
        with pytest.raises(ConfigError):
            smooth_curve(np.array([1.0, 2.0]), SmoothingConfig(1.0), AgeGrid([0, 1]))

    def test_negative_penalty_rejected(self):
        with pytest.raises(ConfigError):
            SmoothingConfig(-1.0)

    def test_non_positive_weights_rejected(self):
        with pytest.raises(ConfigError):
            SmoothingConfig(1.0, weights=[1.0, 0.0, 1.0])

    def test_gcv_prefers_heavy_smoothing_on_noisy_quadratic(self, rng):
        u = np.linspace(0, 1, 60)
        raw = u**2 + 0.2 * rng.standard_normal(60)
        assert select_penalty_gcv(raw) >= 1.0

    @given(raw=arrays(float, st.integers(3, 25), elements=vals), penalty=st.floats(0, 100))
    def test_constant_preserved_and_mean_preserved(self, raw, penalty):
        g = AgeGrid(np.arange(raw.size, dtype=float))
        const = np.full(raw.size, 3.25)
        np.testing.assert_allclose(smooth_curve(const, SmoothingConfig(penalty), g), const, atol=1e-9)
        out = smooth_curve(raw, SmoothingConfig(penalty), g)
        assert out.mean() == pytest.approx(raw.mean(), abs=1e-8 * (1 + np.abs(raw).max()))

    @given(raw=arrays(float, st.integers(2, 25), elements=vals), start=st.integers(0, 24))
    def test_projection_idempotent_and_monotone(self, raw, start):
        g = AgeGrid(np.arange(raw.size, dtype=float))
        cfg = SmoothingConfig(0.0, monotone_from_age=float(start))
        once = smooth_curve(raw, cfg, g)
        np.testing.assert_allclose(smooth_curve(once, cfg, g), once, atol=1e-9)
        tail = g.points >= start
        assert np.all(np.diff(once[tail]) >= -1e-9)


class TestSmoothSeries:
    def test_penalty_zero_is_identity(self, rng):
        f = make_fts(rng.standard_normal((3, 6)))
        assert smooth_series(f, SmoothingConfig(0.0)) == f

    def test_ramp_rows_unchanged(self):
        f = make_fts(np.vstack([np.arange(5.0), 2 * np.arange(5.0)]))
        np.testing.assert_allclose(smooth_series(f, SmoothingConfig(5.0)).values, f.values, atol=1e-9)

    def test_rows_independent(self, rng):
        v = rng.standard_normal((4, 8))
        cfg = SmoothingConfig(2.0, monotone_from_age=4)
        a = smooth_series(make_fts(v), cfg)
        v2 = v.copy()
        v2[0] += rng.standard_normal(8)
        b = smooth_series(make_fts(v2), cfg)
        np.testing.assert_array_equal(a.values[1:], b.values[1:])
        assert a.years.tolist() == b.years.tolist() and a.grid == b.grid

    def test_error_carries_year(self):
        f = make_fts(np.ones((2, 2)))
        with pytest.raises(ConfigError, match="year 2000"):
            smooth_series(f, SmoothingConfig(1.0))
