import json
import math
import re

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herdtwin.errors import InsufficientPoints, MalformedParams, SingularSystem
from herdtwin.fit import (
    FAMILIES, REFERENCE_REST_CURVE, TABLE_ARITIES, CurveFamily, FittedCurve, _jitter, evaluate, fit,
    gaussian_initial, model_selection, sine_initial, write_fit_json, write_selection_csv,
)
from herdtwin.lm import levenberg_marquardt

HOURS = np.arange(24.0)
GAUSS8 = CurveFamily("gaussian", 8)

# the published eight-term rest curve, written out as text so the oracle does
# not share any parsed numbers with the package constant
REST_FORMULA = """
    51.29*exp(-((x-2.823)/2.957)^2) + 44.42*exp(-((x-24.19)/3.936)^2)
  + 1.378e14*exp(-((x+40.24)/7.546)^2) + 19.29*exp(-((x-13.55)/3.22)^2)
  + 16.18*exp(-((x-19.06)/0.9367)^2) + 19.25*exp(-((x-4.588)/0.5802)^2)
  + 29.29*exp(-((x-20.39)/1.802)^2) + 20.45*exp(-((x-9.812)/2.834)^2)
"""
_TERM = re.compile(r"([\d.e+]+)\*exp\(-\(\(x([+-][\d.]+)\)/([\d.]+)\)\^2\)")


def rest_oracle(x):
    """Sum the formula's terms one by one at 50 significant digits."""
    terms = _TERM.findall(REST_FORMULA)
    assert len(terms) == 8
    with mpmath.workdps(50):
        xv = mpmath.mpf(x)
        total = mpmath.mpf(0)
        for a, shift, c in terms:
            z = (xv + mpmath.mpf(shift)) / mpmath.mpf(c)
            total += mpmath.mpf(a) * mpmath.exp(-z * z)
        return float(total)


def noisy_rest_profile(seed, sigma=1.0):
    rng = np.random.default_rng(seed)
    return evaluate(GAUSS8, HOURS, REFERENCE_REST_CURVE) + rng.normal(0.0, sigma, 24)


class TestEvaluate:
    def test_single_gaussian_peak(self):
        assert evaluate(CurveFamily("gaussian", 1), 3.0, [7.0, 3.0, 2.0]) == 7.0

    @pytest.mark.parametrize("x", [-4.0, 0.0, 11.5, 1e3])
    def test_constant_polynomial(self, x):
        assert evaluate(CurveFamily("poly", 0), x, [5.0]) == 5.0

    @pytest.mark.parametrize("k", range(4))
    def test_sine_zero_at_phase_multiples(self, k):
        # a*sin(b*x + c) vanishes where b*x + c = k*pi
        b, c = 0.5, 0.25
        x = (k * math.pi - c) / b
        assert abs(evaluate(CurveFamily("sine", 1), x, [3.0, b, c])) < 1e-14

    @pytest.mark.parametrize("x", [0, 6, 12, 18])
    def test_reference_curve_spot_values(self, x):
        got = evaluate(GAUSS8, float(x), REFERENCE_REST_CURVE)
        assert got == pytest.approx(rest_oracle(x), rel=1e-9)

    def test_reference_curve_full_day(self):
        got = evaluate(GAUSS8, HOURS, REFERENCE_REST_CURVE)
        want = np.array([rest_oracle(x) for x in range(24)])
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=0)

    def test_no_clamping(self):
        # the raw curve overshoots an hour at midnight; evaluate must not clip it
        assert evaluate(GAUSS8, 0.0, REFERENCE_REST_CURVE) > 60.0

    def test_fourier_closed_form(self):
        p = [2.0, 1.0, -0.5, 0.25, 0.75, 0.3]
        x = 1.7
        want = 2.0 + 1.0 * math.cos(0.3 * x) - 0.5 * math.sin(0.3 * x) + 0.25 * math.cos(0.6 * x) + 0.75 * math.sin(0.6 * x)
        assert evaluate(CurveFamily("fourier", 2), x, p) == pytest.approx(want, abs=1e-14)

    @pytest.mark.parametrize("family, params", [
        (CurveFamily("gaussian", 1), [1.0, 2.0, 0.0]),
        (CurveFamily("gaussian", 2), [1.0, 2.0, 3.0]),
        (CurveFamily("fourier", 1), [1.0, 1.0, 1.0, -0.2]),
        (CurveFamily("poly", 1), [1.0, np.nan]),
    ])
    def test_malformed_params(self, family, params):
        with pytest.raises(MalformedParams):
            evaluate(family, 1.0, params)

    @pytest.mark.parametrize("kind, arity", [("gaussian", 0), ("poly", -1), ("spline", 3)])
    def test_invalid_family(self, kind, arity):
        with pytest.raises(MalformedParams):
            CurveFamily(kind, arity)


class TestFit:
    def test_constant_degree_zero(self):
        c = fit(CurveFamily("poly", 0), HOURS, np.full(24, 10.0))
        assert c.params[0] == pytest.approx(10.0, abs=1e-12)
        assert c.sse == pytest.approx(0.0, abs=1e-20)

    def test_two_term_gaussian_recovery(self):
        gen = CurveFamily("gaussian", 2)
        truth = np.array([20.0, 6.0, 2.5, 35.0, 16.0, 3.0])
        c = fit(gen, HOURS, evaluate(gen, HOURS, truth), seed=0)
        assert c.sse < 1e-10
        grid = np.linspace(0, 24, 481)
        np.testing.assert_allclose(evaluate(c, grid), evaluate(gen, grid, truth), atol=1e-6, rtol=0)

    def test_residual_variance_is_sse_per_point(self, rng):
        y = rng.uniform(0, 60, 24)
        for kind in FAMILIES:
            c = fit(CurveFamily(kind, 2), HOURS, y, seed=1)
            assert c.residual_variance == c.sse / 24
            assert c.n_points == 24

    def test_nan_points_skipped(self, rng):
        y = rng.uniform(0, 60, 24)
        y[5] = np.nan
        c = fit(CurveFamily("poly", 2), HOURS, y)
        assert c.n_points == 23
        ref = fit(CurveFamily("poly", 2), np.delete(HOURS, 5), np.delete(y, 5))
        np.testing.assert_array_equal(c.params, ref.params)

    def test_insufficient_points(self):
        with pytest.raises(InsufficientPoints):
            fit(GAUSS8, HOURS[:3], HOURS[:3])

    def test_rank_deficient_polynomial(self):
        with pytest.raises(SingularSystem):
            fit(CurveFamily("poly", 3), np.array([1.0, 1.0, 2.0, 2.0]), np.arange(4.0))

    @pytest.mark.parametrize("kind", ["gaussian", "sine"])
    def test_never_worse_than_any_start(self, kind):
        y = noisy_rest_profile(4)
        n, seed, restarts = 4, 9, 5
        c = fit(CurveFamily(kind, n), HOURS, y, seed=seed, restarts=restarts)
        p0 = gaussian_initial(HOURS, y, n) if kind == "gaussian" else sine_initial(HOURS, y, n)
        gen = np.random.default_rng(seed)
        starts = [p0] + [_jitter(kind, p0, gen, 0.1, 24.0) for _ in range(restarts)]
        start_sse = [float(np.sum((evaluate(CurveFamily(kind, n), HOURS, s) - y) ** 2)) for s in starts]
        assert c.sse <= min(start_sse)

    @pytest.mark.parametrize("kind, arity", [("poly", 5), ("fourier", 3)])
    def test_linear_fits_ignore_seed(self, rng, kind, arity):
        y = rng.uniform(0, 60, 24)
        a = fit(CurveFamily(kind, arity), HOURS, y, seed=0)
        b = fit(CurveFamily(kind, arity), HOURS, y, seed=12345)
        assert a.params.tobytes() == b.params.tobytes()
        assert a.sse == b.sse

    @pytest.mark.parametrize("kind", ["gaussian", "sine"])
    def test_nonlinear_fits_deterministic(self, kind):
        y = noisy_rest_profile(1)
        a = fit(CurveFamily(kind, 3), HOURS, y, seed=5)
        b = fit(CurveFamily(kind, 3), HOURS, y, seed=5)
        assert a.params.tobytes() == b.params.tobytes()

    @settings(max_examples=25)
    @given(st.integers(0, 2**31 - 1))
    def test_nested_polynomials_never_worse(self, seed):
        y = np.random.default_rng(seed).uniform(0, 60, 24)
        variances = [fit(CurveFamily("poly", d), HOURS, y).residual_variance for d in range(0, 8)]
        best_so_far = np.minimum.accumulate(variances)
        # best over a larger grid is at most best over its prefix
        assert np.all(np.diff(best_so_far) <= 0)
        assert all(b <= a * (1 + 1e-9) + 1e-9 for a, b in zip(variances, variances[1:]))

    def test_pure_sinusoid_exact_fourier(self):
        y = 30 + 20 * np.sin(2 * np.pi * HOURS / 24 + 0.5)
        c = fit(CurveFamily("fourier", 1), HOURS, y)
        assert c.sse < 1e-18
        assert c.params[-1] == pytest.approx(2 * np.pi / 24, rel=1e-6)

    @pytest.mark.xfail(strict=True, reason="multi-start does not reach the published optimum; SSE/N stalls near 7e-4")
    def test_self_fit_of_reference_curve(self):
        y = evaluate(GAUSS8, HOURS, REFERENCE_REST_CURVE)
        assert fit(GAUSS8, HOURS, y, seed=0).residual_variance < 1e-8


class TestModelSelection:
    def test_table_arities_gaussian_wins(self):
        table = model_selection(HOURS, noisy_rest_profile(0), {k: [v] for k, v in TABLE_ARITIES.items()}, seed=0)
        variances = [c.residual_variance for c in table.ranked]
        assert table.winner.family == GAUSS8
        assert variances[0] < variances[1]
        assert table.ranked[-1].family.kind == "poly"

    def test_pure_sinusoid_ranks_periodic_family_first(self):
        y = 30 + 20 * np.sin(2 * np.pi * HOURS / 24 + 0.5)
        grid = {"gaussian": [1, 2, 3], "sine": [1, 2, 3], "poly": [0, 3, 6], "fourier": [1, 2]}
        table = model_selection(HOURS, y, grid)
        assert table.winner.family.kind in ("sine", "fourier")
        assert {c.family.kind for c in table.ranked[:2]} == {"sine", "fourier"}

    def test_degenerate_cell_recorded(self):
        table = model_selection(HOURS[:3], [1.0, 4.0, 2.0], {"gaussian": [8], "poly": [1]})
        errs = {str(c.family): c.error for c in table.cells}
        assert errs["gaussian8"].startswith("InsufficientPoints")
        assert errs["poly1"] is None
        assert table.winner.family == CurveFamily("poly", 1)

    def test_keeps_best_arity_per_family(self, rng):
        y = rng.uniform(0, 60, 24)
        table = model_selection(HOURS, y, {"poly": [1, 4, 2]})
        best = min((c.curve for c in table.cells), key=lambda c: c.residual_variance)
        assert table.ranked == [best]
        assert table.rank_of("poly") == 0 and table.rank_of("sine") is None

    def test_empty_grid(self):
        with pytest.raises(MalformedParams):
            model_selection(HOURS, HOURS, {"poly": []})

    def test_selection_csv(self, tmp_path):
        table = model_selection(HOURS, noisy_rest_profile(3), {"poly": [2, 9], "fourier": [2]})
        lines = write_selection_csv(table, tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "rank,method,family,best_arity,residual_variance,sse,converged"
        assert [ln.split(",")[2] for ln in lines[1:]] == [c.family.kind for c in table.ranked]


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        c = fit(CurveFamily("sine", 2), HOURS, noisy_rest_profile(2), seed=3)
        doc = json.loads(write_fit_json(c, tmp_path / "f.json").read_text())
        assert set(doc) >= {"family", "arity", "params", "sse", "residual_variance", "converged", "iterations"}
        back = FittedCurve.from_json(doc)
        assert back.family == c.family
        np.testing.assert_array_equal(evaluate(back, HOURS), evaluate(c, HOURS))


class TestLevenbergMarquardt:
    def test_linear_problem_one_shot(self):
        A = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        y = np.array([1.0, 3.0, 5.0])
        res = levenberg_marquardt(lambda p: (A @ p - y, A), [0.0, 0.0])
        np.testing.assert_allclose(res.params, [1.0, 2.0], atol=1e-8)
        assert res.converged

    def test_rosenbrock(self):
        def fun(p):
            r = np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]])
            J = np.array([[-20 * p[0], 10.0], [-1.0, 0.0]])
            return r, J
        res = levenberg_marquardt(fun, [-1.2, 1.0])
        np.testing.assert_allclose(res.params, [1.0, 1.0], atol=1e-6)
        assert res.sse <= res.initial_sse

    def test_invalid_region_rejected(self):
        # steps landing on p <= 0 are refused, so the iterate stays positive
        res = levenberg_marquardt(lambda p: (p - np.array([-1.0]), np.eye(1)), [2.0], valid=lambda p: p[0] > 0)
        assert res.params[0] > 0
