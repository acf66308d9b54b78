import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npode.errors import ContractError, UndefinedMetricError
from npode.metrics import EvalReport, confidence_interval, coverage, evaluate, mape, rmse
from npode.predictive import PredictiveDistribution


def test_rmse_examples():
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert rmse(y, y) == 0.0
    assert rmse([[1.0, 0.0]], [[0.0, 0.0]]) == pytest.approx(math.sqrt(0.5))
    assert rmse([1.0, -1.0], [0.0, 0.0]) == 1.0


def test_rmse_shape_mismatch():
    with pytest.raises(ContractError):
        rmse(np.zeros((3, 2)), np.zeros((3, 1)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30),
       st.just(0.0) | st.floats(1e-6, 5) | st.floats(-5, -1e-6))
def test_rmse_nonnegative_and_zero_iff_equal(values, shift):
    y = np.array(values)
    pred = y + shift
    assert rmse(y, pred) >= 0
    assert (rmse(y, pred) == 0) == bool(np.all(pred == y))


def test_mape_examples():
    assert mape([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mape([1.0, 2.0], [1.1, 1.8]) == pytest.approx(0.10)
    assert mape([-2.0], [-1.0]) == 0.5


def test_mape_zero_truth_names_row():
    with pytest.raises(UndefinedMetricError, match="row 1"):
        mape([1.0, 0.0], [1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 1e4) | st.floats(-1e4, -0.1))
def test_mape_scale_invariant(c):
    rng = np.random.default_rng(0)
    y = rng.uniform(1, 5, 20)
    p = y + rng.normal(size=20) * 0.3
    assert mape(c * y, c * p) == pytest.approx(mape(y, p), abs=1e-12)


def test_confidence_interval_examples():
    lo, hi = confidence_interval(PredictiveDistribution(np.zeros((1, 1)), np.ones((1, 1))), "ci95")
    assert (lo[0, 0], hi[0, 0]) == (-1.96, 1.96)
    lo, hi = confidence_interval(PredictiveDistribution(np.full((1, 1), 3.0), np.full((1, 1), 0.5)), "one_sigma")
    assert (lo[0, 0], hi[0, 0]) == (2.5, 3.5)


def test_ci_width_ratio():
    rng = np.random.default_rng(1)
    d = PredictiveDistribution(rng.normal(size=(10, 2)), rng.uniform(0.1, 2, (10, 2)))
    l95, h95 = confidence_interval(d, "ci95")
    l1, h1 = confidence_interval(d, "one_sigma")
    np.testing.assert_allclose((h95 - l95) / (h1 - l1), 1.96, rtol=1e-14)


def test_ci_rejects_bad_input():
    d = PredictiveDistribution(np.zeros((2, 1)), np.array([[1.0], [0.0]]))
    with pytest.raises(ContractError):
        confidence_interval(d, "ci95")
    with pytest.raises(ContractError):
        confidence_interval(PredictiveDistribution(np.zeros((1, 1)), np.ones((1, 1))), "ci90")


def test_coverage_trivial_cases():
    y = np.arange(5.0)[:, None]
    assert coverage(y, (y - 1e9, y + 1e9))[0] == 1.0
    assert coverage(y, (y + 1, y + 1))[0] == 0.0


def test_coverage_multi_output_requires_all_dims():
    y = np.array([[0.0, 0.0], [0.0, 5.0]])
    frac, flags, per_dim = coverage(y, (np.full((2, 2), -1.0), np.full((2, 2), 1.0)))
    assert frac == 0.5 and flags.tolist() == [True, False]
    np.testing.assert_array_equal(per_dim, [1.0, 0.5])


def test_ci95_coverage_monte_carlo():
    rng = np.random.default_rng(2)
    mean, std = rng.normal(size=(10_000, 1)), rng.uniform(0.5, 2, (10_000, 1))
    y = mean + std * rng.standard_normal((10_000, 1))
    frac, _, _ = coverage(y, confidence_interval(PredictiveDistribution(mean, std), "ci95"))
    assert abs(frac - 0.95) <= 0.01


def test_eval_report_csv_round_trip():
    rng = np.random.default_rng(3)
    d = PredictiveDistribution(rng.normal(size=(6, 2)), rng.uniform(0.1, 1, (6, 2)))
    y = d.mean + 0.5 * rng.normal(size=(6, 2))
    rep = evaluate(y, d, "one_sigma", with_mape=False)
    assert rep.coverage == rep.covered.mean()
    back = EvalReport.from_csv(rep.to_csv(), "one_sigma")
    np.testing.assert_array_equal(back.ci_low, rep.ci_low)
    assert back.rmse == rep.rmse and back.coverage == rep.coverage
    assert "rmse=" in rep.summary()
