import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from bwmeta.errors import MetricError
from bwmeta.metrics import (
    build_report,
    deterministic_gap,
    expected_peak,
    normalized_errors,
    pearson,
    peak_summaries,
    samplewise_mse,
    write_report,
)

finite = st.floats(-10, 10, allow_nan=False, width=64)


def test_unit_error_hand_case():
    u = np.ones((1, 2, 1))
    mse, rmse, mae = normalized_errors(np.zeros_like(u), u, [1.0])
    assert (mse, rmse, mae) == (1.0, 1.0, 1.0)
    assert normalized_errors(u, u, [1.0]) == (0.0, 0.0, 0.0)


def test_peak_normalisation_per_dof():
    ref = np.zeros((1, 3, 2))
    pred = np.zeros_like(ref)
    pred[..., 0] = 2.0
    pred[..., 1] = 1.0
    mse, _, mae = normalized_errors(pred, ref, [2.0, 0.5])
    assert mse == pytest.approx(2.5, abs=1e-12)
    assert mae == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(MetricError):
        normalized_errors(pred, ref, [1.0, 0.0])
    with pytest.raises(MetricError):
        normalized_errors(pred[0], ref[0], [1.0, 1.0])


def test_samplewise():
    ref = np.ones((2, 4, 1))
    pred = ref.copy()
    pred[1] = 0.0
    assert samplewise_mse(pred, ref, [1.0]).tolist() == [0.0, 1.0]
    assert samplewise_mse(ref, ref, [1.0]).tolist() == [0.0, 0.0]
    with pytest.raises(MetricError):
        samplewise_mse(pred, ref, [1.0], direction="Y")


def test_peak_summary_hand_case():
    err = np.array([0.1, -0.3, 0.2]).reshape(1, 3, 1)
    assert peak_summaries(err, [0.6]) == pytest.approx([0.5], abs=1e-12)
    assert peak_summaries(np.zeros((2, 3, 2)), [1.0, 1.0]).tolist() == [0.0, 0.0]
    with pytest.raises(MetricError):
        peak_summaries(err, [0.0])


def test_expected_peak():
    v = np.zeros((2, 3, 1))
    v[0, 1, 0] = -2.0
    v[1, 2, 0] = 4.0
    assert expected_peak(v).tolist() == [3.0]


def test_pearson_cases():
    x = np.array([1.0, 2.0, 3.0])
    assert pearson(x, x) == 1.0
    assert pearson(x, -x) == -1.0
    # centred: (-1, 0, 1) and (-7/3, -1/3, 8/3) -> 5 / sqrt(2 * 114 / 9)
    hand = 5.0 / math.sqrt(2.0 * 114.0 / 9.0)
    assert pearson(x, [2.0, 4.0, 7.0]) == pytest.approx(hand, abs=1e-12)
    assert hand == pytest.approx(0.99340, abs=1e-5)
    with pytest.raises(MetricError):
        pearson(x, [1.0, 1.0, 1.0])
    with pytest.raises(MetricError):
        pearson([1.0], [2.0])


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.integers(3, 30), elements=finite), st.data())
def test_pearson_matches_scipy(x, data):
    y = data.draw(arrays(float, x.shape, elements=finite))
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-10)
    a, b = data.draw(st.floats(0.1, 5)), data.draw(st.floats(-5, 5))
    assert pearson(a * x + b, y) == pytest.approx(pearson(x, y), abs=1e-10)


def test_gap():
    g = deterministic_gap(0.001, 0.01)
    assert g["ratio"] == pytest.approx(0.1, abs=1e-15) and g["meets_order_of_magnitude"]
    assert deterministic_gap(0.02, 0.02)["ratio"] == 1.0
    assert not deterministic_gap(0.02, 0.02)["meets_order_of_magnitude"]
    with pytest.raises(MetricError):
        deterministic_gap(1.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_permutation_invariance_and_cauchy_schwarz(N, T, n, seed):
    rng = np.random.default_rng(seed)
    ref, pred = rng.normal(size=(2, N, T, n))
    peaks = rng.uniform(0.5, 2.0, n)
    perm = rng.permutation(N)
    a = normalized_errors(pred, ref, peaks)
    b = normalized_errors(pred[perm], ref[perm], peaks)
    assert np.allclose(a, b, rtol=1e-12, atol=0)
    e = (ref - pred) / peaks
    root_mse = np.sqrt(np.mean(e**2, axis=(1, 2)))
    mae = np.mean(np.abs(e), axis=(1, 2))
    assert np.all(root_mse >= mae - 1e-12)
    assert np.allclose(samplewise_mse(pred, ref, peaks)[perm], samplewise_mse(pred[perm], ref[perm], peaks))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 2**32 - 1))
def test_peak_summary_homogeneous(c, seed):
    err = np.random.default_rng(seed).normal(size=(3, 5, 2))
    peaks = [0.7, 1.3]
    assert np.allclose(peak_summaries(c * err, peaks), c * peak_summaries(err, peaks), rtol=1e-12)


def test_report_with_perfect_oracle(tmp_path):
    rng = np.random.default_rng(4)
    ref = rng.normal(size=(3, 10, 2))
    det = ref + 0.1
    var = rng.uniform(0.1, 1.0, size=ref.shape)
    rep = build_report("mlp-lstm", ref, var, ref, det, [1.0, 2.0], [1.0, 1.0], ["a", "b", "c"], 1.0)
    assert rep.mse == rep.rmse == rep.mae == 0.0
    assert rep.pearson is None  # zero errors everywhere
    assert rep.baseline_mse == pytest.approx((0.01 + 0.0025) / 2, rel=1e-12)
    assert rep.gap["ratio"] == 0.0
    assert rep.mse_x == [0.0, 0.0, 0.0]
    write_report(rep, tmp_path)
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert data["arch"] == "mlp-lstm" and data["n_samples"] == 3 and data["pearson"] is None
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert rows[0] == ["sample_id", "MSE_X", "AvgPeakError", "AvgPeakVariance"]
    assert [r[0] for r in rows[1:]] == ["a", "b", "c"]
    assert [float(r[3]) for r in rows[1:]] == rep.avg_peak_variance
