"""Normalised error metrics, peak summaries and the deterministic-baseline gap.

Arrays are ``(N_s, T, n)``: samples, time steps, DOFs. Every error is divided
element-wise by the training-set expected peak ``u_peak`` (shape ``(n,)``).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import MetricError

log = logging.getLogger(__name__)

DIRECTIONS = ("X",)  # a shear building only has horizontal DOFs


def _check_peaks(peaks, what: str = "u_peak") -> np.ndarray:
    peaks = np.asarray(peaks, float)
    bad = np.flatnonzero(~(peaks > 0))
    if bad.size:
        raise MetricError(f"{what} must be strictly positive; DOF(s) {bad.tolist()} are not")
    return peaks


def _scaled(pred, ref, peaks) -> np.ndarray:
    pred, ref = np.asarray(pred, float), np.asarray(ref, float)
    if pred.shape != ref.shape or pred.ndim != 3:
        raise MetricError(f"predictions {pred.shape} and references {ref.shape} must both be (N_s, T, n)")
    return (ref - pred) / _check_peaks(peaks)


def normalized_errors(predictions, references, u_peak) -> tuple[float, float, float]:
    """``(MSE, RMSE, MAE)``; RMSE is the sample average of per-sample root-MSE."""
    e = _scaled(predictions, references, u_peak)
    sq = e**2
    mse = float(np.mean(sq))
    rmse = float(np.mean(np.sqrt(np.mean(sq, axis=(1, 2)))))
    mae = float(np.mean(np.abs(e)))
    return mse, rmse, mae


def samplewise_mse(predictions, references, u_peak, direction: str = "X", dofs=None) -> np.ndarray:
    """Per-sample normalised MSE over the DOFs of one direction (all DOFs for ``X``)."""
    if direction not in DIRECTIONS:
        raise MetricError(f"direction {direction!r} not present; available: {DIRECTIONS}")
    e = _scaled(predictions, references, u_peak)
    if dofs is not None:
        e = e[..., list(dofs)]
    return np.mean(e**2, axis=(1, 2))


def peak_summaries(values, peaks) -> np.ndarray:
    """``mean_d max_i |values_ijd| / peaks_d`` per sample.

    Pass absolute errors with ``u_peak`` for AvgPeakError, or total predictive
    variances with ``sigma_peak`` for AvgPeakVariance.
    """
    v = np.abs(np.asarray(values, float))
    if v.ndim != 3:
        raise MetricError("values must be (N_s, T, n)")
    return np.mean(np.max(v, axis=1) / _check_peaks(peaks, "peak normaliser"), axis=1)


def expected_peak(values) -> np.ndarray:
    """Per-DOF mean over samples of the per-sample peak ``max_i |values|``."""
    return np.mean(np.max(np.abs(np.asarray(values, float)), axis=1), axis=0)


def pearson(x, y) -> float:
    x, y = np.asarray(x, float).ravel(), np.asarray(y, float).ravel()
    if x.size != y.size or x.size < 2:
        raise MetricError("pearson needs two equally long inputs with at least 2 values")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.sum(xc * xc), np.sum(yc * yc)
    if sxx == 0 or syy == 0:
        raise MetricError("pearson is undefined for a zero-variance input")
    return float(np.clip(np.sum(xc * yc) / np.sqrt(sxx * syy), -1.0, 1.0))


def deterministic_gap(model_mse: float, baseline_mse: float) -> dict:
    if baseline_mse <= 0:
        raise MetricError("baseline MSE must be positive")
    ratio = model_mse / baseline_mse
    return {"model_mse": float(model_mse), "baseline_mse": float(baseline_mse), "ratio": float(ratio),
            "meets_order_of_magnitude": bool(ratio <= 0.1)}


@dataclass
class MetricReport:
    arch: str
    mse: float
    rmse: float
    mae: float
    pearson: float | None  # None when either per-sample summary is constant
    coverage: float
    baseline_mse: float
    gap: dict
    n: int
    n_samples: int
    T: int
    u_peak: list
    sigma_peak: list
    sample_ids: list = field(default_factory=list)
    mse_x: list = field(default_factory=list)
    avg_peak_error: list = field(default_factory=list)
    avg_peak_variance: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(arch: str, pred_mean, pred_var, references, deterministic, u_peak, sigma_peak,
                 sample_ids, coverage: float, extra: dict | None = None) -> MetricReport:
    mse, rmse, mae = normalized_errors(pred_mean, references, u_peak)
    baseline = normalized_errors(deterministic, references, u_peak)[0]
    ape = peak_summaries(np.asarray(references) - np.asarray(pred_mean), u_peak)
    apv = peak_summaries(pred_var, sigma_peak)
    N, T, n = np.shape(references)
    try:
        rho = pearson(ape, apv)
    except MetricError as exc:
        log.warning("correlation not reported: %s", exc)
        rho = None
    return MetricReport(
        arch=arch, mse=mse, rmse=rmse, mae=mae, pearson=rho, coverage=float(coverage),
        baseline_mse=baseline, gap=deterministic_gap(mse, baseline), n=n, n_samples=N, T=T,
        u_peak=np.asarray(u_peak, float).tolist(), sigma_peak=np.asarray(sigma_peak, float).tolist(),
        sample_ids=list(sample_ids), mse_x=samplewise_mse(pred_mean, references, u_peak).tolist(),
        avg_peak_error=ape.tolist(), avg_peak_variance=apv.tolist(), extra=extra or {},
    )


def write_report(report: MetricReport, out_dir) -> None:
    """``metrics.json`` (full report) and ``metrics.csv`` (one row per sample)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "MSE_X", "AvgPeakError", "AvgPeakVariance"])
        for row in zip(report.sample_ids, report.mse_x, report.avg_peak_error, report.avg_peak_variance):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
