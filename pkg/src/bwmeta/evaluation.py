"""Split-level prediction and evaluation: MC dropout, propagation, metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .metrics import MetricReport, build_report, expected_peak
from .simulate import hash64
from .uncertainty import interval_coverage, mc_predict_batch, propagate_to_time_domain

log = logging.getLogger(__name__)


@dataclass(eq=False)
class SplitPrediction:
    ids: list
    mean: np.ndarray  # (N, T, n) metres
    variance: np.ndarray  # (N, T, n) total predictive variance, m^2
    coeff_epistemic: np.ndarray  # (N, K, n_o)
    coeff_aleatoric: np.ndarray


def predict_split(trained, split, h_mc: int = 50, h_mc_gamma: int = 50, seed: int = 0,
                  batch: int = 16) -> SplitPrediction:
    """Time-domain mean and total variance for every sample of a coefficient-domain split."""
    means, variances, epi, alea = [], [], [], []
    nodes = split.nodes if trained.arch == "mpnn-lstm" else None
    for start in range(0, len(split), batch):
        sl = slice(start, start + batch)
        ids = split.ids[sl]
        preds = mc_predict_batch(trained, split.aF[sl], split.gamma[sl], None if nodes is None else nodes[sl],
                                 ids, h_mc, seed)
        for sid, g, pred in zip(ids, split.gamma[sl], preds):
            est = propagate_to_time_domain(pred, trained, h_mc_gamma, hash64(seed, "prop", sid), gamma=g)
            means.append(est.mean)
            variances.append(est.variance)
            epi.append(pred.epistemic)
            alea.append(pred.aleatoric)
    return SplitPrediction(list(split.ids), np.array(means), np.array(variances), np.array(epi), np.array(alea))


def deterministic_references(dataset, coeff_dataset, ids) -> np.ndarray:
    """Deterministic-parameter responses aligned with ``ids`` (same excitation seeds)."""
    det = coeff_dataset.splits.get("deterministic")
    if det is None:
        raise DataError("dataset has no deterministic split")
    pos = {sid: i for i, sid in enumerate(det.ids)}
    out = []
    for sid in ids:
        did = dataset.deterministic_for(sid)
        if did is None or did not in pos:
            raise DataError(f"no deterministic counterpart for {sid}")
        out.append(det.u[pos[did]])
    return np.array(out)


def evaluate(trained, dataset, coeff_dataset, split: str = "test", h_mc: int = 50, h_mc_gamma: int = 50,
             seed: int = 0, level: float = 0.95, sigma_split: str = "train") -> tuple[MetricReport, SplitPrediction]:
    """Metrics for ``split``; ``sigma_peak`` is the expected peak variance of the model on ``sigma_split``."""
    sc = coeff_dataset.splits.get(split)
    if sc is None or len(sc) == 0:
        raise DataError(f"split {split!r} is empty")
    pred = predict_split(trained, sc, h_mc, h_mc_gamma, seed)
    ref_train = predict_split(trained, coeff_dataset.splits[sigma_split], h_mc, h_mc_gamma, hash64(seed, sigma_split))
    sigma_peak = expected_peak(ref_train.variance)
    det = deterministic_references(dataset, coeff_dataset, sc.ids)
    coverage = interval_coverage(pred.mean, pred.variance, sc.u, level)
    u_peak = coeff_dataset.stats.u_peak
    extra = {
        "h_mc": h_mc, "h_mc_gamma": h_mc_gamma, "seed": seed, "level": level, "split": split,
        "sigma_split": sigma_split, "dropout_p": trained.model.dropout_p,
        "reconstruction_floor": float(np.mean(coeff_dataset.floor.get(split, np.nan))),
        "mean_epistemic": float(pred.coeff_epistemic.mean()), "mean_aleatoric": float(pred.coeff_aleatoric.mean()),
    }
    if trained.autoencoder is not None:
        extra["ae_roundtrip_mse"] = autoencoder_roundtrip_mse(trained, coeff_dataset, split)
    report = build_report(trained.arch, pred.mean, pred.variance, sc.u, det, u_peak, sigma_peak, sc.ids,
                          coverage, extra)
    return report, pred


def autoencoder_roundtrip_mse(trained, coeff_dataset, split: str = "test") -> float:
    """Normalised MSE of the approximation + autoencoder round trip against ``u``."""
    from .metrics import normalized_errors
    sc = coeff_dataset.splits[split]
    rec = trained.autoencoder.reconstruct(sc.au, sc.gamma)
    return normalized_errors(coeff_dataset.reconstruct(rec), sc.u, coeff_dataset.stats.u_peak)[0]
