"""MC-dropout inference, variance decomposition and propagation to the time domain.

For ``H`` stochastic passes with outputs ``(mu_eta, var_eta)``::

    mu_bar    = mean_eta mu_eta
    var_alea  = mean_eta var_eta
    var_epi   = mean_eta (mu_eta - mu_bar)**2      (population convention)
    var_total = var_alea + var_epi

Propagation draws one standard normal ``eps`` per draw, shared by every
``(k, output)``, forms ``gamma = mu_bar + sqrt(var_total) * eps``, maps each
``gamma`` sequence to displacements (decoder if any, inverse DWT,
denormalisation) and takes the mean and population variance over draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .container import write_channels
from .errors import ConfigError, DataError
from .excitation import make_rng
from .neural import engine as E
from .simulate import NormalizationStats, hash64
from .wavelet import WaveletBasis, reconstruct_approx

Z95 = 1.96


def z_value(level: float) -> float:
    """Two-sided Gaussian quantile; exactly 1.96 at the 95% level."""
    if not 0 < level < 1:
        raise ConfigError("interval level must be in (0, 1)")
    return Z95 if level == 0.95 else float(norm.ppf(0.5 + level / 2))


def _spread(x: np.ndarray) -> np.ndarray:
    # population variance over axis 0, shifted by the first draw so identical draws give exactly 0
    d = x - x[0]
    return np.mean((d - d.mean(axis=0)) ** 2, axis=0)


@dataclass(eq=False)
class McPrediction:
    mu: np.ndarray  # (H, K, n_o)
    var: np.ndarray  # (H, K, n_o)

    @property
    def h_mc(self) -> int:
        return self.mu.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.mu.mean(axis=0)

    @property
    def aleatoric(self) -> np.ndarray:
        return self.var.mean(axis=0)

    @property
    def epistemic(self) -> np.ndarray:
        return _spread(self.mu)

    @property
    def total(self) -> np.ndarray:
        return self.aleatoric + self.epistemic


@dataclass(eq=False)
class TimeDomainEstimate:
    mean: np.ndarray  # (T, n)
    variance: np.ndarray  # (T, n)
    h_mc_gamma: int
    seed: int
    level: float = 0.95

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def lower(self) -> np.ndarray:
        return self.mean - z_value(self.level) * self.std

    @property
    def upper(self) -> np.ndarray:
        return self.mean + z_value(self.level) * self.std


def _pass_noise(model, key, h_mc: int, seed: int) -> dict:
    """Per-pass uniforms for every dropout site, pass ``eta`` drawn from its own stream."""
    per = [model.sample_noise(1, make_rng(hash64(seed, "mc", key, eta))) for eta in range(h_mc)]
    return {name: np.concatenate([p[name] for p in per]) for name in per[0]} if per and per[0] else {}


def mc_predict_batch(trained, aF, gamma, nodes, keys, h_mc: int = 50, seed: int = 0,
                     chunk: int = 256) -> list[McPrediction]:
    """MC predictions for several samples; ``keys`` (e.g. sample ids) select the RNG streams."""
    if h_mc < 2:
        raise ConfigError("epistemic variance needs H_mc >= 2 stochastic passes")
    model = trained.model if hasattr(trained, "model") else trained
    aF, gamma = np.asarray(aF, float), np.asarray(gamma, float)
    nodes = None if nodes is None else np.asarray(nodes, float)
    S = aF.shape[0]
    rows = [(s, eta) for s in range(S) for eta in range(h_mc)]
    noise_by_sample = [_pass_noise(model, keys[s], h_mc, seed) for s in range(S)]
    mus, vars_ = [], []
    with E.no_grad():
        for start in range(0, len(rows), chunk):
            part = rows[start:start + chunk]
            idx = np.array([s for s, _ in part])
            noise = {name: np.concatenate([noise_by_sample[s][name][eta:eta + 1] for s, eta in part])
                     for name in noise_by_sample[0]}
            mu, lv = model.forward(aF[idx], gamma[idx], None if nodes is None else nodes[idx],
                                   "mc_inference", noise=noise)
            mus.append(mu.data)
            vars_.append(np.exp(lv.data))
    mu = np.concatenate(mus).reshape(S, h_mc, *mus[0].shape[1:])
    var = np.concatenate(vars_).reshape(S, h_mc, *vars_[0].shape[1:])
    return [McPrediction(mu[s], var[s]) for s in range(S)]


def mc_predict(trained, sample, h_mc: int = 50, seed: int = 0, key=0) -> McPrediction:
    """``sample`` holds ``aF (K, 1)``, ``gamma (3,)`` and optionally ``nodes`` (dict or attributes)."""
    get = sample.get if isinstance(sample, dict) else (lambda k: getattr(sample, k, None))
    nodes = get("nodes")
    return mc_predict_batch(trained, np.asarray(get("aF"))[None], np.asarray(get("gamma"))[None],
                            None if nodes is None else np.asarray(nodes)[None], [key], h_mc, seed)[0]


def _basis(trained) -> WaveletBasis:
    w = trained.wavelet
    if w.get("family", "db6") != "db6":
        raise DataError(f"unsupported wavelet family {w.get('family')!r}")
    return WaveletBasis(level=int(w.get("level", 3)))


def coefficients_to_time(trained, coeffs: np.ndarray, gamma=None) -> np.ndarray:
    """Output-space sequences ``(..., K, n_o)`` -> displacements ``(..., T, n)`` in metres."""
    coeffs = np.asarray(coeffs, float)
    if trained.arch == "ae-lstm":
        if trained.autoencoder is None:
            raise DataError("ae-lstm propagation needs the frozen decoder")
        g = np.broadcast_to(np.asarray(gamma, float), coeffs.shape[:-2] + (np.shape(gamma)[-1],))
        with E.no_grad():
            coeffs = trained.autoencoder.decode(coeffs, g).data
    stats = NormalizationStats.from_dict(trained.stats)
    x = reconstruct_approx(np.moveaxis(coeffs, -2, 0), trained.T, _basis(trained))
    return stats.denormalize_u(np.moveaxis(x, 0, -2))


def propagate_to_time_domain(pred: McPrediction, trained, h_mc_gamma: int = 50, seed: int = 0,
                             gamma=None, level: float = 0.95) -> TimeDomainEstimate:
    """Reparameterised Monte-Carlo propagation with one ``eps`` per draw."""
    if h_mc_gamma < 2:
        raise ConfigError("H_mc_gamma must be >= 2")
    eps = make_rng(hash64(seed, "eps")).standard_normal(h_mc_gamma)
    draws = pred.mean[None] + np.sqrt(pred.total)[None] * eps[:, None, None]
    x = coefficients_to_time(trained, draws, gamma)
    return TimeDomainEstimate(x.mean(axis=0), _spread(x), h_mc_gamma, int(seed), level)


def affine_time_variance(pred: McPrediction, trained) -> np.ndarray:
    """Closed-form time-domain variance for the affine (MLP/MPNN) path: ``(R sigma_total)**2`` scaled.

    With one shared ``eps`` the draw is ``R (mu + sigma eps)``, so its variance is
    the square of ``R sigma`` elementwise, denormalised by ``u_peak**2``.
    """
    if trained.arch == "ae-lstm":
        raise ConfigError("the affine closed form does not apply to the autoencoder path")
    stats = NormalizationStats.from_dict(trained.stats)
    r_sigma = reconstruct_approx(np.sqrt(pred.total), trained.T, _basis(trained))
    return (r_sigma * stats.u_peak) ** 2


def interval_coverage(mean, variance, reference, level: float = 0.95) -> float:
    """Fraction of points with ``|reference - mean| <= z(level) * std``."""
    mean, variance, reference = (np.asarray(a, float) for a in (mean, variance, reference))
    if not (mean.shape == variance.shape == reference.shape):
        raise DataError(f"shape mismatch: {mean.shape}, {variance.shape}, {reference.shape}")
    if np.any(variance < 0):
        raise DataError("negative variance")
    inside = np.abs(reference - mean) <= z_value(level) * np.sqrt(variance)
    return float(np.mean(inside))


def write_estimate(est: TimeDomainEstimate, path, meta: dict | None = None) -> None:
    """``<path>.bin`` holds channels ``[mean_1..n, variance_1..n]``; ``<path>.json`` the sidecar."""
    base = Path(path)
    n = est.mean.shape[1]
    write_channels(base.with_name(base.name + ".bin"), np.vstack([est.mean.T, est.variance.T]), n)
    side = {"h_mc_gamma": est.h_mc_gamma, "seed": est.seed, "level": est.level, "z": z_value(est.level),
            "channels": "mean[1..n], variance[1..n]", **(meta or {})}
    base.with_name(base.name + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
