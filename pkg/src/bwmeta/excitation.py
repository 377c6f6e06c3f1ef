"""Stochastic ground-acceleration records.

Records are envelope-modulated Kanai-Tajimi filtered white noise:

1. ``w_i = N(0, 1) / sqrt(dt)`` for every step of the strong-motion window,
   drawn from a Philox4x64-10 counter-based generator keyed by the seed;
2. the filter ``x'' + 2 zeta_g omega_g x' + omega_g**2 x = -w`` is integrated
   with :func:`bwmeta.ode.rk4_fixed` and the ground acceleration is
   ``-(2 zeta_g omega_g x' + omega_g**2 x)``;
3. the result is multiplied by the gamma envelope
   ``(t / t_p)**c * exp(c * (1 - t / t_p))`` (unit peak at ``t_p``);
4. the record is rescaled so its peak absolute value equals ``intensity`` and
   zero-padded to the full duration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ode import rk4_fixed


def _whole_steps(duration: float, dt: float, what: str) -> int:
    steps = duration / dt
    rounded = int(round(steps))
    if abs(steps - rounded) > 1e-9 * max(1.0, abs(steps)):
        raise ConfigError(f"{what}={duration} is not an integer number of steps of dt={dt}")
    return rounded


@dataclass(frozen=True)
class ExcitationConfig:
    dt: float = 0.005
    strong_duration: float = 30.0
    pad_duration: float = 30.0
    filter_freq: float = 15.7
    filter_damping: float = 0.6
    envelope_peak_time: float | None = None  # None -> 0.3 * strong_duration
    envelope_shape: float = 3.0
    intensity: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.strong_duration > 0:
            raise ConfigError("strong_duration must be positive")
        if self.pad_duration < 0:
            raise ConfigError("pad_duration must be non-negative")
        if not 0.0 < self.filter_damping < 1.0:
            raise ConfigError("filter_damping must lie in (0, 1)")
        if not self.filter_freq > 0:
            raise ConfigError("filter_freq must be positive")
        if not self.intensity > 0:
            raise ConfigError("intensity must be positive")
        if self.envelope_peak_time is not None and not self.envelope_peak_time > 0:
            raise ConfigError("envelope_peak_time must be positive")
        # raises on non-integer step counts
        self.n_strong
        self.n_steps

    @property
    def n_strong(self) -> int:
        return _whole_steps(self.strong_duration, self.dt, "strong_duration")

    @property
    def n_steps(self) -> int:
        return _whole_steps(self.strong_duration + self.pad_duration, self.dt, "total duration")

    @property
    def peak_time(self) -> float:
        if self.envelope_peak_time is None:
            return 0.3 * self.strong_duration
        return self.envelope_peak_time

    def with_seed(self, seed: int) -> "ExcitationConfig":
        return ExcitationConfig(**{**self.to_dict(), "seed": int(seed)})

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "strong_duration": self.strong_duration,
            "pad_duration": self.pad_duration,
            "filter_freq": self.filter_freq,
            "filter_damping": self.filter_damping,
            "envelope_peak_time": self.envelope_peak_time,
            "envelope_shape": self.envelope_shape,
            "intensity": self.intensity,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExcitationConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown excitation fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ExcitationRecord:
    dt: float
    samples: np.ndarray
    seed: int

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64-10 generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def gamma_envelope(t: np.ndarray, peak_time: float, shape: float) -> np.ndarray:
    r = np.asarray(t, dtype=float) / peak_time
    return r**shape * np.exp(shape * (1.0 - r))


def generate_excitation(config: ExcitationConfig) -> ExcitationRecord:
    n_strong, n_total = config.n_strong, config.n_steps
    rng = make_rng(config.seed)
    noise = rng.standard_normal(n_strong) / np.sqrt(config.dt)

    wg, zg = config.filter_freq, config.filter_damping
    c1, c2 = 2.0 * zg * wg, wg * wg

    def rhs(y, w):
        return np.array([y[1], -c1 * y[1] - c2 * y[0] - w[0]])

    states = rk4_fixed(rhs, np.zeros(2), noise, config.dt)
    accel = -(c1 * states[:, 1] + c2 * states[:, 0])
    accel *= gamma_envelope(np.arange(n_strong) * config.dt, config.peak_time, config.envelope_shape)

    peak = np.max(np.abs(accel))
    if peak == 0.0:
        raise ConfigError("generated record is identically zero")
    samples = np.zeros(n_total)
    samples[:n_strong] = accel * (config.intensity / peak)
    return ExcitationRecord(dt=config.dt, samples=samples, seed=int(config.seed))


def to_force_history(record: ExcitationRecord, system) -> np.ndarray:
    """Effective seismic forces ``F_i = -M 1 a_g(i)``, shape ``(T, n)``."""
    mass = np.asarray(system.mass, dtype=float)
    return -np.outer(record.samples, mass)
