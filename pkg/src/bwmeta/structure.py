"""Uncertain shear-building model with Bouc-Wen interstory hysteresis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import AssemblyError, ConfigError
from .excitation import make_rng

log = logging.getLogger(__name__)

PARAM_NAMES = ("e_scale", "density", "damping_ratio")
REFERENCE_MODULUS = 200e9  # Pa, multiplied by e_scale


@dataclass(frozen=True)
class ParameterEntry:
    name: str
    mean: float
    cov: float
    distribution: str = "normal"

    def __post_init__(self):
        if self.name not in PARAM_NAMES:
            raise ConfigError(f"unknown parameter {self.name!r}; expected one of {PARAM_NAMES}")
        if not self.mean > 0:
            raise ConfigError(f"{self.name}: mean must be positive")
        if self.cov < 0:
            raise ConfigError(f"{self.name}: cov must be non-negative")
        if self.distribution not in ("normal", "lognormal"):
            raise ConfigError(f"{self.name}: distribution must be 'normal' or 'lognormal'")


@dataclass(frozen=True)
class ParameterSpec:
    entries: tuple[ParameterEntry, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if sorted(names) != sorted(PARAM_NAMES):
            raise ConfigError(f"parameter spec must define exactly {PARAM_NAMES}, got {names}")

    def __getitem__(self, name: str) -> ParameterEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def means(self) -> "ParameterRealization":
        return ParameterRealization(**{e.name: e.mean for e in self.entries})

    def to_dict(self) -> list[dict]:
        return [
            {"name": e.name, "mean": e.mean, "cov": e.cov, "distribution": e.distribution}
            for e in self.entries
        ]

    @classmethod
    def from_dict(cls, entries: list[dict]) -> "ParameterSpec":
        try:
            return cls(tuple(ParameterEntry(**e) for e in entries))
        except TypeError as exc:
            raise ConfigError(f"bad parameter entry: {exc}") from exc


def default_parameter_spec() -> ParameterSpec:
    """Young's modulus (as a scale on 200 GPa), density and damping ratio."""
    return ParameterSpec(
        (
            ParameterEntry("e_scale", 1.0, 0.04, "lognormal"),
            ParameterEntry("density", 150.0, 0.1, "normal"),
            ParameterEntry("damping_ratio", 0.005, 0.40, "lognormal"),
        )
    )


@dataclass(frozen=True)
class ParameterRealization:
    e_scale: float
    density: float
    damping_ratio: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.e_scale, self.density, self.damping_ratio])

    def to_dict(self) -> dict:
        return {name: float(getattr(self, name)) for name in PARAM_NAMES}


def draw_parameters(spec: ParameterSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised draws, shape ``(size, 3)`` in :data:`PARAM_NAMES` order."""
    out = np.empty((size, len(PARAM_NAMES)))
    for entry in spec.entries:
        col = PARAM_NAMES.index(entry.name)
        sd = entry.cov * entry.mean
        if entry.cov == 0:
            out[:, col] = entry.mean
            continue
        if entry.distribution == "lognormal":
            s2 = np.log1p(entry.cov**2)
            out[:, col] = rng.lognormal(np.log(entry.mean) - 0.5 * s2, np.sqrt(s2), size)
            continue
        x = rng.normal(entry.mean, sd, size)
        redraws = 0
        bad = x <= 0
        while np.any(bad):
            redraws += int(bad.sum())
            x[bad] = rng.normal(entry.mean, sd, int(bad.sum()))
            bad = x <= 0
        if redraws:
            log.info("%s: %d non-positive normal draws redrawn", entry.name, redraws)
        out[:, col] = x
    return out


def sample_parameters(spec: ParameterSpec, seed: int) -> ParameterRealization:
    row = draw_parameters(spec, make_rng(seed), 1)[0]
    return ParameterRealization(*(float(v) for v in row))


@dataclass(frozen=True)
class BoucWenShape:
    A: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    n: float = 1.5
    alpha: float = 0.05  # post-yield stiffness ratio

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("Bouc-Wen exponent n must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class Layout:
    story_mass_base: np.ndarray
    story_stiffness_base: np.ndarray
    story_height: np.ndarray
    shape: BoucWenShape = field(default_factory=BoucWenShape)
    yield_drift_ratio: float = 0.01

    def __post_init__(self):
        for name in ("story_mass_base", "story_stiffness_base", "story_height"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
            if np.any(arr <= 0):
                raise ConfigError(f"layout {name} must be positive")
        n = self.story_mass_base.size
        if self.story_stiffness_base.size != n or self.story_height.size != n:
            raise ConfigError("layout arrays must all have length n")
        if not self.yield_drift_ratio > 0:
            raise ConfigError("yield_drift_ratio must be positive")

    @property
    def n(self) -> int:
        return self.story_mass_base.size

    def to_dict(self) -> dict:
        s = self.shape
        return {
            "story_mass_base": self.story_mass_base.tolist(),
            "story_stiffness_base": self.story_stiffness_base.tolist(),
            "story_height": self.story_height.tolist(),
            "bouc_wen": {"A": s.A, "beta": s.beta, "gamma": s.gamma, "n": s.n, "alpha": s.alpha},
            "yield_drift_ratio": self.yield_drift_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        d = dict(d)
        if "n" in d and "story_mass_base" not in d:
            base = default_layout(
                int(d.pop("n")),
                period=float(d.pop("period", 1.0)),
                story_height=float(d.pop("story_height", 3.9)),
            )
            d = {**base.to_dict(), **d}
        shape = BoucWenShape(**d.pop("bouc_wen", {}))
        try:
            return cls(shape=shape, **d)
        except TypeError as exc:
            raise ConfigError(f"bad layout: {exc}") from exc


def default_layout(n: int = 8, period: float = 1.0, story_height: float = 3.9,
                   plan_width: float = 24.4, density: float = 150.0) -> Layout:
    """Uniform stories whose elastic first-mode period equals ``period``.

    Story mass is ``density * plan_width**2 * story_height``. For a uniform
    fixed-free chain ``omega_1 = 2 sqrt(k/m) sin(pi / (2(2n+1)))``.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    m = density * plan_width**2 * story_height
    w1 = 2.0 * np.pi / period
    k = m * (w1 / (2.0 * np.sin(np.pi / (2 * (2 * n + 1))))) ** 2
    return Layout(np.full(n, m), np.full(n, k), np.full(n, story_height))


@dataclass(frozen=True, eq=False)
class BoucWenSystem:
    mass: np.ndarray  # (n,) lumped, kg
    damping: np.ndarray  # (n, n), N s/m
    story_stiffness: np.ndarray  # (n,), N/m
    uy: np.ndarray  # (n,) yield displacement, m
    bw_A: float = 1.0
    bw_beta: float = 0.5
    bw_gamma: float = 0.5
    bw_n: float = 1.5
    alpha: float = 0.05
    k_ref: float = 1.0  # normalisation for graph features
    m_ref: float = 1.0

    @property
    def n(self) -> int:
        return self.mass.size

    def drift_matrix(self) -> np.ndarray:
        """``D`` with ``delta = D u`` (ground displacement is zero)."""
        return np.eye(self.n) - np.eye(self.n, k=-1)

    def elastic_stiffness(self) -> np.ndarray:
        D = self.drift_matrix()
        return D.T @ (self.story_stiffness[:, None] * D)


def rayleigh_coefficients(w1: float, w2: float, zeta: float) -> tuple[float, float]:
    """``(a0, a1)`` giving modal damping ``zeta`` at ``w1`` and ``w2``."""
    return 2.0 * zeta * w1 * w2 / (w1 + w2), 2.0 * zeta / (w1 + w2)


def assemble_system(params: ParameterRealization, layout: Layout,
                    density_mean: float = 150.0) -> BoucWenSystem:
    mass = layout.story_mass_base * (params.density / density_mean)
    k = layout.story_stiffness_base * params.e_scale
    uy = layout.yield_drift_ratio * layout.story_height
    s = layout.shape
    proto = BoucWenSystem(mass, np.zeros((layout.n, layout.n)), k, uy)
    K = proto.elastic_stiffness()
    M = np.diag(mass)
    zeta = params.damping_ratio
    if layout.n == 1:
        C = np.array([[2.0 * zeta * np.sqrt(k[0] * mass[0])]])
    else:
        try:
            w2 = scipy.linalg.eigh(K, M, eigvals_only=True, subset_by_index=[0, 1])
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise AssemblyError(f"elastic eigenproblem failed: {exc}") from exc
        if not np.all(np.isfinite(w2)) or np.any(w2 <= 0):
            raise AssemblyError("non-positive elastic eigenvalues")
        a0, a1 = rayleigh_coefficients(np.sqrt(w2[0]), np.sqrt(w2[1]), zeta)
        C = a0 * M + a1 * K
    return BoucWenSystem(
        mass=mass, damping=C, story_stiffness=k, uy=uy,
        bw_A=s.A, bw_beta=s.beta, bw_gamma=s.gamma, bw_n=s.n, alpha=s.alpha,
        k_ref=float(np.mean(layout.story_stiffness_base)),
        m_ref=float(np.mean(layout.story_mass_base)),
    )


def story_shear(system: BoucWenSystem, drift: np.ndarray, z: np.ndarray) -> np.ndarray:
    k = system.story_stiffness
    return system.alpha * k * drift + (1.0 - system.alpha) * k * system.uy * z


def restoring_force(system: BoucWenSystem, interstory_drift, z) -> np.ndarray:
    """Nodal restoring forces; node ``p`` receives ``s_p - s_{p+1}``."""
    s = story_shear(system, np.asarray(interstory_drift, float), np.asarray(z, float))
    f = s.copy()
    f[:-1] -= s[1:]
    return f


def bouc_wen_rate(system: BoucWenSystem, drift_rate, z) -> np.ndarray:
    dd = np.asarray(drift_rate, float)
    z = np.asarray(z, float)
    az = np.abs(z)
    n = system.bw_n
    return (
        system.bw_A * dd
        - system.bw_beta * np.abs(dd) * az ** (n - 1.0) * z
        - system.bw_gamma * dd * az**n
    ) / system.uy


@dataclass(frozen=True, eq=False)
class StructureGraph:
    """Members as nodes; the last node is the virtual node when present."""

    node_features: np.ndarray  # (N_v, F)
    neighbors: tuple[tuple[int, ...], ...]
    virtual: int | None = None

    @property
    def node_count(self) -> int:
        return len(self.neighbors)

    def degrees(self) -> list[int]:
        return [len(nb) for nb in self.neighbors]

    def edges(self) -> np.ndarray:
        """Directed edges ``(source, target)``; each undirected edge appears twice."""
        return np.array([(j, p) for p, nb in enumerate(self.neighbors) for j in nb], dtype=int).reshape(-1, 2)

    def permuted(self, perm) -> "StructureGraph":
        """Relabel nodes so old node ``perm[i]`` becomes node ``i``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        nbrs = tuple(tuple(sorted(inv[j] for j in self.neighbors[old])) for old in perm)
        virtual = None if self.virtual is None else inv[self.virtual]
        return StructureGraph(self.node_features[perm].copy(), nbrs, virtual)


def chain_neighbors(n: int, virtual: bool = True) -> tuple[tuple[int, ...], ...]:
    nbrs = []
    for p in range(n):
        nb = [q for q in (p - 1, p + 1) if 0 <= q < n]
        if virtual:
            nb.append(n)
        nbrs.append(tuple(nb))
    if virtual:
        nbrs.append(tuple(range(n)))
    return tuple(nbrs)


def build_graph(system: BoucWenSystem, params: ParameterRealization) -> StructureGraph:
    """Story nodes carry ``(k_p / k_ref, m_p / m_ref, zeta)``; the virtual node ``(0, 0, zeta)``."""
    n = system.n
    feats = np.zeros((n + 1, 3))
    feats[:n, 0] = system.story_stiffness / system.k_ref
    feats[:n, 1] = system.mass / system.m_ref
    feats[:, 2] = params.damping_ratio
    return StructureGraph(feats, chain_neighbors(n), virtual=n)
