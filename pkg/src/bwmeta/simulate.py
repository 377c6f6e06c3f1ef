"""Ground-truth response histories and on-disk datasets."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_channels, write_channels
from .errors import ConfigError, DataError, IntegrationError, StatsError
from .excitation import ExcitationConfig, ExcitationRecord, generate_excitation, to_force_history
from .ode import rk4_fixed
from .structure import (
    PARAM_NAMES,
    BoucWenSystem,
    Layout,
    ParameterRealization,
    ParameterSpec,
    assemble_system,
    build_graph,
    default_layout,
    sample_parameters,
    default_parameter_spec,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class ResponseHistory:
    dt: float
    u: np.ndarray  # (T, n)
    v: np.ndarray
    a: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        shapes = {arr.shape for arr in (self.u, self.v, self.a, self.z)}
        if len(shapes) != 1:
            raise DataError(f"response arrays disagree in shape: {shapes}")

    @property
    def n(self) -> int:
        return self.u.shape[1]


def _state_derivative(system: BoucWenSystem):
    n = system.n
    minv = 1.0 / system.mass
    C = system.damping
    ak = system.alpha * system.story_stiffness
    bk = (1.0 - system.alpha) * system.story_stiffness * system.uy
    A, beta, gamma, nbw = system.bw_A, system.bw_beta, system.bw_gamma, system.bw_n
    inv_uy = 1.0 / system.uy

    def rhs(y, f):
        u, v, z = y[:n], y[n:2 * n], y[2 * n:]
        d = u.copy()
        d[1:] -= u[:-1]
        dd = v.copy()
        dd[1:] -= v[:-1]
        s = ak * d + bk * z
        fs = s.copy()
        fs[:-1] -= s[1:]
        acc = (f - C @ v - fs) * minv
        az = np.abs(z)
        zdot = (A * dd - beta * np.abs(dd) * az ** (nbw - 1.0) * z - gamma * dd * az**nbw) * inv_uy
        return np.concatenate((v, acc, zdot))

    return rhs


def accelerations(system: BoucWenSystem, forces: np.ndarray, u, v, z) -> np.ndarray:
    """Equation-of-motion accelerations for stacked states, rows are time steps."""
    d = u.copy()
    d[:, 1:] -= u[:, :-1]
    k = system.story_stiffness
    s = system.alpha * k * d + (1.0 - system.alpha) * k * system.uy * z
    fs = s.copy()
    fs[:, :-1] -= s[:, 1:]
    return (forces - v @ system.damping.T - fs) / system.mass


def integrate_rk4(system: BoucWenSystem, forces: np.ndarray, dt: float,
                  initial_state: np.ndarray | None = None) -> ResponseHistory:
    """Classical RK4 on the state ``(u, v, z)``; row 0 is the initial state."""
    forces = np.asarray(forces, dtype=float)
    n = system.n
    if forces.ndim != 2 or forces.shape[1] != n:
        raise DataError(f"forces must have shape (T, {n}), got {forces.shape}")
    y0 = np.zeros(3 * n) if initial_state is None else np.asarray(initial_state, float)
    if y0.shape != (3 * n,):
        raise DataError(f"initial state must have length {3 * n}")
    states = rk4_fixed(_state_derivative(system), y0, forces, dt)
    u, v, z = states[:, :n], states[:, n:2 * n], states[:, 2 * n:]
    a = accelerations(system, forces, u, v, z)
    return ResponseHistory(dt, u, v, a, z)


def mechanical_energy(system: BoucWenSystem, resp: ResponseHistory) -> np.ndarray:
    """Kinetic + elastic + hysteretic storage ``(1-alpha) k uy**2 z**2 / (2A)``.

    Non-increasing under free vibration whenever ``beta >= |gamma|``.
    """
    d = resp.u.copy()
    d[:, 1:] -= resp.u[:, :-1]
    k = system.story_stiffness
    kin = 0.5 * np.sum(system.mass * resp.v**2, axis=1)
    el = 0.5 * np.sum(system.alpha * k * d**2, axis=1)
    hy = 0.5 * np.sum((1.0 - system.alpha) * k * system.uy**2 * resp.z**2, axis=1) / system.bw_A
    return kin + el + hy


def hash64(*parts) -> int:
    """Stable 64-bit seed from a tuple of ints/strings (BLAKE2b, 8-byte digest)."""
    text = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ExperimentConfig:
    parameters: ParameterSpec = field(default_factory=default_parameter_spec)
    layout: Layout = field(default_factory=default_layout)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    counts: dict = field(default_factory=lambda: {"train": 1500, "val": 200, "test": 200})
    deterministic_splits: tuple = ("val", "test")

    def __post_init__(self):
        if set(self.counts) != set(SPLITS):
            raise ConfigError(f"counts must define {SPLITS}")
        for k, v in self.counts.items():
            if int(v) < 1:
                raise ConfigError(f"count for {k} must be >= 1")
        for s in self.deterministic_splits:
            if s not in SPLITS:
                raise ConfigError(f"unknown deterministic source split {s!r}")

    @property
    def density_mean(self) -> float:
        return self.parameters["density"].mean

    def to_dict(self) -> dict:
        return {
            "parameters": self.parameters.to_dict(),
            "layout": self.layout.to_dict(),
            "excitation": self.excitation.to_dict(),
            "counts": {k: int(self.counts[k]) for k in SPLITS},
            "deterministic_splits": list(self.deterministic_splits),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"parameters", "layout", "excitation", "counts", "deterministic_splits"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        if "parameters" in d:
            kw["parameters"] = ParameterSpec.from_dict(d["parameters"])
        if "layout" in d:
            kw["layout"] = Layout.from_dict(d["layout"])
        if "excitation" in d:
            kw["excitation"] = ExcitationConfig.from_dict(d["excitation"])
        if "counts" in d:
            kw["counts"] = {k: int(v) for k, v in d["counts"].items()}
        if "deterministic_splits" in d:
            kw["deterministic_splits"] = tuple(d["deterministic_splits"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def sample_channels(record: ExcitationRecord, resp: ResponseHistory) -> np.ndarray:
    """Channel stack ``[a_g, u_1..u_n, v_1..v_n, a_1..a_n, z_1..z_n]``."""
    return np.vstack([record.samples[None, :], resp.u.T, resp.v.T, resp.a.T, resp.z.T])


def simulate_sample(params: ParameterRealization, layout: Layout, exc: ExcitationConfig,
                    density_mean: float) -> tuple[ExcitationRecord, ResponseHistory]:
    system = assemble_system(params, layout, density_mean)
    record = generate_excitation(exc)
    resp = integrate_rk4(system, to_force_history(record, system), exc.dt)
    return record, resp


def _plan(config: ExperimentConfig, master_seed: int) -> list[dict]:
    plan = []
    for split in SPLITS:
        for j in range(config.counts[split]):
            seed = hash64(master_seed, split, j)
            plan.append({
                "id": f"{split}-{j:05d}", "split": split, "seed": seed,
                "param_seed": hash64(seed, "params"), "excitation_seed": seed,
            })
    for src in config.deterministic_splits:
        for j in range(config.counts[src]):
            seed = hash64(master_seed, src, j)
            plan.append({
                "id": f"det-{src}-{j:05d}", "split": "deterministic", "seed": seed,
                "param_seed": None, "excitation_seed": seed, "source": f"{src}-{j:05d}",
            })
    return plan


def _run_entry(args) -> dict:
    entry, config_dict, out_dir = args
    config = ExperimentConfig.from_dict(config_dict)
    if entry["param_seed"] is None:
        params = config.parameters.means()
    else:
        params = sample_parameters(config.parameters, entry["param_seed"])
    result = dict(entry, params=params.to_dict(), file=f"samples/{entry['id']}.bin")
    try:
        record, resp = simulate_sample(params, config.layout,
                                       config.excitation.with_seed(entry["excitation_seed"]),
                                       config.density_mean)
    except IntegrationError as exc:
        log.warning("sample %s failed: %s", entry["id"], exc)
        result.update(status="failed", error=str(exc), file=None)
        return result
    write_channels(Path(out_dir) / result["file"], sample_channels(record, resp), resp.n)
    result["status"] = "ok"
    return result


class Dataset:
    """Read access to a dataset directory written by :func:`build_dataset`."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        path = self.root / "manifest.json"
        try:
            self.manifest = json.loads(path.read_text())
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
        if self.manifest.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"{path}: unsupported schema version")
        self.config = ExperimentConfig.from_dict(self.manifest["config"])
        self._index = {s["id"]: s for s in self.manifest["samples"]}

    @property
    def n(self) -> int:
        return self.manifest["n"]

    @property
    def dt(self) -> float:
        return self.manifest["dt"]

    @property
    def n_steps(self) -> int:
        return self.manifest["T"]

    @property
    def stats(self) -> "NormalizationStats | None":
        st = self.manifest.get("normalization")
        return None if st is None else NormalizationStats.from_dict(st)

    def ids(self, split: str) -> list[str]:
        return [s["id"] for s in self.manifest["samples"] if s["split"] == split and s["status"] == "ok"]

    def entry(self, sample_id: str) -> dict:
        try:
            return self._index[sample_id]
        except KeyError:
            raise DataError(f"unknown sample id {sample_id!r}") from None

    def params(self, sample_id: str) -> ParameterRealization:
        return ParameterRealization(**self.entry(sample_id)["params"])

    def channels(self, sample_id: str) -> np.ndarray:
        e = self.entry(sample_id)
        if e["status"] != "ok":
            raise DataError(f"sample {sample_id} failed during generation: {e.get('error')}")
        data, n = read_channels(self.root / e["file"])
        if n != self.n or data.shape != (1 + 4 * n, self.n_steps):
            raise DataError(f"{e['file']}: shape {data.shape} inconsistent with manifest")
        return data

    def load(self, sample_id: str) -> tuple[ExcitationRecord, ResponseHistory]:
        ch = self.channels(sample_id)
        n = self.n
        e = self.entry(sample_id)
        rec = ExcitationRecord(self.dt, ch[0], e["excitation_seed"])
        resp = ResponseHistory(self.dt, ch[1:1 + n].T, ch[1 + n:1 + 2 * n].T,
                               ch[1 + 2 * n:1 + 3 * n].T, ch[1 + 3 * n:].T)
        return rec, resp

    def split_arrays(self, split: str) -> dict:
        """Ground acceleration ``(N, T)``, displacements ``(N, T, n)`` and raw params ``(N, 3)``."""
        ids = self.ids(split)
        ag = np.empty((len(ids), self.n_steps))
        u = np.empty((len(ids), self.n_steps, self.n))
        for i, sid in enumerate(ids):
            ch = self.channels(sid)
            ag[i] = ch[0]
            u[i] = ch[1:1 + self.n].T
        params = np.array([self.params(s).as_array() for s in ids]).reshape(len(ids), len(PARAM_NAMES))
        return {"ids": ids, "ag": ag, "u": u, "params": params}

    def deterministic_for(self, sample_id: str) -> str | None:
        for s in self.manifest["samples"]:
            if s.get("source") == sample_id and s["status"] == "ok":
                return s["id"]
        return None

    def system(self, sample_id: str) -> BoucWenSystem:
        return assemble_system(self.params(sample_id), self.config.layout, self.config.density_mean)

    def graph(self, sample_id: str):
        return build_graph(self.system(sample_id), self.params(sample_id))


def write_manifest(root: Path, manifest: dict) -> None:
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def build_dataset(config: ExperimentConfig, out_dir: str | Path, master_seed: int,
                  jobs: int = 1) -> Dataset:
    """Simulate every split and write ``out_dir/manifest.json`` plus one file per sample."""
    root = Path(out_dir)
    try:
        (root / "samples").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {root}: {exc}") from exc
    plan = _plan(config, master_seed)
    cfg = config.to_dict()
    work = [(entry, cfg, str(root)) for entry in plan]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_entry, work, chunksize=4))
    else:
        results = [_run_entry(w) for w in work]
    failed = [r["id"] for r in results if r["status"] != "ok"]
    if failed:
        log.warning("%d samples failed: %s", len(failed), ", ".join(failed))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "domain": "time",
        "master_seed": int(master_seed),
        "config": cfg,
        "n": config.layout.n,
        "T": config.excitation.n_steps,
        "dt": config.excitation.dt,
        "channels": "a_g, u[1..n], v[1..n], a[1..n], z[1..n]",
        "counts": {s: sum(r["split"] == s and r["status"] == "ok" for r in results)
                   for s in (*SPLITS, "deterministic")},
        "failed": failed,
        "samples": results,
    }
    write_manifest(root, manifest)
    ds = Dataset(root)
    manifest["normalization"] = normalize_channels(ds).to_dict()
    write_manifest(root, manifest)
    return Dataset(root)


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    u_peak: np.ndarray  # (n,) expected peak |u| per DOF over train
    exc_peak: float
    param_mean: np.ndarray  # (3,)
    param_std: np.ndarray
    node_mean: np.ndarray  # (3,) over story nodes of train graphs
    node_std: np.ndarray

    def standardize_params(self, params: np.ndarray) -> np.ndarray:
        return (np.asarray(params, float) - self.param_mean) / self.param_std

    def normalize_u(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, float) / self.u_peak

    def denormalize_u(self, un: np.ndarray) -> np.ndarray:
        return np.asarray(un, float) * self.u_peak

    def normalize_exc(self, ag: np.ndarray) -> np.ndarray:
        return np.asarray(ag, float) / self.exc_peak

    def standardize_nodes(self, feats: np.ndarray, virtual: int | None) -> np.ndarray:
        """Standardise graph node features; the virtual node keeps zeros in member columns."""
        out = (np.asarray(feats, float) - self.node_mean) / self.node_std
        if virtual is not None:
            out[..., virtual, :2] = 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "u_peak": self.u_peak.tolist(), "exc_peak": float(self.exc_peak),
            "param_mean": self.param_mean.tolist(), "param_std": self.param_std.tolist(),
            "node_mean": self.node_mean.tolist(), "node_std": self.node_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["u_peak"], float), float(d["exc_peak"]),
                   np.array(d["param_mean"], float), np.array(d["param_std"], float),
                   np.array(d["node_mean"], float), np.array(d["node_std"], float))


def _safe_std(x: np.ndarray, what: str) -> np.ndarray:
    sd = np.std(x, axis=0)
    if np.any(sd == 0):
        log.warning("%s: zero spread in columns %s; using unit scale", what, np.flatnonzero(sd == 0).tolist())
        sd = np.where(sd == 0, 1.0, sd)
    return sd


def compute_stats(u: np.ndarray, ag: np.ndarray, params: np.ndarray,
                  node_feats: np.ndarray) -> NormalizationStats:
    """``u (N, T, n)``, ``ag (N, T)``, ``params (N, 3)``, ``node_feats (N, n, 3)`` story nodes only."""
    if u.shape[0] == 0:
        raise StatsError("training split is empty")
    u_peak = np.mean(np.max(np.abs(u), axis=1), axis=0)
    zero = np.flatnonzero(u_peak == 0)
    if zero.size:
        raise StatsError(f"zero expected peak for DOF(s) {zero.tolist()}")
    exc_peak = float(np.mean(np.max(np.abs(ag), axis=1)))
    if exc_peak == 0:
        raise StatsError("zero expected peak for the excitation channel")
    flat_nodes = node_feats.reshape(-1, node_feats.shape[-1])
    return NormalizationStats(
        u_peak=u_peak, exc_peak=exc_peak,
        param_mean=params.mean(axis=0), param_std=_safe_std(params, "parameters"),
        node_mean=flat_nodes.mean(axis=0), node_std=_safe_std(flat_nodes, "node features"),
    )


def normalize_channels(dataset: Dataset) -> NormalizationStats:
    arr = dataset.split_arrays("train")
    nodes = np.array([dataset.graph(s).node_features[:dataset.n] for s in arr["ids"]])
    if nodes.size == 0:
        raise StatsError("training split is empty")
    return compute_stats(arr["u"], arr["ag"], arr["params"], nodes)
