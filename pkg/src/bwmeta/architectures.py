"""The three wavelet-domain metamodels and their training loops.

All three share one time-series module: a stacked LSTM over the wavelet index
``k`` followed by a Gaussian head. They differ in the per-``k`` feature vector
fed to the first LSTM layer:

* ``mlp-lstm``: ``MLP([a_F,k ; Gamma])``.
* ``mpnn-lstm``: ``FNN([a_F,k ; Gamma_hat])`` where ``Gamma_hat`` is the mean-pooled
  embedding of the structure graph after ``M`` message-passing steps.
* ``ae-lstm``: the MLP fusion, but the regression target is the latent code
  ``r_k`` of a separately trained, frozen autoencoder of ``a_u,k``.

Dropout: one concrete-dropout site on the fusion output and one on the input
of every LSTM layer ``l = 2 .. L-1``. Masks have shape ``(B, 1, width)`` so one
draw is shared by every ``k`` of a sequence.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .excitation import make_rng
from .neural import engine as E
from .neural.layers import (
    MLP,
    ConcreteDropout,
    Dense,
    GaussianHead,
    LSTMCell,
    beta_nll_loss,
    concrete_mask,
    lstm_sequence,
)
from .neural.params import ParamStore, adam_step
from .simulate import hash64

log = logging.getLogger(__name__)

ARCHITECTURES = ("mlp-lstm", "mpnn-lstm", "ae-lstm")
MODES = ("train", "mc_inference", "mean")
CHECKPOINT_VERSION = 1


def _from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**kw)


@dataclass(frozen=True)
class AutoencoderConfig:
    latent: int = 3
    hidden: int = 32
    activation: str = "tanh"
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 60
    patience: int = 10
    seed: int = 0
    strict: bool = True  # enforce latent < n / 2

    def __post_init__(self):
        if self.latent < 1 or self.hidden < 1:
            raise ConfigError("autoencoder widths must be positive")
        if self.activation not in E.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("invalid autoencoder training hyperparameters")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderConfig":
        return _from_dict(cls, d)


@dataclass(frozen=True)
class MetamodelConfig:
    arch: str = "mlp-lstm"
    n: int = 8  # response DOFs
    n_exc: int = 1  # excitation channels
    n_param: int = 3  # Gamma features
    node_features: int = 3
    fusion_hidden: tuple = (64, 64)
    lstm_layers: int = 3
    lstm_hidden: int = 64
    head_hidden: int = 32
    mpnn_hidden: int = 32
    mpnn_steps: int = 3
    mpnn_pool_virtual: bool = True
    latent: int = 3  # ae-lstm output width, must match the autoencoder
    fusion_dropout: bool = True
    init_p: float = 0.1
    temperature: float = 0.1
    weight_reg: float = 1e-6
    dropout_reg: float = 1e-5
    beta: float = 0.5
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 60
    patience: int = 20
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.lstm_layers < 1 or self.lstm_hidden < 1 or self.head_hidden < 1:
            raise ConfigError("LSTM depth and widths must be positive")
        if not self.fusion_hidden or min(self.fusion_hidden) < 1:
            raise ConfigError("fusion_hidden must list positive widths")
        if self.mpnn_steps < 0 or self.mpnn_hidden < 1:
            raise ConfigError("invalid MPNN settings")
        if not 0 < self.init_p < 1 or self.temperature <= 0:
            raise ConfigError("dropout init_p must be in (0, 1) and temperature positive")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("invalid training hyperparameters")

    @property
    def n_out(self) -> int:
        return self.latent if self.arch == "ae-lstm" else self.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_hidden"] = list(self.fusion_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetamodelConfig":
        return _from_dict(cls, d)


# --------------------------------------------------------------------------- MPNN

def graph_operators(neighbors) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-hot gathers for the directed edges ``p <- j`` and the neighbour-mean scatter.

    Returns ``(G_self (E, N), G_nbr (E, N), A (N, E))`` so that for node states
    ``s (.., N, h)``: ``G_self @ s`` are the receivers, ``G_nbr @ s`` the senders,
    and ``A @ msg`` averages incoming messages per node.
    """
    N = len(neighbors)
    pairs = [(p, j) for p, nb in enumerate(neighbors) for j in nb]
    if N == 0:
        raise DataError("empty graph")
    Ecount = len(pairs)
    g_self = np.zeros((Ecount, N))
    g_nbr = np.zeros((Ecount, N))
    agg = np.zeros((N, Ecount))
    for e, (p, j) in enumerate(pairs):
        g_self[e, p] = 1.0
        g_nbr[e, j] = 1.0
        agg[p, e] = 1.0 / len(neighbors[p])
    return g_self, g_nbr, agg


class MpnnEncoder:
    """Linear lift, ``M`` residual message-passing steps with shared ``f``/``g``, mean pooling."""

    def __init__(self, store: ParamStore, name: str, node_features: int, hidden: int, steps: int,
                 pool_virtual: bool = True, rng=None):
        self.hidden, self.steps, self.pool_virtual = hidden, steps, pool_virtual
        self.lift = Dense(store, f"{name}.lift", node_features, hidden, "identity", rng)
        self.f = MLP(store, f"{name}.f", [2 * hidden, hidden, hidden], "tanh", rng=rng)
        self.g = MLP(store, f"{name}.g", [2 * hidden, hidden, hidden], "tanh", rng=rng)
        self._ops = {}

    def operators(self, neighbors):
        key = tuple(tuple(nb) for nb in neighbors)
        if key not in self._ops:
            self._ops[key] = graph_operators(key)
        return self._ops[key]

    def node_states(self, features, neighbors) -> E.Tensor:
        """Node embeddings after ``M`` steps for features ``(B, N, F)`` or ``(N, F)``."""
        g_self, g_nbr, agg = self.operators(neighbors)
        v = self.lift(features)
        v_prev = None  # v^(-1) := 0
        for _ in range(self.steps):
            s = v if v_prev is None else v + v_prev
            msg = self.f(E.concat([E.matmul(g_self, s), E.matmul(g_nbr, s)], axis=-1))
            v_prev, v = v, self.g(E.concat([s, E.matmul(agg, msg)], axis=-1))
        return v

    def pool(self, v: E.Tensor, virtual: int | None) -> E.Tensor:
        if self.pool_virtual or virtual is None:
            return E.mean(v, axis=-2)
        keep = [i for i in range(v.shape[-2]) if i != virtual]
        return E.mean(v[..., keep, :], axis=-2)


def mpnn_message_pass(graph, encoder: MpnnEncoder, features=None) -> np.ndarray | E.Tensor:
    """Graph embedding ``Gamma_hat`` of a :class:`StructureGraph`.

    ``features`` overrides ``graph.node_features`` (e.g. standardised copies,
    possibly batched). Returns a Tensor when gradients are being recorded.
    """
    if graph.node_count == 0:
        raise DataError("empty graph")
    feats = graph.node_features if features is None else features
    out = encoder.pool(encoder.node_states(feats, graph.neighbors), graph.virtual)
    return out


# --------------------------------------------------------------------------- autoencoder

class AutoencoderPair:
    """Encoder ``[a_u ; Gamma] -> r`` and decoder ``[r ; Gamma] -> a_u``, one hidden layer each."""

    def __init__(self, n: int, n_param: int, config: AutoencoderConfig):
        if config.strict and not config.latent < n / 2:
            raise ConfigError(f"latent width {config.latent} must be < n/2 = {n / 2}")
        self.n, self.n_param, self.config = n, n_param, config
        self.store = ParamStore()
        rng = make_rng(hash64(config.seed, "ae-init"))
        act = config.activation
        self.encoder = MLP(self.store, "enc", [n + n_param, config.hidden, config.latent], act,
                           final_activation="identity", rng=rng)
        self.decoder = MLP(self.store, "dec", [config.latent + n_param, config.hidden, n], act,
                           final_activation="identity", rng=rng)
        self.val_error = float("nan")
        # fixed affine map applied to the raw code, set from the train split after fitting
        self.latent_mean = np.zeros(config.latent)
        self.latent_std = np.ones(config.latent)

    @property
    def latent(self) -> int:
        return self.config.latent

    def encode(self, au, gamma):
        """``au (.., K, n)``, ``gamma (.., 3)`` -> standardised ``r (.., K, n_r)``."""
        raw = self.encoder(E.concat([E.as_tensor(au), _tile_k(gamma, np.shape(au)[-2])], axis=-1))
        return (raw - self.latent_mean) * (1.0 / self.latent_std)

    def decode(self, r, gamma):
        raw = E.as_tensor(r) * self.latent_std + self.latent_mean
        return self.decoder(E.concat([raw, _tile_k(gamma, np.shape(r)[-2])], axis=-1))

    def fit_latent_scale(self, split) -> None:
        """Per-channel mean/std of the raw code over the samples and ``k`` of ``split``."""
        self.latent_mean = np.zeros(self.latent)
        self.latent_std = np.ones(self.latent)
        with E.no_grad():
            r = self.encode(split.au, split.gamma).data.reshape(-1, self.latent)
        std = r.std(axis=0)
        self.latent_mean, self.latent_std = r.mean(axis=0), np.where(std > 0, std, 1.0)

    def reconstruct(self, au, gamma) -> np.ndarray:
        with E.no_grad():
            return self.decode(self.encode(au, gamma), gamma).data


def _tile_k(gamma, K: int) -> E.Tensor:
    """``(.., c)`` -> ``(.., K, c)`` by repetition along a new ``k`` axis."""
    g = E.as_tensor(gamma)
    shape = g.shape[:-1] + (K, g.shape[-1])
    return E.broadcast_to(E.reshape(g, g.shape[:-1] + (1, g.shape[-1])), shape)


def _ae_rows(split):
    K = split.au.shape[1]
    x = split.au.reshape(-1, split.au.shape[-1])
    g = np.repeat(split.gamma, K, axis=0)
    return x, g


def autoencoder_error(pair: AutoencoderPair, split) -> float:
    """Mean squared reconstruction error of the normalised coefficients over samples, k and DOFs."""
    return float(np.mean((pair.reconstruct(split.au, split.gamma) - split.au) ** 2))


def train_autoencoder(dataset, pair: AutoencoderPair, config: AutoencoderConfig | None = None) -> AutoencoderPair:
    """Minimise the reconstruction MSE of ``a_u`` over all train rows ``(sample, k)``."""
    config = config or pair.config
    train, val = dataset.splits["train"], dataset.splits.get("val")
    x, g = _ae_rows(train)
    rng = make_rng(hash64(config.seed, "ae-shuffle"))
    best, best_state, bad = math.inf, pair.store.snapshot(), 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = E.Tensor(x[idx])
            gb = g[idx]
            enc = pair.encoder(E.concat([xb, E.Tensor(gb)], axis=-1))
            rec = pair.decoder(E.concat([enc, E.Tensor(gb)], axis=-1))
            diff = rec - x[idx]
            loss = E.mean(diff * diff)
            if not np.isfinite(loss.data):
                raise NumericalError(f"autoencoder loss diverged at epoch {epoch}")
            pair.store.zero_grad()
            loss.backward()
            adam_step(pair.store, config.lr)
        err = autoencoder_error(pair, val if val is not None else train)
        log.info("autoencoder epoch %d val_error %.3e", epoch, err)
        if err < best:
            best, best_state, bad = err, pair.store.snapshot(), 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    pair.store.restore(best_state)
    pair.val_error = best
    # the metamodel regresses the standardised code, so all latent channels enter the loss on one scale
    pair.fit_latent_scale(train)
    return pair


def latent_width_rule(widths, errors, threshold: float = 0.05) -> int:
    """Width at which the relative error improvement first drops below ``threshold``.

    If the very first increment is already marginal the smallest width is
    returned; if no increment is marginal the largest width is returned.
    """
    widths, errors = list(widths), [float(e) for e in errors]
    if len(widths) != len(errors) or not widths:
        raise ConfigError("widths and errors must be non-empty and of equal length")
    if len(widths) == 1:
        log.warning("single latent width candidate %s returned as-is", widths[0])
        return widths[0]
    for i in range(1, len(widths)):
        prev = errors[i - 1]
        gain = (prev - errors[i]) / prev if prev > 0 else 0.0
        if gain < threshold:
            return widths[0] if i == 1 else widths[i]
    return widths[-1]


def select_latent_width(dataset, widths, config: AutoencoderConfig | None = None) -> tuple[int, list[dict]]:
    """Train one autoencoder per candidate width; return the selected width and the error table."""
    config = config or AutoencoderConfig()
    widths = list(widths)
    table = []
    for w in widths:
        cfg = AutoencoderConfig(**{**config.to_dict(), "latent": int(w)})
        pair = train_autoencoder(dataset, AutoencoderPair(dataset.n, dataset.splits["train"].gamma.shape[-1], cfg), cfg)
        table.append({"latent": int(w), "val_error": pair.val_error})
    chosen = latent_width_rule(widths, [row["val_error"] for row in table])
    return chosen, table


# --------------------------------------------------------------------------- metamodel

class Metamodel:
    """Feature module + stacked LSTM + Gaussian head for one architecture."""

    def __init__(self, config: MetamodelConfig, neighbors=None, virtual: int | None = None):
        self.config = config
        self.neighbors = None if neighbors is None else tuple(tuple(nb) for nb in neighbors)
        self.virtual = virtual
        self.store = ParamStore()
        rng = make_rng(hash64(config.seed, "init"))
        c = config
        if c.arch == "mpnn-lstm":
            if self.neighbors is None:
                raise ConfigError("mpnn-lstm needs the structure graph neighbours")
            self.encoder = MpnnEncoder(self.store, "mpnn", c.node_features, c.mpnn_hidden, c.mpnn_steps,
                                       c.mpnn_pool_virtual, rng)
            cond = c.mpnn_hidden
        else:
            self.encoder = None
            cond = c.n_param
        self.fusion = MLP(self.store, "fusion", [c.n_exc + cond, *c.fusion_hidden], "tanh", rng=rng)
        self.sites: list[tuple[int, ConcreteDropout]] = []  # (LSTM layer index fed, dropout)
        if c.fusion_dropout:
            self.sites.append((0, ConcreteDropout(self.store, "drop.fusion", c.init_p, c.temperature,
                                                  c.weight_reg, c.dropout_reg)))
        widths = [c.fusion_hidden[-1]] + [c.lstm_hidden] * c.lstm_layers
        self.cells = [LSTMCell(self.store, f"lstm.{l}", widths[l], c.lstm_hidden, rng) for l in range(c.lstm_layers)]
        for l in range(1, c.lstm_layers - 1):
            self.sites.append((l, ConcreteDropout(self.store, f"drop.lstm{l}", c.init_p, c.temperature,
                                                  c.weight_reg, c.dropout_reg)))
        self.head = GaussianHead(self.store, "head", c.lstm_hidden, c.head_hidden, c.n_out, rng)

    @property
    def dropout_p(self) -> list[float]:
        return [d.p for _, d in self.sites]

    def force_dropout(self, p: float):
        for _, d in self.sites:
            d.force_p(p)

    def site_width(self, layer: int) -> int:
        return self.cells[layer].n_in

    def condition(self, gamma, nodes=None):
        if self.encoder is None:
            return E.as_tensor(gamma)
        if nodes is None:
            raise DataError("mpnn-lstm forward needs node features")
        v = self.encoder.node_states(nodes, self.neighbors)
        return self.encoder.pool(v, self.virtual)

    def features(self, aF, gamma, nodes=None) -> E.Tensor:
        aF = E.as_tensor(aF)
        if aF.shape[-1] != self.config.n_exc:
            raise DataError(f"expected {self.config.n_exc} excitation channel(s), got {aF.shape[-1]}")
        cond = self.condition(gamma, nodes)
        return self.fusion(E.concat([aF, _tile_k(cond, aF.shape[-2])], axis=-1))

    def sample_noise(self, batch: int, rng: np.random.Generator) -> dict:
        return {d.name: rng.uniform(size=(batch, 1, self.site_width(l))) for l, d in self.sites}

    def forward(self, aF, gamma, nodes=None, mode: str = "mean", rng=None, noise: dict | None = None):
        """``aF (B, K, 1)``, ``gamma (B, 3)``, ``nodes (B, N_v, F)`` -> ``(mu, log_var)`` each ``(B, K, n_out)``."""
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        if mode == "mean" and (rng is not None or noise is not None):
            raise ConfigError("mean mode is deterministic; do not pass an RNG or noise")
        h = self.features(aF, gamma, nodes)
        B = h.shape[0]
        if mode != "mean" and noise is None:
            if rng is None:
                raise ConfigError(f"{mode} mode needs an RNG for dropout masks")
            noise = self.sample_noise(B, rng)
        masks = {}
        if mode != "mean":
            for l, d in self.sites:
                masks[l] = concrete_mask(d, None, noise=noise[d.name])
        for l, cell in enumerate(self.cells):
            if l in masks:
                h = h * masks[l]
            h = lstm_sequence(cell, h)
        return self.head(h)

    def regularization(self) -> E.Tensor:
        total = E.Tensor(0.0)
        for l, d in self.sites:
            total = total + d.regularization([self.cells[l].Wx], self.site_width(l))
        return total

    def loss(self, batch, target, rng=None, noise=None) -> E.Tensor:
        mu, lv = self.forward(batch["aF"], batch["gamma"], batch.get("nodes"), "train", rng, noise)
        return beta_nll_loss(target, mu, lv, self.config.beta) + self.regularization()


@dataclass(eq=False)
class TrainedModel:
    model: Metamodel
    autoencoder: AutoencoderPair | None = None
    stats: dict | None = None  # normalization stats (dict form)
    T: int | None = None
    wavelet: dict = field(default_factory=lambda: {"family": "db6", "level": 3})
    val_loss: float = float("nan")
    epochs: int = 0
    stopped_early: bool = False
    history: list = field(default_factory=list)

    @property
    def config(self) -> MetamodelConfig:
        return self.model.config

    @property
    def arch(self) -> str:
        return self.model.config.arch


def _inputs(split, idx=None) -> dict:
    if idx is None:
        return {"aF": split.aF, "gamma": split.gamma, "nodes": split.nodes}
    return {"aF": split.aF[idx], "gamma": split.gamma[idx], "nodes": split.nodes[idx]}


def targets_for(model: Metamodel, split, autoencoder: AutoencoderPair | None = None) -> np.ndarray:
    if model.config.arch != "ae-lstm":
        return split.au
    if autoencoder is None:
        raise ConfigError("ae-lstm needs a trained autoencoder")
    with E.no_grad():
        return autoencoder.encode(split.au, split.gamma).data


def evaluate_loss(model: Metamodel, split, target, batch_size: int = 64) -> float:
    """Mean-mode beta-NLL over a split (no regulariser)."""
    total, count = 0.0, 0
    with E.no_grad():
        for start in range(0, len(split), batch_size):
            idx = np.arange(start, min(start + batch_size, len(split)))
            b = _inputs(split, idx)
            mu, lv = model.forward(b["aF"], b["gamma"], b["nodes"], "mean")
            total += float(beta_nll_loss(target[idx], mu, lv, model.config.beta).data) * idx.size
            count += idx.size
    return total / count


def train_metamodel(dataset, config: MetamodelConfig, autoencoder: AutoencoderPair | None = None,
                    history_path=None) -> TrainedModel:
    """Adam on beta-NLL + concrete-dropout regulariser, early stopping on validation loss.

    ``dataset`` is a :class:`~bwmeta.wavelet.CoeffDataset`. The best validation
    checkpoint is restored before returning.
    """
    if config.arch == "ae-lstm":
        if autoencoder is None:
            raise ConfigError("ae-lstm needs a trained autoencoder")
        if autoencoder.latent != config.latent:
            raise ConfigError(f"config latent {config.latent} != autoencoder latent {autoencoder.latent}")
    if config.n != dataset.n:
        raise ConfigError(f"config n={config.n} but dataset has n={dataset.n}")
    model = Metamodel(config, dataset.neighbors, dataset.virtual)
    train = dataset.splits["train"]
    val = dataset.splits.get("val", train)
    y_train = targets_for(model, train, autoencoder)
    y_val = targets_for(model, val, autoencoder)
    shuffle_rng = make_rng(hash64(config.seed, "shuffle"))
    mask_rng = make_rng(hash64(config.seed, "masks"))
    best, best_state, bad = evaluate_loss(model, val, y_val), model.store.snapshot(), 0
    history, stopped, epoch = [], False, 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train))
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = model.loss(_inputs(train, idx), y_train[idx], mask_rng)
            if not np.isfinite(loss.data):
                raise NumericalError(
                    f"training diverged at epoch {epoch} (loss {float(loss.data)}, "
                    f"dropout p {model.dropout_p}, logvar clamps {model.head.clamp_events})")
            model.store.zero_grad()
            loss.backward()
            model.store.clip_grad_norm(config.grad_clip)
            adam_step(model.store, config.lr)
            total += float(loss.data) * idx.size
        val_loss = evaluate_loss(model, val, y_val)
        p = float(np.mean(model.dropout_p)) if model.sites else 0.0
        history.append({"epoch": epoch, "train_loss": total / len(train), "val_loss": val_loss, "p_dropout": p})
        log.info("%s epoch %d train %.4f val %.4f p %.3f", config.arch, epoch, total / len(train), val_loss, p)
        if val_loss < best:
            best, best_state, bad = val_loss, model.store.snapshot(), 0
        else:
            bad += 1
            if bad >= config.patience:
                stopped = True
                log.info("early stopping after %d epochs without improvement", bad)
                break
    model.store.restore(best_state)
    result = TrainedModel(model, autoencoder, dataset.stats.to_dict(), dataset.T,
                          {"family": dataset.basis.family, "level": dataset.basis.level},
                          best, epoch if config.max_epochs else 0, stopped, history)
    if history_path is not None:
        write_history(history, history_path)
    return result


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "p_dropout"])
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if k != "epoch" else int(v)) for k, v in row.items()})


# --------------------------------------------------------------------------- checkpoints

def _write_blob(store: ParamStore, path: Path) -> None:
    path.write_bytes(store.to_bytes())


def _load_blob(store: ParamStore, path: Path) -> None:
    try:
        values = ParamStore.parse_bytes(path.read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if set(values) != set(store.params):
        raise DataError(f"{path}: parameter names do not match the architecture")
    store.restore(values)


def save_autoencoder(pair: AutoencoderPair, path) -> Path:
    """Write ``<path>.json`` + ``<path>.bin``; returns the JSON path."""
    base = Path(path)
    meta = {"kind": "autoencoder", "version": CHECKPOINT_VERSION, "n": pair.n, "n_param": pair.n_param,
            "config": pair.config.to_dict(), "val_error": pair.val_error, "blob": base.name + ".bin",
            "latent_mean": pair.latent_mean.tolist(), "latent_std": pair.latent_std.tolist()}
    _write_blob(pair.store, base.with_name(base.name + ".bin"))
    out = base.with_name(base.name + ".json")
    out.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_autoencoder(json_path) -> AutoencoderPair:
    path = Path(json_path)
    meta = _read_meta(path, "autoencoder")
    pair = AutoencoderPair(meta["n"], meta["n_param"], AutoencoderConfig.from_dict(meta["config"]))
    _load_blob(pair.store, path.parent / meta["blob"])
    pair.val_error = meta["val_error"]
    pair.latent_mean = np.asarray(meta["latent_mean"], float)
    pair.latent_std = np.asarray(meta["latent_std"], float)
    return pair


def _read_meta(path: Path, kind: str) -> dict:
    try:
        meta = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if meta.get("kind") != kind or meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: not a version-{CHECKPOINT_VERSION} {kind} checkpoint")
    return meta


def save_checkpoint(trained: TrainedModel, path, autoencoder_path=None) -> Path:
    """Write ``<path>.json`` (architecture, hyperparameters, stats) + ``<path>.bin`` (parameters)."""
    base = Path(path)
    m = trained.model
    if autoencoder_path is None and trained.autoencoder is not None:
        autoencoder_path = save_autoencoder(trained.autoencoder, base.with_name(base.name + "-autoencoder"))
    meta = {
        "kind": "metamodel", "version": CHECKPOINT_VERSION,
        "config": trained.config.to_dict(),
        "neighbors": None if m.neighbors is None else [list(nb) for nb in m.neighbors],
        "virtual": m.virtual,
        "normalization": trained.stats, "T": trained.T, "wavelet": trained.wavelet,
        "val_loss": trained.val_loss, "epochs": trained.epochs, "stopped_early": trained.stopped_early,
        "dropout_p": m.dropout_p,
        "autoencoder": None if autoencoder_path is None else str(Path(autoencoder_path).name),
        "blob": base.name + ".bin",
    }
    _write_blob(m.store, base.with_name(base.name + ".bin"))
    out = base.with_name(base.name + ".json")
    out.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(json_path) -> TrainedModel:
    path = Path(json_path)
    meta = _read_meta(path, "metamodel")
    config = MetamodelConfig.from_dict(meta["config"])
    model = Metamodel(config, meta["neighbors"], meta["virtual"])
    _load_blob(model.store, path.parent / meta["blob"])
    ae = None
    if meta.get("autoencoder"):
        ae = load_autoencoder(path.parent / meta["autoencoder"])
    elif config.arch == "ae-lstm":
        raise DataError(f"{path}: ae-lstm checkpoint without an autoencoder reference")
    return TrainedModel(model, ae, meta["normalization"], meta["T"], meta["wavelet"], meta["val_loss"],
                        meta["epochs"], meta["stopped_early"])
