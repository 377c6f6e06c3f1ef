"""Layers built on the autodiff engine: dense, LSTM, concrete dropout, Gaussian head."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DataError, NumericalError
from . import engine as E
from .engine import Tensor, make
from .params import ParamStore


def glorot(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class Dense:
    """``y = act(x W^T + b)`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 activation: str = "tanh", rng: np.random.Generator | None = None):
        if activation not in E.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.name, self.n_in, self.n_out, self.activation = name, n_in, n_out, activation
        self.W = store.add(f"{name}.W", glorot(rng, n_out, n_in))
        self.b = store.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: Dense, x) -> Tensor:
    x = E.as_tensor(x)
    if x.shape[-1] != layer.n_in:
        raise DataError(f"{layer.name}: expected input width {layer.n_in}, got {x.shape[-1]}")
    return E.ACTIVATIONS[layer.activation](E.matmul(x, E.transpose(layer.W)) + layer.b)


def dense_backward(layer: Dense, x, dy) -> np.ndarray:
    """Vector-Jacobian product of :func:`dense_forward` at ``x``.

    Returns ``dL/dx`` and accumulates ``dL/dW``, ``dL/db`` into the parameters.
    """
    xt = Tensor(np.asarray(x, float), requires_grad=True)
    dense_forward(layer, xt).backward(np.asarray(dy, float))
    return xt.grad


class MLP:
    def __init__(self, store: ParamStore, name: str, sizes, activation="tanh",
                 final_activation: str | None = None, rng=None):
        acts = [activation] * (len(sizes) - 1)
        if final_activation is not None:
            acts[-1] = final_activation
        self.layers = [Dense(store, f"{name}.{i}", sizes[i], sizes[i + 1], acts[i], rng)
                       for i in range(len(sizes) - 1)]

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    @property
    def weights(self) -> list[Tensor]:
        return [l.W for l in self.layers]


class LSTMCell:
    """Gate order ``[input, forget, candidate, output]``; ``Wx (in, 4H)``, ``Wh (H, 4H)``."""

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int,
                 rng: np.random.Generator | None = None, forget_bias: float = 1.0):
        rng = rng or np.random.default_rng(0)
        self.name, self.n_in, self.hidden = name, n_in, hidden
        self.Wx = store.add(f"{name}.Wx", glorot(rng, 4 * hidden, n_in).T)
        self.Wh = store.add(f"{name}.Wh", glorot(rng, 4 * hidden, hidden).T)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = store.add(f"{name}.b", b)


def lstm_step(cell: LSTMCell, x, h_prev, c_prev) -> tuple[Tensor, Tensor]:
    """One recurrence step from engine primitives (differentiable through time)."""
    H = cell.hidden
    z = E.matmul(x, cell.Wx) + E.matmul(h_prev, cell.Wh) + cell.b
    i = E.sigmoid(z[..., :H])
    f = E.sigmoid(z[..., H:2 * H])
    g = E.tanh(z[..., 2 * H:3 * H])
    o = E.sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * E.tanh(c)
    return h, c


def lstm_sequence(cell: LSTMCell, x) -> Tensor:
    """Run ``cell`` over ``x (B, K, in)`` from zero state; returns ``h (B, K, H)``.

    Fused op: forward loop over ``k`` and a hand-written backpropagation
    through time, equivalent to chaining :func:`lstm_step`.
    """
    x = E.as_tensor(x)
    if x.shape[-1] != cell.n_in:
        raise DataError(f"{cell.name}: expected input width {cell.n_in}, got {x.shape[-1]}")
    B, K, _ = x.shape
    H = cell.hidden
    Wx, Wh, b = cell.Wx.data, cell.Wh.data, cell.b.data
    zx = x.data @ Wx + b  # (B, K, 4H)
    hs = np.zeros((B, K + 1, H))
    cs = np.zeros((B, K + 1, H))
    gates = np.empty((B, K, 4 * H))
    tcs = np.empty((B, K, H))
    for k in range(K):
        z = zx[:, k] + hs[:, k] @ Wh
        ifo = expit(z[:, np.r_[0:2 * H, 3 * H:4 * H]])
        i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
        g = np.tanh(z[:, 2 * H:3 * H])
        c = f * cs[:, k] + i * g
        tc = np.tanh(c)
        cs[:, k + 1] = c
        hs[:, k + 1] = o * tc
        gates[:, k, :H], gates[:, k, H:2 * H] = i, f
        gates[:, k, 2 * H:3 * H], gates[:, k, 3 * H:] = g, o
        tcs[:, k] = tc
    xd = x.data

    def back(gH):
        dz_all = np.empty((B, K, 4 * H))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        WhT = Wh.T
        for k in range(K - 1, -1, -1):
            i, f = gates[:, k, :H], gates[:, k, H:2 * H]
            g, o = gates[:, k, 2 * H:3 * H], gates[:, k, 3 * H:]
            tc = tcs[:, k]
            dh = gH[:, k] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, k]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, k] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ WhT
            dWh += hs[:, k].T @ dz
        flat = dz_all.reshape(-1, 4 * H)
        dx = dz_all @ Wx.T
        dWx = xd.reshape(-1, xd.shape[-1]).T @ flat
        db = flat.sum(axis=0)
        return dx, dWx, dWh, db

    return make(hs[:, 1:].copy(), (x, cell.Wx, cell.Wh, cell.b), back)


class ConcreteDropout:
    """Learnable dropout probability ``p = sigmoid(p_logit)`` with a relaxed mask."""

    def __init__(self, store: ParamStore, name: str, init_p: float = 0.1, temperature: float = 0.1,
                 weight_reg: float = 1e-6, dropout_reg: float = 1e-5):
        self.name = name
        self.temperature = temperature
        self.weight_reg = weight_reg
        self.dropout_reg = dropout_reg
        self.p_logit = store.add(f"{name}.p_logit", np.array([np.log(init_p) - np.log1p(-init_p)]))

    @property
    def p(self) -> float:
        return float(expit(self.p_logit.data[0]))

    def force_p(self, p: float):
        """Overwrite the learned probability; ``p = 0`` gives exact all-ones masks."""
        with np.errstate(divide="ignore"):
            self.p_logit.data = np.array([np.log(p) - np.log1p(-p)])

    def regularization(self, weights, input_dim: int) -> Tensor:
        """``w_reg * |W|^2 / (1 - p) + d_reg * input_dim * (p log p + (1 - p) log(1 - p))``."""
        p = E.sigmoid(self.p_logit)
        q = 1.0 - p
        sq = sum(E.tensor_sum(w * w) for w in weights)
        kernel = self.weight_reg * sq / q
        entropy = p * E.log(p) + q * E.log(q)
        return E.tensor_sum(kernel + (self.dropout_reg * input_dim) * entropy)


def concrete_mask(dropout: ConcreteDropout, shape, rng: np.random.Generator | None = None,
                  noise: np.ndarray | None = None) -> Tensor:
    """Relaxed keep-mask scaled by ``1 / (1 - p)``.

    ``drop = sigmoid((logit p + log u - log(1 - u)) / t)``; the returned mask is
    ``(1 - drop) / (1 - p)``. Pass ``noise`` (uniform draws) to fix ``u``.
    """
    if noise is None:
        noise = rng.uniform(size=shape)
    eps = 1e-7
    u = np.clip(noise, eps, 1.0 - eps)
    logit_u = np.log(u) - np.log1p(-u)
    drop = E.sigmoid((dropout.p_logit + logit_u) * (1.0 / dropout.temperature))
    keep_scale = 1.0 - E.sigmoid(dropout.p_logit)
    return (1.0 - drop) / keep_scale


class GaussianHead:
    """Shared tanh hidden layer, then linear maps to the mean and log-variance."""

    LOGVAR_RANGE = (-10.0, 10.0)

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int, n_out: int, rng=None):
        self.hidden = Dense(store, f"{name}.hidden", n_in, hidden, "tanh", rng)
        self.mu = Dense(store, f"{name}.mu", hidden, n_out, "identity", rng)
        self.logvar = Dense(store, f"{name}.logvar", hidden, n_out, "identity", rng)
        self.clamp_events = 0

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        hid = self.hidden(x)
        lv, clamped = E.clip(self.logvar(hid), *self.LOGVAR_RANGE)
        self.clamp_events += clamped
        return self.mu(hid), lv


def beta_nll_loss(o, mu, log_var, beta: float = 0.5, weights: np.ndarray | None = None) -> Tensor:
    """Mean over all entries of ``w * ((o - mu)^2 / (2 var) + log(var) / 2)``.

    ``w = var**beta`` evaluated without gradient (or ``weights`` when given,
    e.g. to freeze them for a finite-difference check).
    """
    mu, log_var = E.as_tensor(mu), E.as_tensor(log_var)
    if not np.all(np.isfinite(log_var.data)):
        raise NumericalError("non-finite log-variance in beta-NLL")
    if weights is None:
        weights = np.exp(beta * log_var.data) if beta else 1.0
    resid = E.as_tensor(o) - mu
    per = resid * resid * E.exp(-log_var) * 0.5 + log_var * 0.5
    return E.mean(per * weights)
