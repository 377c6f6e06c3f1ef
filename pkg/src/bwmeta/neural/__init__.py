"""Minimal double-precision neural toolkit with reverse-mode autodiff."""

from .engine import Tensor, no_grad
from .gradcheck import grad_check
from .layers import (
    MLP,
    ConcreteDropout,
    Dense,
    GaussianHead,
    LSTMCell,
    beta_nll_loss,
    concrete_mask,
    dense_backward,
    dense_forward,
    lstm_sequence,
    lstm_step,
)
from .params import ParamStore, adam_step

__all__ = [
    "Tensor", "no_grad", "grad_check", "MLP", "ConcreteDropout", "Dense", "GaussianHead",
    "LSTMCell", "beta_nll_loss", "concrete_mask", "dense_backward", "dense_forward",
    "lstm_sequence", "lstm_step", "ParamStore", "adam_step",
]
