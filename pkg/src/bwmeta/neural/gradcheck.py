"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .engine import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a - n| / max(max|n|, floor)`` for one tensor."""
    scale = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def grad_check(fn: Callable[[], Tensor], tensors: Iterable[Tensor], h: float = 1e-5) -> float:
    """Largest per-tensor relative error between backprop and central differences.

    ``fn`` must rebuild a scalar loss from the current values of ``tensors``
    (parameters or inputs, all with ``requires_grad``), deterministically.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().data.item()
            flat[i] = orig - h
            fm = fn().data.item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        worst = max(worst, relative_error(a, num))
    for t in tensors:
        t.grad = None
    return worst
