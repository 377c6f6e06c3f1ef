"""Fixed-step classical Runge-Kutta integration with sampled forcing."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import IntegrationError

Rhs = Callable[[np.ndarray, np.ndarray], np.ndarray]


def rk4_fixed(rhs: Rhs, y0: np.ndarray, forcing: np.ndarray, dt: float) -> np.ndarray:
    """Integrate ``y' = rhs(y, f(t))`` on the grid ``t_i = i * dt``.

    ``forcing`` holds one row per grid point; the forcing at half steps is the
    linear interpolation of the two neighbouring rows. Returns the state at
    every grid point, shape ``(len(forcing), len(y0))``, with row 0 equal to
    ``y0``.
    """
    forcing = np.asarray(forcing, dtype=float)
    if forcing.ndim == 1:
        forcing = forcing[:, None]
    n_steps = forcing.shape[0]
    y = np.array(y0, dtype=float)
    out = np.empty((n_steps, y.size))
    out[0] = y
    half = 0.5 * dt
    sixth = dt / 6.0
    for i in range(n_steps - 1):
        f0 = forcing[i]
        f1 = forcing[i + 1]
        fm = 0.5 * (f0 + f1)
        k1 = rhs(y, f0)
        k2 = rhs(y + half * k1, fm)
        k3 = rhs(y + half * k2, fm)
        k4 = rhs(y + dt * k3, f1)
        y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {i + 1}", step=i + 1)
        out[i + 1] = y
    return out
