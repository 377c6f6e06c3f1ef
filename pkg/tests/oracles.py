"""Independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np


def daubechies_lowpass(vanishing_moments: int, digits: int = 40) -> np.ndarray:
    """Minimum-phase Daubechies scaling filter by spectral factorisation in mpmath.

    ``|m0|^2 = cos^{2N}(w/2) P(sin^2(w/2))`` with ``P(y) = sum_k C(N-1+k, k) y^k``.
    Each root ``y_i`` of ``P`` gives a reciprocal pair of ``z`` roots of
    ``z^2 - (2 - 4 y_i) z + 1``; the one outside the unit circle is kept, so the
    zeros of ``H(z) = sum h_k z^-k`` lie inside it (minimum phase).
    """
    import mpmath as mp

    mp.mp.dps = digits
    N = vanishing_moments
    coeffs = [mp.binomial(N - 1 + k, k) for k in range(N)]
    y_roots = mp.polyroots(coeffs[::-1], maxsteps=500, extraprec=4 * digits)
    poly = [mp.mpf(1)]  # coefficients in ascending powers of z
    for y in y_roots:
        b = 2 - 4 * y
        r1 = (b + mp.sqrt(b * b - 4)) / 2
        r2 = (b - mp.sqrt(b * b - 4)) / 2
        r = r1 if abs(r1) > 1 else r2
        new = [mp.mpc(0)] * (len(poly) + 1)
        for i, c in enumerate(poly):  # multiply by (z - r)
            new[i + 1] += c
            new[i] -= r * c
        poly = new
    for _ in range(N):  # multiply by (1 + z)
        new = [mp.mpc(0)] * (len(poly) + 1)
        for i, c in enumerate(poly):
            new[i] += c
            new[i + 1] += c
        poly = new
    total = mp.fsum(poly)
    h = [mp.re(c * mp.sqrt(2) / total) for c in poly]
    return np.array([float(v) for v in h])


def direct_periodic_analysis(x: np.ndarray, h: np.ndarray, level: int) -> tuple[np.ndarray, list]:
    """Textbook loop: ``a[k] = sum_m h[m] x[(2k+m) mod N]`` per level."""
    L = len(h)
    g = np.array([(-1) ** m * h[L - 1 - m] for m in range(L)])
    a = np.asarray(x, float)
    details = []
    for _ in range(level):
        N = len(a)
        na = np.zeros(N // 2)
        nd = np.zeros(N // 2)
        for k in range(N // 2):
            for m in range(L):
                na[k] += h[m] * a[(2 * k + m) % N]
                nd[k] += g[m] * a[(2 * k + m) % N]
        a = na
        details.append(nd)
    return a, details


def sdof_steady_state(m: float, c: float, k: float, f0: float, w: float):
    """Amplitude and phase of ``u = X sin(w t - phi)`` for ``m u'' + c u' + k u = f0 sin(w t)``."""
    X = f0 / np.hypot(k - m * w * w, c * w)
    phi = np.arctan2(c * w, k - m * w * w)
    return X, phi
