"""Compiled inner loop for the sequential two-region indicator updates."""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def two_region_sweep(cols, coef, active, mu, wz, w, colsq, log_out, log_in, u):
    """Sequentially resample which region each relaxed value falls in.

    For coordinate ``m`` the predictor gains ``coef[m] * cols[m]`` when the
    coordinate is active. ``log_out``/``log_in`` are the prior log masses of
    the exceeding and non-exceeding regions. The Gaussian working likelihood
    has weights ``w`` and weighted response ``wz``. ``mu`` and ``active`` are
    updated in place. Returns the number of flips.
    """
    M, n = cols.shape
    flips = 0
    for m in range(M):
        c = coef[m]
        acc = 0.0
        for i in range(n):
            acc += cols[m, i] * (wz[i] - w[i] * mu[i])
        if active[m]:
            acc += c * colsq[m]
        diff = c * acc - 0.5 * c * c * colsq[m]
        l1 = log_out[m] + diff
        l0 = log_in[m]
        if l0 == -np.inf and l1 == -np.inf:
            p1 = 0.5
        elif l0 == -np.inf:
            p1 = 1.0
        elif l1 == -np.inf:
            p1 = 0.0
        else:
            d = l0 - l1
            if d > 700.0:
                p1 = 0.0
            elif d < -700.0:
                p1 = 1.0
            else:
                p1 = 1.0 / (1.0 + math.exp(d))
        new = u[m] < p1
        if new != active[m]:
            step = c if new else -c
            for i in range(n):
                mu[i] += step * cols[m, i]
            active[m] = new
            flips += 1
    return flips
