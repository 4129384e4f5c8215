"""Modified Bessel functions K0 and K1 for positive real arguments.

Power series below the crossover x = 2, Steed's continued fraction above it.
The ``*e`` variants return exp(x) * K(x), which stays finite for large x.
"""

from __future__ import annotations

import numpy as np

EULER_GAMMA = 0.57721566490153286061
CROSSOVER = 2.0
_SERIES_TERMS = 40
_CF_MAXIT = 10000
_CF_EPS = 1e-17


def _series(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # K0 = -(log(x/2) + gamma) I0 + sum_k t^k/(k!)^2 H_k
    # K1 = 1/x + log(x/2) I1 - (x/4) sum_k t^k/(k!(k+1)!) (psi(k+1) + psi(k+2))
    t = 0.25 * x * x
    lg = np.log(0.5 * x)
    i0 = np.zeros_like(x)
    i1 = np.zeros_like(x)
    s0 = np.zeros_like(x)
    s1 = np.zeros_like(x)
    c0 = np.ones_like(x)  # t^k / (k!)^2
    c1 = np.ones_like(x)  # t^k / (k! (k+1)!)
    harmonic = 0.0
    for k in range(_SERIES_TERMS):
        if k > 0:
            harmonic += 1.0 / k
            c0 = c0 * t / (k * k)
            c1 = c1 * t / (k * (k + 1))
        i0 += c0
        i1 += c1
        s0 += c0 * harmonic
        psi_sum = 2.0 * (harmonic - EULER_GAMMA) + 1.0 / (k + 1)
        s1 += c1 * psi_sum
    i1 = 0.5 * x * i1
    k0 = -(lg + EULER_GAMMA) * i0 + s0
    k1 = 1.0 / x + lg * i1 - 0.25 * x * s1
    return k0, k1


def _steed_scaled(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(x)K0(x) and exp(x)K1(x) from the continued fraction CF2 with order 0."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, _CF_MAXIT):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels / s) < _CF_EPS) and np.all(np.abs(delh / h) < _CF_EPS):
            break
    h = a1 * h
    k0e = np.sqrt(np.pi / (2.0 * x)) / s
    k1e = k0e * (x + 0.5 - h) / x
    return k0e, k1e


def _dispatch(x, scaled: bool) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(~np.isfinite(x)):
        raise ValueError("Bessel K requires finite positive arguments")
    flat = np.atleast_1d(x).ravel()
    k0 = np.empty_like(flat)
    k1 = np.empty_like(flat)
    small = flat <= CROSSOVER
    if small.any():
        a0, a1 = _series(flat[small])
        if scaled:
            e = np.exp(flat[small])
            a0, a1 = a0 * e, a1 * e
        k0[small], k1[small] = a0, a1
    if (~small).any():
        xs = flat[~small]
        b0, b1 = _steed_scaled(xs)
        if not scaled:
            e = np.exp(-xs)
            b0, b1 = b0 * e, b1 * e
        k0[~small], k1[~small] = b0, b1
    return k0.reshape(x.shape), k1.reshape(x.shape)


def k0(x):
    return _dispatch(x, False)[0]


def k1(x):
    return _dispatch(x, False)[1]


def k0e(x):
    return _dispatch(x, True)[0]


def k1e(x):
    return _dispatch(x, True)[1]


def k0k1e(x) -> tuple[np.ndarray, np.ndarray]:
    """Both scaled functions in one pass."""
    return _dispatch(x, True)
