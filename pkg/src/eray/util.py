"""Small numeric helpers: deterministic reductions, quadrature nodes, ramps."""

import numpy as np


def pairwise_sum(a, axis=None):
    """Sum with a fixed pairwise reduction order.

    Reports that claim bitwise reproducibility route their reductions through
    this function so the summation order never depends on memory layout or
    vendor kernels.
    """
    a = np.asarray(a, dtype=np.float64)
    if axis is None:
        a = a.ravel()
        axis = 0
    a = np.moveaxis(a, axis, 0)
    while a.shape[0] > 1:
        n = a.shape[0]
        half = n // 2
        head = a[:half] + a[half:2 * half]
        if n % 2:
            head = np.concatenate([head, a[2 * half:2 * half + 1]], axis=0)
        a = head
    return a[0]


def gauss_legendre(n, a=-1.0, b=1.0):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def simpson_weights(m, h):
    """Composite Simpson weights for m nodes (m odd) with spacing h."""
    if m < 3 or m % 2 == 0:
        raise ValueError("Simpson rule needs an odd node count >= 3")
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def circle_nodes(n_omega):
    """Uniform angles and trapezoid weights on the unit circle S^1."""
    theta = 2.0 * np.pi * np.arange(n_omega) / n_omega
    w = np.full(n_omega, 2.0 * np.pi / n_omega)
    return theta, w


def quintic_ramp(s):
    """C^2 ramp: 0 for s <= 0, 1 for s >= 1, 6s^5 - 15s^4 + 10s^3 between."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def japanese_bracket(xi, eta_norm, F):
    """<(xi, eta)> = sqrt(F^2 + xi^2 + |eta|^2), matching <xi> = sqrt(xi^2 + F^2)."""
    return np.sqrt(F * F + xi * xi + eta_norm * eta_norm)


def log_slope(x, y):
    """Least-squares slope of log|y| against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    lx = lx - lx.mean()
    return float((lx * (ly - ly.mean())).sum() / (lx * lx).sum())
