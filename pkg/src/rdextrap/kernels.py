"""Kernel functions and their exact polynomial moments.

All kernels are supported on [-1, 1].  Moments are computed in closed form
from the piecewise-polynomial shape of each kernel, over the full support or
over one half of it ('left' integrates on [-1, 0], 'right' on [0, 1]), which
is what one-sided (boundary) local polynomial fits need.
"""

import numpy as np

KERNEL_NAMES = ("triangular", "uniform", "epanechnikov")


def kernel_weights(kind, u):
    """Evaluate the kernel at the scaled distances ``u``."""
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    inside = a <= 1.0
    if kind == "triangular":
        return np.where(inside, 1.0 - a, 0.0)
    if kind == "uniform":
        return np.where(inside, 0.5, 0.0)
    if kind == "epanechnikov":
        return np.where(inside, 0.75 * (1.0 - u * u), 0.0)
    raise ValueError(f"unknown kernel {kind!r}")


def _half_moment(kind, m, squared):
    # integral of u^m K(u)^(1 or 2) over [0, 1]
    if kind == "triangular":
        if squared:  # (1-u)^2 = 1 - 2u + u^2
            return 1.0 / (m + 1) - 2.0 / (m + 2) + 1.0 / (m + 3)
        return 1.0 / (m + 1) - 1.0 / (m + 2)
    if kind == "uniform":
        return (0.25 if squared else 0.5) / (m + 1)
    if kind == "epanechnikov":
        if squared:  # (3/4)^2 (1-u^2)^2 = 9/16 (1 - 2u^2 + u^4)
            return 9.0 / 16.0 * (1.0 / (m + 1) - 2.0 / (m + 3) + 1.0 / (m + 5))
        return 0.75 * (1.0 / (m + 1) - 1.0 / (m + 3))
    raise ValueError(f"unknown kernel {kind!r}")


def kernel_moment(kind, m, side="both", squared=False):
    """Exact integral of u^m K(u) (or u^m K(u)^2) over the side's domain."""
    right = _half_moment(kind, m, squared)
    left = right if m % 2 == 0 else -right  # kernels are symmetric
    if side == "right":
        return right
    if side == "left":
        return left
    if side == "both":
        return left + right
    raise ValueError(f"unknown side {side!r}")


def moment_matrices(kind, p, side):
    """Gram matrix S, squared-kernel matrix T and next-order moment vector c.

    S[j, k] = mu_{j+k}, T[j, k] = integral of u^{j+k} K^2, c[j] = mu_{j+p+1},
    for j, k = 0..p with mu_m the m-th kernel moment on the side's domain.
    """
    S = np.empty((p + 1, p + 1))
    T = np.empty((p + 1, p + 1))
    for j in range(p + 1):
        for k in range(p + 1):
            S[j, k] = kernel_moment(kind, j + k, side)
            T[j, k] = kernel_moment(kind, j + k, side, squared=True)
    c = np.array([kernel_moment(kind, j + p + 1, side) for j in range(p + 1)])
    return S, T, c
