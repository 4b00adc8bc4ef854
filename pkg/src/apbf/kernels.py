"""SPH smoothing kernels.

Density uses the poly6 kernel, position corrections use the gradient of the
spiky kernel. The ``*_scalar`` functions are numba-compiled and shared by the
solver passes; the public functions are vectorised numpy versions that accept
a single offset or an ``(n, 3)`` array of offsets.
"""

import math

import numpy as np
from numba import njit

from .errors import InvalidParameterError

POLY6_COEF = 315.0 / (64.0 * math.pi)
SPIKY_GRAD_COEF = -45.0 / math.pi


def _check_h(h):
    if not h > 0:
        raise InvalidParameterError(f"smoothing length must be > 0, got {h}")


def kernel_coefficients(h):
    """Normalisation constants ``(poly6, spiky_grad)`` for smoothing length ``h``."""
    return POLY6_COEF / h**9, SPIKY_GRAD_COEF / h**6


@njit(cache=True, inline="always")
def poly6_scalar(dx, dy, dz, h, coef):
    r2 = dx * dx + dy * dy + dz * dz
    h2 = h * h
    if r2 >= h2:
        return 0.0
    diff = h2 - r2
    return coef * diff * diff * diff


@njit(cache=True, inline="always")
def spiky_grad_scalar(dx, dy, dz, h, coef):
    r2 = dx * dx + dy * dy + dz * dz
    if r2 >= h * h or r2 == 0.0:
        return 0.0, 0.0, 0.0
    r = math.sqrt(r2)
    diff = h - r
    s = coef * diff * diff / r
    return s * dx, s * dy, s * dz


def density_kernel(r, h):
    """Poly6 kernel ``315/(64 pi h^9) (h^2 - |r|^2)^3`` on ``|r| < h``, else 0."""
    _check_h(h)
    r = np.asarray(r, dtype=np.float64)
    r2 = np.sum(r * r, axis=-1)
    diff = np.where(r2 < h * h, h * h - r2, 0.0)
    out = POLY6_COEF / h**9 * diff**3
    return float(out) if out.ndim == 0 else out


def density_kernel_derivative(r, h):
    """Analytic gradient of :func:`density_kernel` (not used by the solver)."""
    _check_h(h)
    r = np.asarray(r, dtype=np.float64)
    r2 = np.sum(r * r, axis=-1, keepdims=True)
    diff = np.where(r2 < h * h, h * h - r2, 0.0)
    return -6.0 * POLY6_COEF / h**9 * diff**2 * r


def gradient_kernel(r, h):
    """Spiky gradient ``-45/(pi h^6) (h - |r|)^2 r/|r|``.

    Zero outside the support and at ``r = 0``.
    """
    _check_h(h)
    r = np.asarray(r, dtype=np.float64)
    norm = np.sqrt(np.sum(r * r, axis=-1, keepdims=True))
    inside = (norm < h) & (norm > 0)
    safe = np.where(inside, norm, 1.0)
    diff = np.where(inside, h - norm, 0.0)
    return SPIKY_GRAD_COEF / h**6 * diff * diff * r / safe
