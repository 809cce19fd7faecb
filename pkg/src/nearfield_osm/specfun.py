"""Special functions, free-space Green's functions and imaging kernels.

Everything here is a pure, vectorized function of its arguments. Points are
arrays whose last axis holds Cartesian components; leading axes broadcast.

Green's functions (radiating, wavenumber ``k``)::

    Phi(x, y) = (i/4) H0(k|x-y|)              2D
    Phi(x, y) = exp(ik|x-y|) / (4 pi |x-y|)   3D

Only the imaginary parts enter the imaging kernels; those are entire
functions of ``x - y`` and are evaluated without any singular branch::

    Im Phi = J0(kr) / 4                       2D
    Im Phi = k j0(kr) / (4 pi)                3D
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "SingularityError",
    "bessel_j",
    "bessel_y",
    "sph_j0",
    "green",
    "grad_green",
    "hess_green",
    "im_green",
    "kernel_helmholtz",
    "dyadic_green",
    "curl_dyadic_column",
    "im_dyadic_green",
    "kernel_maxwell",
    "curl_im_dyadic_column",
]

# kr below which ratios such as j1(x)/x switch to their Taylor series.
SERIES_THRESHOLD = 0.5
# Two-term Taylor for sin(x)/x below this |x|.
SPH_J0_SERIES = 1e-4
# Relative distance (in wavelengths) treated as coincident points in 2D J1(x)/x.
COINCIDENT_WAVELENGTHS = 1e-4


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class SingularityError(ValueError):
    """Evaluation point coincides with the source point."""


def _finite(x, name="x"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite")
    return x


def _out(v):
    v = np.asarray(v)
    return v.item() if v.ndim == 0 else v


def bessel_j(order, x):
    """Bessel function of the first kind, J0 or J1."""
    x = _finite(x)
    if order == 0:
        return _out(special.j0(x))
    if order == 1:
        return _out(special.j1(x))
    raise DomainError(f"order must be 0 or 1, got {order!r}")


def bessel_y(order, x):
    """Bessel function of the second kind, Y0 or Y1, for ``x > 0``."""
    x = _finite(x)
    if np.any(x <= 0):
        raise DomainError("Y_n is singular for x <= 0")
    if order == 0:
        return _out(special.y0(x))
    if order == 1:
        return _out(special.y1(x))
    raise DomainError(f"order must be 0 or 1, got {order!r}")


def sph_j0(x):
    """Spherical Bessel function j0(x) = sin(x)/x."""
    x = _finite(x)
    small = np.abs(x) < SPH_J0_SERIES
    safe = np.where(small, 1.0, x)
    val = np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)
    return _out(val)


def _sph_ratio(n, x):
    """j_n(x) / x**n for n in {1, 2}, accurate down to x = 0.

    Series: sum_m (-1)^m x^(2m) / (2^m m! (2n+2m+1)!!).
    """
    x = np.asarray(x, dtype=float)
    small = x < SERIES_THRESHOLD
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    # (2n+1)!!
    coef = 1.0 / (3.0 if n == 1 else 15.0)
    series = np.full_like(xs, coef)
    term = np.full_like(xs, coef)
    for m in range(1, 10):
        term = -term * x2 / (2.0 * m * (2 * n + 2 * m + 1))
        series = series + term
    xl = np.where(small, 1.0, x)
    s, c = np.sin(xl), np.cos(xl)
    if n == 1:
        closed = (s - xl * c) / xl**3
    else:
        closed = ((3.0 - xl * xl) * s - 3.0 * xl * c) / xl**5
    return np.where(small, series, closed)


def _j1_over_x(x):
    """J1(x)/x with the value 1/2 at the origin."""
    x = np.asarray(x, dtype=float)
    small = x < 2 * np.pi * COINCIDENT_WAVELENGTHS
    xl = np.where(small, 1.0, x)
    return np.where(small, 0.5 - x * x / 16.0, special.j1(xl) / xl)


def _separation(x, y, dim=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if dim is not None and (x.shape[-1] != dim or y.shape[-1] != dim):
        raise ValueError(f"points must have {dim} components")
    d = x - y
    r = np.sqrt(np.sum(d * d, axis=-1))
    return d, r


def _check_dim(dim):
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim!r}")


def _radial_profile(dim, r, k):
    """Radial profile f(r) of Phi and its first two derivatives."""
    if np.any(r == 0):
        raise SingularityError("x coincides with y")
    kr = k * r
    if dim == 2:
        h0 = special.j0(kr) + 1j * special.y0(kr)
        h1 = special.j1(kr) + 1j * special.y1(kr)
        f = 0.25j * h0
        f1 = -0.25j * k * h1
        f2 = -0.25j * k * k * (h0 - h1 / kr)
    else:
        f = np.exp(1j * kr) / (4 * np.pi * r)
        f1 = f * (1j * k - 1.0 / r)
        f2 = f * (-k * k - 2j * k / r + 2.0 / (r * r))
    return f, f1, f2


def green(dim, x, y, k):
    """Free-space radiating Green's function Phi(x, y)."""
    _check_dim(dim)
    _, r = _separation(x, y, dim)
    return _out(_radial_profile(dim, r, k)[0])


def grad_green(dim, x, y, k):
    """Gradient of Phi(x, y) with respect to ``x``."""
    _check_dim(dim)
    d, r = _separation(x, y, dim)
    _, f1, _ = _radial_profile(dim, r, k)
    return (f1 / r)[..., None] * d


def hess_green(dim, x, y, k):
    """Hessian of Phi(x, y) in ``x``.

    Uses the radial decomposition ``f'' rr^T + (f'/r)(I - rr^T)``.
    """
    _check_dim(dim)
    d, r = _separation(x, y, dim)
    _, f1, f2 = _radial_profile(dim, r, k)
    rh = d / r[..., None]
    outer = rh[..., :, None] * rh[..., None, :]
    eye = np.eye(dim)
    return f2[..., None, None] * outer + (f1 / r)[..., None, None] * (eye - outer)


def im_green(dim, x, z, k):
    """Im Phi(x, z), smooth everywhere including x = z."""
    _check_dim(dim)
    _, r = _separation(x, z, dim)
    if dim == 2:
        return _out(0.25 * special.j0(k * r))
    return _out(k * sph_j0(k * r) / (4 * np.pi))


def kernel_helmholtz(dim, y, z, k):
    """Imaging kernel grad_y Im Phi(y, z); zero vector at y = z.

    2D: ``-(k/4) J1(kr) (y-z)/r``;  3D: ``-(k^2/4pi) j1(kr) (y-z)/r``.
    """
    _check_dim(dim)
    d, r = _separation(y, z, dim)
    kr = k * r
    if dim == 2:
        scale = -0.25 * k * k * _j1_over_x(kr)
    else:
        scale = -(k**3) / (4 * np.pi) * _sph_ratio(1, kr)
    return scale[..., None] * d


def dyadic_green(x, y, k):
    """Green's tensor ``Phi I + (1/k^2) grad div (Phi I)`` in 3D."""
    _, r = _separation(x, y, 3)
    f = _radial_profile(3, r, k)[0]
    return f[..., None, None] * np.eye(3) + hess_green(3, x, y, k) / (k * k)


def curl_dyadic_column(x, y, k, q):
    """curl_x (G(x, y) q) = grad_x Phi(x, y) x q."""
    g = grad_green(3, x, y, k)
    q = np.broadcast_to(np.asarray(q, dtype=float), g.shape)
    return np.cross(g, q)


def im_dyadic_green(y, z, k):
    """Im G(y, z) as a 3x3 matrix, smooth everywhere.

    ``(k/4pi) [(j0 - j1/x) I + j2(x) rh rh^T]`` with ``x = k|y-z|``; equal
    to ``k I / (6 pi)`` at y = z.
    """
    d, r = _separation(y, z, 3)
    kr = k * r
    a = np.asarray(sph_j0(kr)) - _sph_ratio(1, kr)
    b = _sph_ratio(2, kr) * k * k
    out = b[..., None, None] * (d[..., :, None] * d[..., None, :])
    out = out + a[..., None, None] * np.eye(3)
    return k / (4 * np.pi) * out


def kernel_maxwell(y, z, p, k):
    """Maxwell imaging kernel Im G(y, z) p.

    Expanding the Bessel form gives
    ``-(k/4pi) [j0 (p - (p.rh) rh) + (cos x - j0)/x^2 (p - 3 (p.rh) rh)]``,
    which is the negative of Im G(y, z) p; this function returns Im G p.
    Only moduli enter the imaging functional. At y = z the value is
    ``k p / (6 pi)``.
    """
    d, r = _separation(y, z, 3)
    p = np.asarray(p, dtype=float)
    kr = k * r
    a = np.asarray(sph_j0(kr)) - _sph_ratio(1, kr)
    b = _sph_ratio(2, kr) * k * k
    dp = np.sum(d * p, axis=-1)
    out = a[..., None] * p + (b * dp)[..., None] * d
    return k / (4 * np.pi) * out


def curl_im_dyadic_column(x, z, k, p):
    """curl_x (Im G(x, z) p) = grad_x Im Phi(x, z) x p (smooth, 0 at x = z)."""
    g = kernel_helmholtz(3, x, z, k)
    p = np.broadcast_to(np.asarray(p, dtype=float), g.shape)
    return np.cross(g, p)
