"""Imaging functionals, their volume-kernel oracles and diagnostics.

Helmholtz functional, for each sampling point z::

    I(z) = sum_j | int_dOmega u_sc d_nu ImPhi(., z) - d_nu u_sc ImPhi(., z) ds |^p

Maxwell functional, with probe polarizations p_n::

    I(z) = sum_n sum_j | int_dOmega [nu x curl(ImG(., z) p_n)] . u
                                   - ImG(., z) p_n . [nu x curl u] ds |^p

Because ImPhi(., z) solves the homogeneous equation everywhere, the inner
boundary integrals reduce to volume integrals over the scatterer against
the smooth kernels ``grad_y ImPhi(y, z)`` and ``ImG(y, z) p``. The
``kernel_oracle_*`` functions evaluate that volume form directly from the
interior field; they exist to check the boundary evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import specfun
from ._parallel import map_chunks
from .scene import ConfigurationError, MeasurementSurface, SamplingGrid, Scenario, Shape
from .synth import CauchyDataSet, VolumeQuadrature, farfield_trace_substitute

logger = logging.getLogger(__name__)

CHUNK_2D = 1024
CHUNK_3D = 256
STANDARD_PROBES = np.eye(3)


class ShapeMismatchError(ValueError):
    """Data, surface or grid dimensions are inconsistent."""


@dataclass(frozen=True)
class IndicatorField:
    """Values of an imaging functional at sampling points.

    ``raw`` holds the unnormalized values; ``normalized`` is filled in by
    :func:`normalize`.
    """

    points: np.ndarray
    raw: np.ndarray
    p: int
    grid: SamplingGrid | None = None
    probes: np.ndarray | None = None
    normalized: np.ndarray | None = None
    degenerate: bool = False

    @property
    def is_normalized(self) -> bool:
        return self.normalized is not None

    def values(self) -> np.ndarray:
        return self.normalized if self.normalized is not None else self.raw

    def as_grid(self, normalized=True) -> np.ndarray:
        if self.grid is None:
            raise ValueError("field was not evaluated on a grid")
        vals = self.normalized if normalized and self.is_normalized else self.raw
        return vals.reshape(self.grid.shape)


def _points(grid):
    if isinstance(grid, SamplingGrid):
        return grid, grid.points
    return None, np.atleast_2d(np.asarray(grid, dtype=float))


def _check_power(p):
    if int(p) != p or p < 1:
        raise ConfigurationError("power p must be a positive integer")
    return int(p)


def _check_data(data: CauchyDataSet, surface: MeasurementSurface, physics: str):
    if data.physics != physics:
        raise ShapeMismatchError(f"expected {physics} data, got {data.physics}")
    if data.n_points != len(surface):
        raise ShapeMismatchError(
            f"data has {data.n_points} surface points, surface has {len(surface)}"
        )
    if surface.dim != data.dim:
        raise ShapeMismatchError("surface and data dimensions differ")


# ---------------------------------------------------------------------------
# Helmholtz
# ---------------------------------------------------------------------------


def helmholtz_boundary_form(data, surface, points, k, threads=1):
    """Complex boundary integrals B_j(z), shape (N, len(points))."""
    _check_data(data, surface, "helmholtz")
    pts = np.asarray(points, dtype=float)
    dim = surface.dim
    x, nu, w = surface.points, surface.normals, surface.weights
    fr, fi = data.field.real, data.field.imag
    dr, di = data.deriv.real, data.deriv.imag

    def block(s):
        z = pts[s]
        v = specfun.im_green(dim, x[None, :, :], z[:, None, :], k)
        grad = specfun.kernel_helmholtz(dim, x[None, :, :], z[:, None, :], k)
        dv = np.einsum("zpa,pa->zp", grad, nu)
        a = (dv * w).T
        b = (v * w).T
        return (fr @ a - dr @ b) + 1j * (fi @ a - di @ b)

    chunk = CHUNK_2D if dim == 2 else CHUNK_3D
    return map_chunks(block, len(pts), chunk, threads, axis=1)


def helmholtz_volume_form(quad: VolumeQuadrature, points, threads=1):
    """-int_D grad_y ImPhi(y, z) . Q grad u(y) dy, shape (N, len(points))."""
    pts = np.asarray(points, dtype=float)
    m, dim = quad.centers.shape
    src = quad.sources.reshape(-1, m * dim)

    def block(s):
        z = pts[s]
        kern = specfun.kernel_helmholtz(dim, quad.centers[None], z[:, None, :], quad.k)
        return -(src @ kern.reshape(len(z), m * dim).T)

    return map_chunks(block, len(pts), CHUNK_2D, threads, axis=1)


def _sum_power(forms, p):
    total = None
    for b in forms:
        term = np.sum(np.abs(b) ** p, axis=0)
        total = term if total is None else total + term
    return total


def helmholtz_indicator(data, surface, grid, k, p=2, threads=1) -> IndicatorField:
    """Boundary-form imaging functional from Cauchy data."""
    p = _check_power(p)
    g, pts = _points(grid)
    b = helmholtz_boundary_form(data, surface, pts, k, threads)
    return IndicatorField(pts, _sum_power([b], p), p, g)


def farfield_indicator(data, surface, grid, k, p=2, threads=1) -> IndicatorField:
    """Functional using only u_sc, with d_nu u_sc replaced by i k u_sc."""
    return helmholtz_indicator(farfield_trace_substitute(data), surface, grid, k, p, threads)


def kernel_oracle_helmholtz(scenario, quad, grid, p=2, threads=1) -> IndicatorField:
    """Volume-form evaluation of the Helmholtz functional."""
    p = _check_power(p)
    g, pts = _points(grid)
    b = helmholtz_volume_form(quad, pts, threads)
    return IndicatorField(pts, _sum_power([b], p), p, g)


# ---------------------------------------------------------------------------
# Maxwell
# ---------------------------------------------------------------------------


def _check_probes(probes):
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.size == 0:
        raise ConfigurationError("probe set must be nonempty")
    if probes.shape[1] != 3:
        raise ConfigurationError("probes must be 3-vectors")
    if not np.allclose(np.linalg.norm(probes, axis=1), 1.0, atol=1e-12):
        raise ConfigurationError("probes must be unit vectors")
    return probes


def maxwell_basis_forms(data, surface, points, k, threads=1):
    """Boundary integrals for the probes e1, e2, e3, shape (3, N, len(points)).

    The form is linear in the probe, so any probe p gives
    ``sum_c p_c * forms[c]``.
    """
    _check_data(data, surface, "maxwell")
    pts = np.asarray(points, dtype=float)
    x, nu, w = surface.points, surface.normals, surface.weights
    n_pts = len(x)
    u = data.field.reshape(data.n_waves, n_pts * 3)
    c = data.deriv.reshape(data.n_waves, n_pts * 3)
    ur, ui, cr, ci = u.real, u.imag, c.real, c.imag
    eye = np.eye(3)

    def block(s):
        z = pts[s]
        nz = len(z)
        # a[z, x, :, c] = ImG(x, z) e_c
        a = specfun.im_dyadic_green(x[None], z[:, None, :], k)
        # nu x (g x e_c) = g nu_c - e_c (nu . g)
        g = specfun.kernel_helmholtz(3, x[None], z[:, None, :], k)
        ng = np.einsum("zpa,pa->zp", g, nu)
        e = g[..., :, None] * nu[None, :, None, :] - ng[..., None, None] * eye
        out = np.empty((3, data.n_waves, nz), dtype=complex)
        for col in range(3):
            ac = (a[..., col] * w[:, None]).reshape(nz, n_pts * 3).T
            ec = (e[..., col] * w[:, None]).reshape(nz, n_pts * 3).T
            out[col] = (ur @ ec - cr @ ac) + 1j * (ui @ ec - ci @ ac)
        return out

    return map_chunks(block, len(pts), CHUNK_3D, threads, axis=2)


def maxwell_boundary_form(data, surface, points, k, probe, threads=1):
    """Complex boundary integrals for one probe, shape (N, len(points))."""
    forms = maxwell_basis_forms(data, surface, points, k, threads)
    return np.tensordot(np.asarray(probe, dtype=float), forms, axes=1)


def maxwell_volume_form(quad: VolumeQuadrature, points, probe, threads=1):
    """-k^2 int_D ImG(y, z) p . P E(y) dy, shape (N, len(points)).

    Equal to :func:`maxwell_boundary_form` for data generated from the
    same interior field.
    """
    pts = np.asarray(points, dtype=float)
    m = len(quad.centers)
    src = quad.sources.reshape(-1, m * 3) * quad.k**2
    probe = np.asarray(probe, dtype=float)

    def block(s):
        z = pts[s]
        kern = specfun.kernel_maxwell(quad.centers[None], z[:, None, :], probe, quad.k)
        return -(src @ kern.reshape(len(z), m * 3).T)

    return map_chunks(block, len(pts), CHUNK_3D, threads, axis=1)


def _probe_sum(basis, probes, p):
    total = None
    for pr in probes:
        b = np.tensordot(pr, basis, axes=1)
        term = np.sum(np.abs(b) ** p, axis=0)
        total = term if total is None else total + term
    return total


def maxwell_indicators(data, surface, grid, k, p=2, probe_sets=(STANDARD_PROBES,), threads=1):
    """Maxwell functional for several probe sets from one pass over the grid."""
    p = _check_power(p)
    probe_sets = [_check_probes(ps) for ps in probe_sets]
    g, pts = _points(grid)
    _check_data(data, surface, "maxwell")

    def block(s):
        basis = maxwell_basis_forms(data, surface, pts[s], k)
        return np.stack([_probe_sum(basis, ps, p) for ps in probe_sets])

    raw = map_chunks(block, len(pts), CHUNK_3D, threads, axis=1)
    return [IndicatorField(pts, raw[i], p, g, ps) for i, ps in enumerate(probe_sets)]


def maxwell_indicator(data, surface, grid, k, p=2, probes=STANDARD_PROBES, threads=1):
    """Boundary-form Maxwell imaging functional summed over probes."""
    return maxwell_indicators(data, surface, grid, k, p, (probes,), threads)[0]


def kernel_oracle_maxwell(scenario, quad, grid, p=2, probes=STANDARD_PROBES, threads=1):
    """Volume-form evaluation of the Maxwell functional."""
    p = _check_power(p)
    probes = _check_probes(probes)
    g, pts = _points(grid)
    forms = (maxwell_volume_form(quad, pts, pr, threads) for pr in probes)
    return IndicatorField(pts, _sum_power(forms, p), p, g, probes)


def indicator(scenario: Scenario, data, grid, p=2, probes=STANDARD_PROBES, threads=1):
    """Dispatch to the Helmholtz or Maxwell functional for ``scenario``."""
    surface = scenario.surface()
    if scenario.physics == "maxwell":
        return maxwell_indicator(data, surface, grid, scenario.k, p, probes, threads)
    return helmholtz_indicator(data, surface, grid, scenario.k, p, threads)


# ---------------------------------------------------------------------------
# Post-processing and diagnostics
# ---------------------------------------------------------------------------


def normalize(field: IndicatorField) -> IndicatorField:
    """Divide by the maximum; an all-zero field stays zero and is flagged."""
    peak = float(np.max(field.raw)) if field.raw.size else 0.0
    if peak > 0:
        return replace(field, normalized=field.raw / peak, degenerate=False)
    return replace(field, normalized=np.zeros_like(field.raw), degenerate=True)


def stability_gap(clean: IndicatorField, noisy: IndicatorField) -> float:
    """sup_z |I(z) - I_delta(z)| for unnormalized fields on the same points."""
    if clean.is_normalized or noisy.is_normalized:
        raise ValueError("stability_gap needs unnormalized fields")
    if clean.raw.shape != noisy.raw.shape or not np.array_equal(clean.points, noisy.points):
        raise ShapeMismatchError("fields are on different sampling points")
    if clean.p != noisy.p:
        raise ShapeMismatchError("fields use different powers p")
    return float(np.max(np.abs(clean.raw - noisy.raw)))


def relative_gap(a: IndicatorField, b: IndicatorField) -> float:
    """max_z |a - b| / max_z |b| on unnormalized values."""
    return float(np.max(np.abs(a.raw - b.raw)) / np.max(np.abs(b.raw)))


def distance_to_shape(grid: SamplingGrid, shape: Shape) -> np.ndarray:
    """Distance from each grid point to the nearest grid point inside ``shape``."""
    inside = shape.contains(grid.points).reshape(grid.shape)
    if not inside.any():
        raise ValueError("shape contains no grid points")
    return ndimage.distance_transform_edt(~inside, sampling=grid.spacing).ravel()


def contrast_ratio(field: IndicatorField, shape: Shape, margin: float = 0.0) -> float:
    """Mean normalized value inside ``shape`` over mean outside beyond ``margin``."""
    if field.grid is None:
        raise ValueError("contrast ratio needs a grid field")
    vals = normalize(field).normalized if not field.is_normalized else field.normalized
    dist = distance_to_shape(field.grid, shape)
    inside = dist == 0
    outside = dist > margin
    if not outside.any():
        raise ValueError("no exterior points beyond the margin")
    return float(np.mean(vals[inside]) / np.mean(vals[outside]))


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    distances: np.ndarray
    envelope: np.ndarray


def decay_profile(
    evaluate: Callable[[np.ndarray], np.ndarray],
    support_points: np.ndarray,
    direction: Sequence[float],
    k: float,
    origin: Sequence[float] | None = None,
    window: tuple[float, float] = (5.0, 50.0),
    samples_per_wavelength: int = 24,
) -> DecayFit:
    """Log-log slope of the windowed-maximum envelope of I along a ray.

    ``evaluate`` maps points (n, dim) to unnormalized indicator values and
    ``support_points`` samples the scatterer (e.g. quadrature cell centres);
    distances to the scatterer are measured against those samples. Windows
    are one wavelength wide in distance, between ``window`` wavelengths.
    """
    support = np.asarray(support_points, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    origin = support.mean(axis=0) if origin is None else np.asarray(origin, dtype=float)
    lam = 2 * np.pi / k
    extent = np.max(np.linalg.norm(support - origin, axis=1))
    t = np.arange(0.0, window[1] * lam + extent + lam, lam / samples_per_wavelength)
    ray = origin + t[:, None] * direction
    dist = np.empty(len(ray))
    for s in range(0, len(ray), 512):
        d = np.linalg.norm(ray[s : s + 512, None, :] - support[None], axis=-1)
        dist[s : s + 512] = d.min(axis=1)
    keep = (dist >= window[0] * lam) & (dist <= window[1] * lam)
    ray, dist = ray[keep], dist[keep]
    values = np.asarray(evaluate(ray), dtype=float)
    edges = np.arange(window[0], window[1] + 1e-9, 1.0) * lam
    env_d, env_v = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (dist >= lo) & (dist < hi)
        if sel.any():
            i = np.argmax(np.where(sel, values, -np.inf))
            env_d.append(dist[i])
            env_v.append(values[i])
    env_d = np.asarray(env_d)
    env_v = np.asarray(env_v)
    good = env_v > 0
    if good.sum() < 10:
        raise ValueError(f"only {good.sum()} envelope samples; need at least 10")
    slope, intercept = np.polyfit(np.log(env_d[good]), np.log(env_v[good]), 1)
    return DecayFit(float(slope), float(intercept), env_d, env_v)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def to_csv(field: IndicatorField) -> str:
    """CSV with header ``x,y[,z],raw,normalized``."""
    f = field if field.is_normalized else normalize(field)
    dim = f.points.shape[1]
    head = ["x", "y", "z"][:dim] + ["raw", "normalized"]
    rows = [",".join(head)]
    for pt, r, n in zip(f.points, f.raw, f.normalized):
        rows.append(",".join(repr(float(c)) for c in (*pt, r, n)))
    return "\n".join(rows) + "\n"


def heatmap_array(values2d: np.ndarray) -> np.ndarray:
    """uint8 grayscale image of an (n1, n2) 'ij' array; 0 black, 1 white.

    Rows run from the largest second coordinate (top) to the smallest.
    """
    v = np.clip(np.asarray(values2d, dtype=float), 0.0, 1.0)
    return np.round(v.T[::-1] * 255).astype(np.uint8)


def slice_index(grid: SamplingGrid, axis: int, value: float = 0.0) -> int:
    return int(np.argmin(np.abs(grid.axes()[axis] - value)))


def grid_slice(field: IndicatorField, axis: int = 1, value: float = 0.0) -> np.ndarray:
    """Normalized 2D slice of a 3D field at the grid plane nearest ``value``."""
    f = field if field.is_normalized else normalize(field)
    vol = f.as_grid(normalized=True)
    return np.take(vol, slice_index(f.grid, axis, value), axis=axis)


def voxel_mask(field: IndicatorField, isovalue: float = 0.4) -> np.ndarray:
    f = field if field.is_normalized else normalize(field)
    return (f.as_grid(normalized=True) >= isovalue).astype(np.uint8)
