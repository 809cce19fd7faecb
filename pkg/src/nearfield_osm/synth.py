"""Synthetic near-field Cauchy data from the volume representations.

Helmholtz::

    u_sc(x)      = int_D grad_x Phi(x, y) . Q grad u(y) dy
    d_nu u_sc(x) = int_D nu^T Hess_x Phi(x, y) Q grad u(y) dy

Maxwell (``u = (k^2 + grad div) int_D Phi P E``)::

    u(x)             = k^2 int_D G(x, y) P E(y) dy
    nu x curl u(x)   = k^2 int_D nu x (grad_x Phi(x, y) x P E(y)) dy

The integrals use a bounding-box cell grid; cells cut by the boundary are
weighted by their covered fraction. The interior field is the incident field (Born) or a few fixed-point sweeps of
the representation on the same cells.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import specfun
from ._parallel import map_chunks
from .scene import ConfigurationError, IncidentWaveSet, MeasurementSurface, Scenario

DEFAULT_CELLS_PER_WAVELENGTH = 8.0
MAX_ITERATIONS = 4
MIN_CELLS_PER_WAVELENGTH = 6.0
MAGIC = b"NFCD"
FORMAT_VERSION = 1
SURFACE_CHUNK = 16
CELL_CHUNK = 256
SUBSAMPLES = 4
FINE_SUBSAMPLES = 16


class GeometryError(ValueError):
    """Measurement point inside the contrast support."""


@dataclass(frozen=True)
class VolumeQuadrature:
    """Quadrature nodes inside the scatterer with interior-field samples.

    ``field`` has shape (N, M, dim): grad u for Helmholtz, E for Maxwell.
    ``weights`` holds the covered measure of each cell; ``None`` means
    every cell is fully inside.
    """

    centers: np.ndarray
    spacing: np.ndarray
    field: np.ndarray
    contrast: np.ndarray
    k: float
    physics: str
    model: str = "born"
    weights: np.ndarray | None = None

    @property
    def measure(self) -> float:
        """Measure of one full cell."""
        return float(np.prod(self.spacing))

    @property
    def cell_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(len(self.centers), self.measure)
        return self.weights

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.cell_weights))

    @property
    def sources(self) -> np.ndarray:
        """Weighted contrast sources ``Q f(y) |cell|``, shape (N, M, dim)."""
        return (self.field @ self.contrast.T) * self.cell_weights[:, None]

    def with_field(self, field, model="custom") -> "VolumeQuadrature":
        return replace(self, field=np.asarray(field, dtype=complex), model=model)

    def with_contrast(self, contrast) -> "VolumeQuadrature":
        return replace(self, contrast=np.asarray(contrast, dtype=float))


def _probe_offsets(h, per_axis):
    dim = len(h)
    offs = (np.arange(per_axis) + 0.5) / per_axis - 0.5
    grid = np.meshgrid(*([offs] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1) * h


def _covered(shape, centers, probe):
    """Covered-probe mask (cells, probes) and the probe positions."""
    pts = centers[:, None, :] + probe[None]
    inside = shape.contains(pts.reshape(-1, pts.shape[-1])).reshape(pts.shape[:2])
    return inside, pts


def cell_grid(shape, h_target: float, subsamples: int = SUBSAMPLES):
    """Nodes, per-axis spacing and covered measure of the cells meeting ``shape``.

    The bounding box is split into cells of size at most ``h_target``. Each
    cell is probed with ``subsamples`` points per axis to find the cells cut
    by the boundary; those are probed again with ``FINE_SUBSAMPLES`` points
    per axis. A cut cell's weight is its covered fraction times the cell
    measure and its node is the centroid of the covered probes, or the
    covered probe nearest to it when the centroid falls outside the shape.
    Fully covered cells keep their centre.
    """
    lo, hi = shape.bounds()
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = len(lo)
    n = np.maximum(np.ceil((hi - lo) / h_target - 1e-9).astype(int), 1)
    h = (hi - lo) / n
    axes = [lo[i] + (np.arange(n[i]) + 0.5) * h[i] for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    coarse = _probe_offsets(h, subsamples)
    fine = _probe_offsets(h, FINE_SUBSAMPLES)
    cell = float(np.prod(h))

    frac = np.empty(len(centers))
    for s in range(0, len(centers), 4096):
        inside, _ = _covered(shape, centers[s : s + 4096], coarse)
        frac[s : s + 4096] = inside.mean(axis=1)
    keep = frac > 0
    centers, frac = centers[keep], frac[keep]
    nodes = centers.copy()
    weights = frac * cell
    cut = np.flatnonzero(frac < 1)
    step = max(1, 2**18 // len(fine))
    for s in range(0, len(cut), step):
        idx = cut[s : s + step]
        inside, pts = _covered(shape, centers[idx], fine)
        count = inside.sum(axis=1)
        weights[idx] = count / len(fine) * cell
        cen = np.einsum("cp,cpd->cd", inside, pts) / np.maximum(count, 1)[:, None]
        bad = ~shape.contains(cen) & (count > 0)
        if np.any(bad):
            d = np.linalg.norm(pts[bad] - cen[bad, None, :], axis=-1)
            d[~inside[bad]] = np.inf
            cen[bad] = pts[bad][np.arange(d.shape[0]), np.argmin(d, axis=1)]
        nodes[idx] = cen
    ok = weights > 0
    return nodes[ok], h, weights[ok]


def build_quadrature(
    scenario: Scenario,
    cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH,
    model: str = "born",
    iterations: int = 1,
    waves: IncidentWaveSet | None = None,
) -> VolumeQuadrature:
    """Volume quadrature over the scatterer with its interior field filled in."""
    if cells_per_wavelength < MIN_CELLS_PER_WAVELENGTH:
        raise ConfigurationError("cells_per_wavelength must be >= 6")
    centers, h, weights = cell_grid(scenario.shape, scenario.wavelength / cells_per_wavelength)
    if len(centers) == 0:
        raise ConfigurationError("contrast support contains no quadrature cells")
    quad = VolumeQuadrature(
        centers=centers,
        spacing=h,
        field=np.zeros((0, len(centers), scenario.dim), dtype=complex),
        contrast=scenario.contrast.matrix,
        k=scenario.k,
        physics=scenario.physics,
        weights=weights,
    )
    waves = scenario.waves() if waves is None else waves
    return quad.with_field(interior_field_model(quad, waves, model, iterations), model)


def incident_field(physics, points, waves: IncidentWaveSet):
    """grad u_in (Helmholtz) or E_in (Maxwell) at ``points``, shape (N, M, dim)."""
    k = waves.k
    phase = np.exp(1j * k * (waves.directions @ np.asarray(points).T))
    if physics == "helmholtz":
        return 1j * k * phase[:, :, None] * waves.directions[:, None, :]
    return phase[:, :, None] * waves.polarizations[:, None, :]


def interior_field_model(quad: VolumeQuadrature, waves, model="born", iterations=1):
    """Interior field samples at the quadrature cells.

    ``born`` returns the incident field. ``born_iterated`` applies the
    representation ``iterations`` times, with the strongly singular self
    cell replaced by its depolarisation value ``-(1/dim) Q f``.
    """
    f_in = incident_field(quad.physics, quad.centers, waves)
    if model == "born":
        return f_in
    if model != "born_iterated":
        raise ConfigurationError(f"unknown interior field model {model!r}")
    if not 1 <= iterations <= MAX_ITERATIONS:
        raise ConfigurationError(f"iterations must be in 1..{MAX_ITERATIONS}")
    f = f_in
    for _ in range(iterations):
        f = f_in + _self_interaction(quad.with_field(f))
    return f


def _self_interaction(quad: VolumeQuadrature):
    """Scattered field (grad u_sc or u) evaluated back on the cells."""
    y = quad.centers
    m, dim = y.shape
    src = quad.sources
    n_waves = src.shape[0]
    flat = src.reshape(n_waves, m * dim)
    k = quad.k

    def rows(s):
        x = y[s]
        diff = x[:, None, :] - y[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        same = r == 0
        xs = np.where(same[..., None], diff + 1.0, diff)
        if quad.physics == "helmholtz":
            op = specfun.hess_green(dim, xs, np.zeros(dim), k)
        else:
            op = k * k * specfun.dyadic_green(xs, np.zeros(dim), k)
        op[same] = -np.eye(dim) / dim
        op = op.transpose(0, 2, 1, 3).reshape(len(x) * dim, m * dim)
        return (flat @ op.T).reshape(n_waves, len(x), dim)

    return map_chunks(rows, m, CELL_CHUNK, axis=1)


# ---------------------------------------------------------------------------
# Cauchy data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CauchyDataSet:
    """Measured traces on the surface, one row per incident wave.

    Helmholtz: ``field`` = u_sc and ``deriv`` = d u_sc / d nu, shape (N, P).
    Maxwell: ``field`` = u and ``deriv`` = nu x curl u, shape (N, P, 3).
    """

    physics: str
    dim: int
    k: float
    field: np.ndarray
    deriv: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.field.shape != self.deriv.shape:
            raise ValueError("field and derivative traces differ in shape")

    @property
    def n_waves(self) -> int:
        return self.field.shape[0]

    @property
    def n_points(self) -> int:
        return self.field.shape[1]

    @property
    def ncomp(self) -> int:
        return 1 if self.field.ndim == 2 else self.field.shape[2]

    def with_traces(self, field, deriv, **meta) -> "CauchyDataSet":
        return replace(self, field=field, deriv=deriv, meta={**self.meta, **meta})


def _check_outside(quad: VolumeQuadrature, points, shape=None):
    pts = np.asarray(points, dtype=float)
    if shape is not None and np.any(shape.contains(pts)):
        raise GeometryError("measurement point inside the contrast support")
    h = np.max(quad.spacing)
    for s in range(0, len(pts), 256):
        d = np.linalg.norm(pts[s : s + 256, None, :] - quad.centers[None], axis=-1)
        if np.any(d < 0.5 * h):
            raise GeometryError("measurement point inside the contrast support")


def helmholtz_field(quad: VolumeQuadrature, points, normals=None, threads=1):
    """u_sc and (if ``normals``) its normal derivative at arbitrary points."""
    pts = np.asarray(points, dtype=float)
    dim = pts.shape[1]
    m = len(quad.centers)
    src = quad.sources.reshape(-1, m * dim)
    k = quad.k

    def block(s):
        diff = pts[s, None, :] - quad.centers[None]
        g = specfun.grad_green(dim, diff, np.zeros(dim), k)
        u = src @ g.reshape(len(diff), m * dim).T
        if normals is None:
            return np.stack([u, np.zeros_like(u)])
        hess = specfun.hess_green(dim, diff, np.zeros(dim), k)
        nh = np.einsum("pa,pmab->pmb", normals[s], hess)
        du = src @ nh.reshape(len(diff), m * dim).T
        return np.stack([u, du])

    out = map_chunks(block, len(pts), SURFACE_CHUNK, threads, axis=2)
    return out[0], out[1]


def maxwell_field(quad: VolumeQuadrature, points, normals=None, threads=1):
    """u and (if ``normals``) nu x curl u at arbitrary points, shape (N, P, 3)."""
    pts = np.asarray(points, dtype=float)
    m = len(quad.centers)
    src = quad.sources.reshape(-1, m * 3)
    k = quad.k
    eye = np.eye(3)

    def block(s):
        diff = pts[s, None, :] - quad.centers[None]
        n = len(diff)
        gt = k * k * specfun.dyadic_green(diff, np.zeros(3), k)
        u = src @ gt.transpose(0, 2, 1, 3).reshape(n * 3, m * 3).T
        u = u.reshape(-1, n, 3)
        if normals is None:
            return np.stack([u, np.zeros_like(u)])
        # nu x (g x q) = g (nu . q) - q (nu . g)
        g = k * k * specfun.grad_green(3, diff, np.zeros(3), k)
        nu = normals[s]
        ng = np.einsum("pa,pma->pm", nu, g)
        op = g[:, :, :, None] * nu[:, None, None, :] - ng[:, :, None, None] * eye
        c = src @ op.transpose(0, 2, 1, 3).reshape(n * 3, m * 3).T
        return np.stack([u, c.reshape(-1, n, 3)])

    out = map_chunks(block, len(pts), SURFACE_CHUNK, threads, axis=2)
    return out[0], out[1]


def _meta(scenario, quad, surface):
    return {
        "scenario": scenario.to_dict() if scenario is not None else None,
        "cells": int(len(quad.centers)),
        "cell_spacing": quad.spacing.tolist(),
        "interior_model": quad.model,
        "surface_points": int(len(surface)),
    }


def helmholtz_cauchy_data(
    scenario: Scenario, quad: VolumeQuadrature, surface: MeasurementSurface | None = None, threads=1
) -> CauchyDataSet:
    """(u_sc, d u_sc / d nu) on the measurement surface for each wave."""
    surface = scenario.surface() if surface is None else surface
    _check_outside(quad, surface.points, scenario.shape)
    u, du = helmholtz_field(quad, surface.points, surface.normals, threads)
    return CauchyDataSet("helmholtz", scenario.dim, scenario.k, u, du, _meta(scenario, quad, surface))


def maxwell_cauchy_data(
    scenario: Scenario, quad: VolumeQuadrature, surface: MeasurementSurface | None = None, threads=1
) -> CauchyDataSet:
    """(u, nu x curl u) on the measurement surface for each wave."""
    surface = scenario.surface() if surface is None else surface
    _check_outside(quad, surface.points, scenario.shape)
    u, cu = maxwell_field(quad, surface.points, surface.normals, threads)
    return CauchyDataSet("maxwell", 3, scenario.k, u, cu, _meta(scenario, quad, surface))


def cauchy_data(scenario, quad, surface=None, threads=1) -> CauchyDataSet:
    if scenario.physics == "maxwell":
        return maxwell_cauchy_data(scenario, quad, surface, threads)
    return helmholtz_cauchy_data(scenario, quad, surface, threads)


def farfield_trace_substitute(data: CauchyDataSet) -> CauchyDataSet:
    """Replace d u_sc / d nu by i k u_sc (radiation-condition approximation)."""
    if data.physics != "helmholtz":
        raise ValueError("far-field substitution applies to Helmholtz data only")
    return data.with_traces(data.field, 1j * data.k * data.field, deriv_source="ik*u_sc")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------
#
# Binary container, all little-endian:
#   magic "NFCD" | u32 version | u32 N | u32 P | u32 dim | u32 ncomp | f64 k
#   | u32 L | L bytes UTF-8 JSON metadata (physics, provenance)
#   | field: N*P*ncomp complex as interleaved (re, im) f64
#   | deriv: same layout


def to_bytes(data: CauchyDataSet) -> bytes:
    meta = json.dumps({"physics": data.physics, **data.meta}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(
        struct.pack(
            "<5Id", FORMAT_VERSION, data.n_waves, data.n_points, data.dim, data.ncomp, data.k
        )
    )
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    for arr in (data.field, data.deriv):
        buf.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    return buf.getvalue()


def from_bytes(raw: bytes) -> CauchyDataSet:
    if raw[:4] != MAGIC:
        raise ValueError("not a Cauchy data container")
    version, n, p, dim, ncomp, k = struct.unpack_from("<5Id", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = 4 + struct.calcsize("<5Id")
    (mlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off : off + mlen].decode())
    off += mlen
    shape = (n, p) if ncomp == 1 else (n, p, ncomp)
    count = n * p * ncomp
    arrs = []
    for _ in range(2):
        arrs.append(np.frombuffer(raw, dtype="<c16", count=count, offset=off).reshape(shape).copy())
        off += 16 * count
    physics = meta.pop("physics")
    return CauchyDataSet(physics, dim, k, arrs[0], arrs[1], meta)


def to_csv(data: CauchyDataSet) -> str:
    """One row per (wave, point, component)."""
    lines = ["wave,point,component,field_re,field_im,deriv_re,deriv_im"]
    f = data.field.reshape(data.n_waves, data.n_points, -1)
    d = data.deriv.reshape(f.shape)
    for j in range(f.shape[0]):
        for i in range(f.shape[1]):
            for c in range(f.shape[2]):
                a, b = complex(f[j, i, c]), complex(d[j, i, c])
                lines.append(f"{j},{i},{c},{a.real!r},{a.imag!r},{b.real!r},{b.imag!r}")
    return "\n".join(lines) + "\n"


def save(data: CauchyDataSet, path) -> None:
    Path(path).write_bytes(to_bytes(data))


def load(path) -> CauchyDataSet:
    return from_bytes(Path(path).read_bytes())
