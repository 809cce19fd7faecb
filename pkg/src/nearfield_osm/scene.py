"""Experiment description: shapes, contrast, measurement surface, waves, grid.

A :class:`Scenario` is the single immutable unit of configuration. It holds
parameters only; geometric objects (surface quadrature, incident waves,
sampling grid) are built on demand from it and are deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
KITE_SAMPLES = 512


class ConfigurationError(ValueError):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    """Base class; subclasses implement ``contains`` and ``bounds``."""

    def contains(self, points):
        raise NotImplementedError

    def bounds(self):
        raise NotImplementedError

    @property
    def dim(self) -> int:
        lo, _ = self.bounds()
        return len(lo)

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Disk(Shape):
    center: tuple[float, float]
    radius: float

    def contains(self, points):
        d = np.asarray(points, dtype=float) - np.asarray(self.center)
        return np.sum(d * d, axis=-1) < self.radius**2

    def bounds(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"kind": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ball(Disk):
    center: tuple[float, float, float]

    def to_dict(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ellipse(Shape):
    center: tuple[float, float]
    semi_axes: tuple[float, float]

    def contains(self, points):
        d = (np.asarray(points, dtype=float) - np.asarray(self.center)) / np.asarray(
            self.semi_axes
        )
        return np.sum(d * d, axis=-1) < 1.0

    def bounds(self):
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        return c - a, c + a

    def to_dict(self):
        return {
            "kind": "ellipse",
            "center": list(self.center),
            "semi_axes": list(self.semi_axes),
        }


@dataclass(frozen=True)
class Rectangle(Shape):
    """Open axis-aligned box; 2D or 3D depending on the corner length."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        return np.all((p > np.asarray(self.lower)) & (p < np.asarray(self.upper)), axis=-1)

    def bounds(self):
        return np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)

    def to_dict(self):
        kind = "rectangle" if len(self.lower) == 2 else "box"
        return {"kind": kind, "lower": list(self.lower), "upper": list(self.upper)}


Box = Rectangle


def kite_curve(t):
    """Kite boundary ((cos t + 0.65 cos 2t - 0.65)/2, 1.5 sin t / 2.5)."""
    t = np.asarray(t, dtype=float)
    x1 = (np.cos(t) + 0.65 * np.cos(2 * t) - 0.65) / 2.0
    x2 = 1.5 * np.sin(t) / 2.5
    return np.stack([x1, x2], axis=-1)


@dataclass(frozen=True)
class Polygon(Shape):
    """Closed polyline with even-odd membership."""

    vertices: np.ndarray = field(compare=False)
    kind: str = "polygon"
    samples: int = 0

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        flat = p.reshape(-1, 2)
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        px = flat[:, None, 0]
        py = flat[:, None, 1]
        ay, by = a[None, :, 1], b[None, :, 1]
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = a[None, :, 0] + (py - ay) * (b[None, :, 0] - a[None, :, 0]) / (by - ay)
        hits = straddle & (px < xcross)
        inside = (np.count_nonzero(hits, axis=1) % 2) == 1
        return inside.reshape(p.shape[:-1])

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def to_dict(self):
        if self.kind == "kite":
            return {"kind": "kite", "samples": self.samples}
        return {"kind": "polygon", "vertices": self.vertices.tolist()}


def make_kite(samples: int = KITE_SAMPLES) -> Polygon:
    if samples < 256:
        raise ConfigurationError("kite polyline needs at least 256 samples")
    t = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    return Polygon(vertices=kite_curve(t), kind="kite", samples=samples)


@dataclass(frozen=True)
class Union(Shape):
    parts: tuple[Shape, ...]

    def contains(self, points):
        out = self.parts[0].contains(points)
        for part in self.parts[1:]:
            out = out | part.contains(points)
        return out

    def bounds(self):
        los, his = zip(*(p.bounds() for p in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    def to_dict(self):
        return {"kind": "union", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Difference(Shape):
    base: Shape
    removed: Shape

    def contains(self, points):
        return self.base.contains(points) & ~self.removed.contains(points)

    def bounds(self):
        return self.base.bounds()

    def to_dict(self):
        return {
            "kind": "difference",
            "base": self.base.to_dict(),
            "removed": self.removed.to_dict(),
        }


def shape_from_dict(d: dict[str, Any]) -> Shape:
    kind = d.get("kind")
    try:
        if kind == "disk":
            return Disk(tuple(d["center"]), float(d["radius"]))
        if kind == "ball":
            return Ball(tuple(d["center"]), float(d["radius"]))
        if kind == "ellipse":
            return Ellipse(tuple(d["center"]), tuple(d["semi_axes"]))
        if kind in ("rectangle", "box"):
            return Rectangle(tuple(d["lower"]), tuple(d["upper"]))
        if kind == "kite":
            return make_kite(int(d.get("samples", KITE_SAMPLES)))
        if kind == "polygon":
            return Polygon(vertices=np.asarray(d["vertices"], dtype=float))
        if kind == "union":
            return Union(tuple(shape_from_dict(p) for p in d["parts"]))
        if kind == "difference":
            return Difference(shape_from_dict(d["base"]), shape_from_dict(d["removed"]))
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed {kind!r} shape: {exc}") from exc
    raise ConfigurationError(f"unknown shape kind {kind!r}")


# ---------------------------------------------------------------------------
# Contrast
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContrastField:
    """Constant symmetric contrast matrix supported on ``shape``.

    Q for the Helmholtz model, P = eps - I for Maxwell. ``matrix + I`` must
    be symmetric positive definite.
    """

    shape: Shape
    matrix: np.ndarray = field(compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim == 1:
            m = np.diag(m)
        if m.shape[0] != m.shape[1]:
            raise ConfigurationError("contrast matrix must be square")
        if not np.allclose(m, m.T, rtol=0, atol=1e-14):
            raise ConfigurationError("contrast matrix must be symmetric")
        if np.linalg.eigvalsh(m + np.eye(len(m))).min() <= 0:
            raise ConfigurationError("contrast + I must be positive definite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __call__(self, points):
        """Contrast matrix at each point, zero outside the support."""
        inside = self.shape.contains(points)
        return inside[..., None, None] * self.matrix

    def scaled(self, alpha: float) -> "ContrastField":
        return ContrastField(self.shape, alpha * self.matrix)

    def to_dict(self):
        m = self.matrix
        if np.count_nonzero(m - np.diag(np.diag(m))) == 0:
            return {"shape": self.shape.to_dict(), "diag": np.diag(m).tolist()}
        return {"shape": self.shape.to_dict(), "matrix": m.tolist()}

    @classmethod
    def from_dict(cls, d):
        mat = d.get("matrix", d.get("diag"))
        if mat is None:
            raise ConfigurationError("contrast needs 'diag' or 'matrix'")
        return cls(shape_from_dict(d["shape"]), np.asarray(mat, dtype=float))


# ---------------------------------------------------------------------------
# Measurement surface, waves, grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasurementSurface:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Quadrature of ``values`` sampled at the surface points (last axis)."""
        return np.asarray(values) @ self.weights


def make_circle_surface(radius: float, n: int) -> MeasurementSurface:
    """Equispaced circle points with trapezoidal weights 2 pi R / n."""
    if n < 8:
        raise ConfigurationError("circle surface needs n >= 8 points")
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    theta = 2 * np.pi * np.arange(n) / n
    normals = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    weights = np.full(n, 2 * np.pi * radius / n)
    return MeasurementSurface(radius * normals, normals, weights)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n near-uniform unit vectors (golden-angle spiral, equal-area bands)."""
    i = np.arange(n)
    z = 1.0 - (2 * i + 1) / n
    rho = np.sqrt(1.0 - z * z)
    phi = GOLDEN_ANGLE * i
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def make_sphere_surface(radius: float, n: int) -> MeasurementSurface:
    """Fibonacci-lattice sphere with equal weights 4 pi R^2 / n."""
    if n < 50:
        raise ConfigurationError("sphere surface needs n >= 50 points")
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    normals = fibonacci_sphere(n)
    weights = np.full(n, 4 * np.pi * radius**2 / n)
    return MeasurementSurface(radius * normals, normals, weights)


def make_directions(dim: int, n: int) -> np.ndarray:
    """Incident directions: angles 2 pi j / n in 2D, Fibonacci lattice in 3D."""
    if n < 1:
        raise ConfigurationError("need at least one incident direction")
    if dim == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        return fibonacci_sphere(n)
    raise ConfigurationError(f"dim must be 2 or 3, got {dim}")


def make_polarizations(directions, axis=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Unit polarizations d_j x e1, falling back to d_j x e2 near +-e1."""
    d = np.asarray(directions, dtype=float)
    e1 = np.asarray(axis, dtype=float)
    q = np.cross(d, e1)
    norm = np.linalg.norm(q, axis=1)
    bad = norm < 1e-8
    if np.any(bad):
        logger.info("%d direction(s) parallel to %s; using d x e2", bad.sum(), e1)
        q[bad] = np.cross(d[bad], np.array([0.0, 1.0, 0.0]))
        norm[bad] = np.linalg.norm(q[bad], axis=1)
    return q / norm[:, None]


@dataclass(frozen=True)
class IncidentWaveSet:
    k: float
    directions: np.ndarray
    polarizations: np.ndarray | None = None

    def __len__(self):
        return len(self.directions)

    def subset(self, idx) -> "IncidentWaveSet":
        pol = None if self.polarizations is None else self.polarizations[idx]
        return IncidentWaveSet(self.k, self.directions[idx], pol)


@dataclass(frozen=True)
class SamplingGrid:
    """Cell-centred tensor grid strictly inside ``ranges``; 'ij' ordering."""

    ranges: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        if len(self.ranges) != len(self.resolution):
            raise ConfigurationError("grid ranges and resolution differ in length")
        if any(n < 1 for n in self.resolution):
            raise ConfigurationError("grid resolution must be positive")
        if any(b <= a for a, b in self.ranges):
            raise ConfigurationError("grid ranges must be increasing")

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / n for (a, b), n in zip(self.ranges, self.resolution)])

    def axes(self) -> list[np.ndarray]:
        return [
            a + (np.arange(n) + 0.5) * (b - a) / n
            for (a, b), n in zip(self.ranges, self.resolution)
        ]

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __len__(self):
        return int(np.prod(self.resolution))

    def to_dict(self):
        return {"ranges": [list(r) for r in self.ranges], "resolution": list(self.resolution)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(map(float, r)) for r in d["ranges"]), tuple(map(int, d["resolution"])))


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Full description of one experiment.

    ``physics`` is ``"helmholtz"`` (2D or 3D) or ``"maxwell"`` (3D only).
    """

    name: str
    physics: str
    dim: int
    k: float
    contrast: ContrastField
    surface_radius: float
    surface_points: int
    n_waves: int
    grid: SamplingGrid
    polarization_axis: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.physics not in ("helmholtz", "maxwell"):
            raise ConfigurationError(f"unknown physics {self.physics!r}")
        if self.dim not in (2, 3) or (self.physics == "maxwell" and self.dim != 3):
            raise ConfigurationError("maxwell needs dim 3; helmholtz needs dim 2 or 3")
        if not self.k > 0:
            raise ConfigurationError("wavenumber must be positive")
        if self.contrast.matrix.shape != (self.dim, self.dim):
            raise ConfigurationError("contrast matrix size does not match dim")
        if self.grid.dim != self.dim:
            raise ConfigurationError("grid dimension does not match dim")
        if self.n_waves < 1:
            raise ConfigurationError("need at least one incident wave")
        lo, hi = self.contrast.shape.bounds()
        corners = np.maximum(np.abs(lo), np.abs(hi))
        if np.linalg.norm(corners) >= self.surface_radius:
            raise ConfigurationError("scatterer must lie strictly inside the measurement surface")

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.k

    @property
    def shape(self) -> Shape:
        return self.contrast.shape

    def surface(self) -> MeasurementSurface:
        if self.dim == 2:
            return make_circle_surface(self.surface_radius, self.surface_points)
        return make_sphere_surface(self.surface_radius, self.surface_points)

    def waves(self) -> IncidentWaveSet:
        d = make_directions(self.dim, self.n_waves)
        pol = make_polarizations(d, self.polarization_axis) if self.physics == "maxwell" else None
        return IncidentWaveSet(self.k, d, pol)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "physics": self.physics,
            "dim": self.dim,
            "k": self.k,
            "contrast": self.contrast.to_dict(),
            "surface": {"radius": self.surface_radius, "points": self.surface_points},
            "n_waves": self.n_waves,
            "grid": self.grid.to_dict(),
            "polarization_axis": list(self.polarization_axis),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        if "preset" in d:
            base = preset_scene(d["preset"])
            over = {key: v for key, v in d.items() if key != "preset"}
            merged = {**base.to_dict(), **over}
            return cls.from_dict(merged)
        try:
            return cls(
                name=str(d.get("name", "custom")),
                physics=str(d["physics"]),
                dim=int(d["dim"]),
                k=float(d["k"]),
                contrast=ContrastField.from_dict(d["contrast"]),
                surface_radius=float(d["surface"]["radius"]),
                surface_points=int(d["surface"]["points"]),
                n_waves=int(d["n_waves"]),
                grid=SamplingGrid.from_dict(d["grid"]),
                polarization_axis=tuple(d.get("polarization_axis", (1.0, 0.0, 0.0))),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed scenario: {exc}") from exc


def kite_ellipse_shape() -> Shape:
    return Union((make_kite(), Ellipse((1.0, -0.75), (0.4, 0.6))))


def rectangle_shape() -> Shape:
    return Rectangle((-0.4, -0.4), (0.8, 0.8))


def sphere_lshape_shape() -> Shape:
    ball = Ball((0.6, 0.0, 0.5), 0.5)
    d2 = Rectangle((-1.1, -0.3, -1.0), (0.1, 0.3, 0.2))
    d3 = Rectangle((-0.5, -0.3, -0.4), (0.1, 0.3, 0.2))
    return Union((ball, Difference(d2, d3)))


PRESETS = ("kite-ellipse-2d", "rectangle-2d", "sphere-lshape-3d")


def preset_scene(name: str) -> Scenario:
    """Named experiment geometries with their default parameters."""
    if name in ("kite-ellipse-2d", "rectangle-2d"):
        shape = kite_ellipse_shape() if name == "kite-ellipse-2d" else rectangle_shape()
        return Scenario(
            name=name,
            physics="helmholtz",
            dim=2,
            k=16.0,
            contrast=ContrastField(shape, np.array([0.5, 0.7])),
            surface_radius=3.0,
            surface_points=64,
            n_waves=32,
            grid=SamplingGrid(((-2.0, 2.0), (-2.0, 2.0)), (96, 96)),
        )
    if name == "sphere-lshape-3d":
        return Scenario(
            name=name,
            physics="maxwell",
            dim=3,
            k=12.0,
            contrast=ContrastField(sphere_lshape_shape(), np.array([0.5, 0.4, 0.3])),
            surface_radius=3.0,
            surface_points=324,
            n_waves=180,
            grid=SamplingGrid(((-1.5, 1.5),) * 3, (60, 60, 60)),
        )
    raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESETS}")
