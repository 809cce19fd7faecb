"""Frobenius-scaled uniform complex noise.

Each trace T is perturbed as ``T + delta * N / ||N||_F * ||T||_F`` with an
independent matrix N whose entries are uniform in the complex square
``{a + ib : |a| <= 1, |b| <= 1}``. The relative Frobenius perturbation of
each trace is therefore exactly ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import MeasurementSurface
from .synth import CauchyDataSet

RNG_ALGORITHM = "numpy.random.PCG64"


@dataclass(frozen=True)
class NoiseSpec:
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("noise level delta must be >= 0")


def unit_square_noise(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, shape) + 1j * rng.uniform(-1.0, 1.0, shape)


def add_noise(data: CauchyDataSet, spec: NoiseSpec) -> CauchyDataSet:
    """Noisy copy of ``data``; deterministic in ``spec.seed``."""
    if not (np.all(np.isfinite(data.field)) and np.all(np.isfinite(data.deriv))):
        raise ValueError("data must be finite")
    meta = {"noise": {"delta": spec.delta, "seed": spec.seed, "rng": RNG_ALGORITHM}}
    if spec.delta == 0:
        return data.with_traces(data.field.copy(), data.deriv.copy(), **meta)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    noisy = []
    for trace in (data.field, data.deriv):
        n = unit_square_noise(rng, trace.shape)
        scale = spec.delta * np.linalg.norm(trace.ravel()) / np.linalg.norm(n.ravel())
        noisy.append(trace + scale * n)
    return data.with_traces(noisy[0], noisy[1], **meta)


def noise_levels(clean: CauchyDataSet, noisy: CauchyDataSet, surface: MeasurementSurface):
    """(delta_1, delta_2): summed per-wave boundary L2 norms of the perturbation.

    The L2 norm uses the surface quadrature weights.
    """
    out = []
    for a, b in ((clean.field, noisy.field), (clean.deriv, noisy.deriv)):
        diff = np.abs(a - b) ** 2
        if diff.ndim == 3:
            diff = diff.sum(axis=2)
        out.append(float(np.sum(np.sqrt(diff @ surface.weights))))
    return tuple(out)
