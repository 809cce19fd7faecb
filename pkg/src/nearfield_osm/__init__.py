"""Orthogonality-type sampling from near-field Cauchy data.

Modules
-------
specfun     Bessel functions, Green's functions and imaging kernels.
scene       Scatterers, contrasts, measurement surfaces and presets.
synth       Synthetic Cauchy data from a volume representation.
noise       Relative Frobenius noise.
imaging     Imaging functionals, volume oracles and diagnostics.
validation  Numerical checks of the imaging identities.
runner      Command-line interface.
"""

__version__ = "0.1.0"
