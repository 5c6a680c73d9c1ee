"""Closed-form Schmidt spectra of decohered wave packets, and their lattice counterparts.

Two exactly solvable cases:

* a uniform packet in a box of width ``L`` with kernel ``exp(-a (x-y)^2)``
  continued by images, whose eigenfunctions are box sines;
* a Gaussian packet ``exp(-b x^2)`` with the same kernel on the whole line,
  whose eigenfunctions are Hermite functions and whose spectrum is geometric.

The ``*_lattice_*`` helpers diagonalize the discretized problems with the
library's own pipeline, for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import mpmath
import numpy as np

from .errors import ValidationError
from .lattice import (
    LatticeGrid,
    LatticeWaveFunction,
    decohered_rho,
    gaussian_decohered_rho,
    image_sum_kernel,
)
from .linalg import FixedPointMatrix, eigen_decompose, refine_eigenvalues

SquareWellReading = Literal["poisson", "literal", "product"]
SQUARE_WELL_READINGS: tuple[SquareWellReading, ...] = ("poisson", "literal", "product")
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class SquareWellOracle:
    a: float
    L: float
    n_max: int = 50

    def __post_init__(self):
        if not (self.a > 0 and self.L > 0):
            raise ValidationError(f"need a > 0 and L > 0, got a={self.a}, L={self.L}")
        if self.n_max < 1:
            raise ValidationError("n_max must be at least 1")


def _square_well_exponent(oracle: SquareWellOracle, n: np.ndarray, reading: SquareWellReading) -> np.ndarray:
    a, L = oracle.a, oracle.L
    if reading == "poisson":
        return (math.pi * n) ** 2 / (4 * a * L**2)
    if reading == "literal":
        return (n / (2 * a * L)) ** 2
    if reading == "product":
        return (n * a * L / 2) ** 2
    raise ValidationError(f"unknown square-well reading {reading!r}")


@dataclass(frozen=True, eq=False)
class SquareWellSpectrum:
    probabilities: np.ndarray
    L: float
    reading: str

    def eigenfunction(self, n: int, x) -> np.ndarray:
        """Normalized box mode ``sqrt(2/L) sin(pi n x / L)``; ``n`` starts at 1."""
        return math.sqrt(2 / self.L) * np.sin(math.pi * n * np.asarray(x) / self.L)


def square_well_spectrum(oracle: SquareWellOracle, reading: SquareWellReading = "poisson") -> SquareWellSpectrum:
    """Normalized weights ``p_n ~ exp(-E(n))`` for ``n = 1 .. n_max``.

    ``reading`` picks the exponent ``E``: ``"poisson"`` is
    ``pi^2 n^2 / (4 a L^2)``, the Fourier weight of the image-summed kernel;
    ``"literal"`` is ``(n / 2aL)^2`` and ``"product"`` is ``(n a L / 2)^2``.
    Use :func:`select_square_well_reading` to decide between them numerically.
    """
    n_far = np.arange(1, 4 * oracle.n_max + 1)
    expo = _square_well_exponent(oracle, n_far, reading)
    w = np.exp(-(expo - expo[0]))
    total = w.sum()
    tail = w[oracle.n_max :].sum() / total
    if tail > TAIL_TOL:
        needed = int(np.searchsorted(np.cumsum(w[::-1])[::-1] / total <= TAIL_TOL, True))
        raise ValidationError(
            f"n_max={oracle.n_max} leaves tail mass {tail:.2e}; use n_max >= {max(needed, oracle.n_max + 1)}"
        )
    p = w[: oracle.n_max] / w[: oracle.n_max].sum()
    p.setflags(write=False)
    return SquareWellSpectrum(p, oracle.L, reading)


def square_well_lattice(oracle: SquareWellOracle, n_sites: int = 400):
    """Uniform packet on interior sites ``x_j = j L / (n+1)`` with the image kernel.

    Returns ``(grid, rho)``.  With this placement the discrete sines are
    exactly orthogonal, so the lattice spectrum differs from the continuum
    one only by aliasing of the kernel's Fourier series.
    """
    eps = oracle.L / (n_sites + 1)
    grid = LatticeGrid(eps, n_sites, eps)
    psi = LatticeWaveFunction.uniform(grid)
    kernel = image_sum_kernel(grid, 1.0 / math.sqrt(oracle.a), 0.0, oracle.L)
    return grid, decohered_rho(psi, kernel)


def square_well_lattice_spectrum(oracle: SquareWellOracle, n_sites: int = 400) -> np.ndarray:
    _, rho = square_well_lattice(oracle, n_sites)
    return eigen_decompose(rho).probabilities


def select_square_well_reading(
    oracle: SquareWellOracle, n_sites: int = 400, n_levels: int = 20
) -> tuple[SquareWellReading, dict[str, float]]:
    """Pick the exponent reading that best matches lattice diagonalization.

    Returns the winning reading and the max absolute error of every reading
    over the top ``n_levels`` probabilities.  Readings whose closed form
    cannot be normalized at this ``n_max`` score ``inf``.
    """
    numeric = square_well_lattice_spectrum(oracle, n_sites)[:n_levels]
    errors: dict[str, float] = {}
    for reading in SQUARE_WELL_READINGS:
        try:
            p = square_well_spectrum(oracle, reading).probabilities
        except ValidationError:
            errors[reading] = math.inf
            continue
        k = min(n_levels, len(p))
        ref = np.zeros(n_levels)
        ref[:k] = p[:k]
        errors[reading] = float(np.max(np.abs(numeric - ref)))
    best = min(errors, key=errors.__getitem__)
    return best, errors


def square_well_temperature(a: float, m: float) -> float:
    """``kT = 2 a / m^2`` in units with hbar = 1."""
    return 2.0 * a / m**2


@dataclass(frozen=True)
class GaussianOracle:
    a: float
    b: float
    mu: float = field(init=False)
    p0: float = field(init=False)

    def __post_init__(self):
        if not (self.a >= 0 and self.b > 0):
            raise ValidationError(f"need a >= 0 and b > 0, got a={self.a}, b={self.b}")
        object.__setattr__(self, "mu", math.sqrt(self.b * (self.b + 2 * self.a)))
        sb = math.sqrt(self.b)
        object.__setattr__(self, "p0", 2 * sb / (sb + math.sqrt(2 * self.a + self.b)))


def hermite_functions(n_max: int, y) -> np.ndarray:
    """Orthonormal Hermite functions ``h_0 .. h_{n_max}`` at ``y``, stacked on axis 0.

    Uses the normalized three-term recurrence, which stays finite for large
    ``n`` where the raw polynomials overflow.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty((n_max + 1,) + y.shape)
    out[0] = math.pi**-0.25 * np.exp(-(y**2) / 2)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * y * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


@dataclass(frozen=True, eq=False)
class GaussianSpectrum:
    probabilities: np.ndarray
    mu: float

    def eigenfunctions(self, x) -> np.ndarray:
        """``phi_n(x)`` for every level, normalized on the real line."""
        scale = math.sqrt(2 * self.mu)
        return math.sqrt(scale) * hermite_functions(len(self.probabilities) - 1, scale * np.asarray(x))

    def eigenfunction(self, n: int, x) -> np.ndarray:
        scale = math.sqrt(2 * self.mu)
        return math.sqrt(scale) * hermite_functions(n, scale * np.asarray(x))[n]


def gaussian_spectrum(oracle: GaussianOracle, n_max: int) -> GaussianSpectrum:
    """Geometric law ``p_n = p0 (1 - p0)^n`` for ``n = 0 .. n_max``."""
    n = np.arange(n_max + 1)
    p = oracle.p0 * (1 - oracle.p0) ** n
    p.setflags(write=False)
    return GaussianSpectrum(p, oracle.mu)


def gaussian_spread(oracle: GaussianOracle) -> float:
    """Ensemble position variance scale ``(1 - p0) / (mu p0)``."""
    return (1 - oracle.p0) / (oracle.mu * oracle.p0)


def orthonormality_grid(mu: float, n_max: int, n_points: int = 4001) -> np.ndarray:
    half = (8 + math.sqrt(2 * n_max)) / math.sqrt(mu)
    return np.linspace(-half, half, n_points)


def gaussian_lattice(oracle: GaussianOracle, n_sites: int = 600, span_sd: float = 8.0):
    """Grid covering ``+-span_sd`` standard deviations of ``exp(-b x^2)``, and the decohered rho."""
    half = span_sd / math.sqrt(2 * oracle.b)
    grid = LatticeGrid.spanning(-half, half, n_sites)
    psi = LatticeWaveFunction.from_profile(grid, lambda x: np.exp(-oracle.b * x**2))
    ell = math.inf if oracle.a == 0 else 1.0 / math.sqrt(oracle.a)
    return grid, gaussian_decohered_rho(psi, ell)


def gaussian_lattice_spectrum(
    oracle: GaussianOracle,
    n_levels: int = 11,
    n_sites: int = 600,
    span_sd: float = 8.0,
    refine: bool = True,
    extra_levels: int = 6,
    bits: int = 160,
) -> np.ndarray:
    """Top ``n_levels`` probabilities of the discretized Gaussian problem.

    The double-precision eigensolver only resolves probabilities down to
    about ``1e-16``; at weak decoherence the geometric tail drops far below
    that by ``n = 10``.  With ``refine`` the eigenvectors from
    :func:`eigen_decompose` seed an exact-arithmetic Rayleigh-Ritz step on
    the same matrix evaluated at 50 digits.
    """
    _, rho = gaussian_lattice(oracle, n_sites, span_sd)
    spec = eigen_decompose(rho)
    if not refine:
        return np.array(spec.probabilities[:n_levels])
    k = min(n_sites, n_levels + extra_levels)
    with mpmath.workdps(50):
        half = mpmath.mpf(span_sd) / mpmath.sqrt(2 * mpmath.mpf(oracle.b))
        h = 2 * half / (n_sites - 1)
        b = mpmath.mpf(oracle.b)
        a = mpmath.mpf(oracle.a)
        weights = [mpmath.exp(-b * (-half + j * h) ** 2) for j in range(n_sites)]
        kernel = [mpmath.exp(-a * (m * h) ** 2) for m in range(n_sites)]
        exact = FixedPointMatrix.from_toeplitz_product(weights, kernel, bits=bits)
        trace = exact.trace()
    values = refine_eigenvalues(exact, spec.vectors[:, :k], n_iter=1)
    return values[:n_levels] / float(trace)
