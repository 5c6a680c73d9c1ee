"""Particle models on a 1D lattice: Gaussian decoherence, localization, spin baths."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import NotNormalizedError, ValidationError
from .linalg import DensityMatrix

log = logging.getLogger(__name__)

WAVEFUNCTION_NORM_TOL = 1e-10


@dataclass(frozen=True)
class LatticeGrid:
    """Uniform grid ``x_j = origin + j * epsilon`` for ``j = 0 .. n_sites - 1``."""

    epsilon: float
    n_sites: int
    origin: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be positive and finite, got {self.epsilon}")
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ValidationError(f"n_sites must be a positive integer, got {self.n_sites}")

    @classmethod
    def spanning(cls, lo: float, hi: float, n_sites: int) -> "LatticeGrid":
        """Grid whose first and last sites sit exactly on ``lo`` and ``hi``."""
        return cls((hi - lo) / (n_sites - 1), n_sites, lo)

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.epsilon * np.arange(self.n_sites)

    @property
    def span(self) -> float:
        return self.epsilon * (self.n_sites - 1)


@dataclass(frozen=True, eq=False)
class LatticeWaveFunction:
    """Sampled wave function with ``epsilon * sum |psi_j|^2 = 1``."""

    grid: LatticeGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.grid.n_sites,):
            raise ValidationError(f"expected {self.grid.n_sites} amplitudes, got shape {amps.shape}")
        norm = self.grid.epsilon * float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > WAVEFUNCTION_NORM_TOL:
            raise NotNormalizedError(f"epsilon * sum |psi|^2 = {norm!r}, expected 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_samples(cls, grid: LatticeGrid, samples) -> "LatticeWaveFunction":
        samples = np.asarray(samples, dtype=complex)
        norm = grid.epsilon * np.sum(np.abs(samples) ** 2)
        if norm == 0:
            raise ValidationError("wave function vanishes on every site")
        return cls(grid, samples / np.sqrt(norm))

    @classmethod
    def from_profile(cls, grid: LatticeGrid, profile: Callable[[np.ndarray], np.ndarray]) -> "LatticeWaveFunction":
        return cls.from_samples(grid, profile(grid.x))

    @classmethod
    def gaussian(cls, grid: LatticeGrid, center: float = 0.0, sigma: float = 1.0, k0: float = 0.0):
        """Packet with ``|psi|^2`` of standard deviation ``sigma``."""
        return cls.from_profile(
            grid, lambda x: np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * k0 * x)
        )

    @classmethod
    def uniform(cls, grid: LatticeGrid) -> "LatticeWaveFunction":
        return cls.from_samples(grid, np.ones(grid.n_sites))

    @property
    def site_probabilities(self) -> np.ndarray:
        return self.grid.epsilon * np.abs(self.amplitudes) ** 2


def _check_ell(ell: float, ell_min: float) -> float:
    if not ell > 0:
        raise ValidationError(f"coherence length must be positive, got {ell}")
    if ell < ell_min:
        log.warning("coherence length %g below floor %g; clamping", ell, ell_min)
        return ell_min
    return ell


def gaussian_kernel(grid: LatticeGrid, ell: float) -> np.ndarray:
    d = grid.x[:, None] - grid.x[None, :]
    if math.isinf(ell):
        return np.ones_like(d)
    return np.exp(-((d / ell) ** 2))


def image_sum_kernel(grid: LatticeGrid, ell: float, lo: float, hi: float, tol: float = 1e-14) -> np.ndarray:
    """Gaussian kernel for a box ``[lo, hi]`` with Dirichlet walls, built from images.

    ``K(x, y) = sum_n [g(x - y + 2nL) - g(x + y - 2 lo + 2nL)]`` with
    ``g(s) = exp(-s^2 / ell^2)`` and ``L = hi - lo``.  The kernel is
    periodic with period ``2L`` in each argument and odd about each wall, so
    ``sin(pi m (x - lo) / L)`` diagonalizes it.  Images are added until the
    next one contributes less than ``tol``.
    """
    ell = _check_ell(ell, 0.0)
    width = hi - lo
    if not width > 0:
        raise ValidationError("box must have positive width")
    u = grid.x - lo
    diff = u[:, None] - u[None, :]
    summ = u[:, None] + u[None, :]
    kernel = np.exp(-((diff / ell) ** 2)) - np.exp(-((summ / ell) ** 2))
    n = 1
    while True:
        shift = 2 * n * width
        # nearest distance any image in this shell can reach
        closest = shift - 2 * width
        if n > 1 and math.exp(-((max(closest, 0.0) / ell) ** 2)) < tol:
            break
        for s in (shift, -shift):
            kernel += np.exp(-(((diff + s) / ell) ** 2)) - np.exp(-(((summ + s) / ell) ** 2))
        n += 1
    return kernel


def decohered_rho(psi: LatticeWaveFunction, kernel: np.ndarray) -> DensityMatrix:
    """``rho_jk = epsilon psi_j conj(psi_k) K_jk``, trace-normalized if the kernel diagonal is not 1."""
    amps = psi.amplitudes
    rho = psi.grid.epsilon * np.outer(amps, amps.conj()) * kernel
    return DensityMatrix.from_unnormalized(rho)


def gaussian_decohered_rho(psi: LatticeWaveFunction, ell: float, ell_min: float = 0.0) -> DensityMatrix:
    """Density matrix with off-diagonals damped by ``exp(-(x_j - x_k)^2 / ell^2)``.

    The diagonal is ``epsilon |psi_j|^2`` exactly, so the trace is already 1.
    Coherence lengths below ``ell_min`` are clamped (with a warning), modelling
    the breakdown of the Gaussian law at the thermal wavelength.
    """
    ell = _check_ell(ell, ell_min)
    amps = psi.amplitudes
    rho = psi.grid.epsilon * np.outer(amps, amps.conj()) * gaussian_kernel(psi.grid, ell)
    return DensityMatrix(rho)


def coherence_length(t: float, ell_prefactor: float) -> float:
    """Power law ``ell = prefactor * t**-1/2``."""
    if not t > 0:
        raise ValidationError(f"time must be positive, got {t}")
    return ell_prefactor / math.sqrt(t)


def localization_length(vector, epsilon: float) -> float:
    """Inverse participation ratio of a unit vector, in units of length."""
    v = np.asarray(vector)
    norm_sq = float(np.sum(np.abs(v) ** 2))
    if norm_sq == 0.0:
        raise ValidationError("localization length of the zero vector is undefined")
    if abs(norm_sq - 1.0) > 1e-8:
        raise NotNormalizedError(f"vector has squared norm {norm_sq!r}")
    return epsilon / float(np.sum(np.abs(v) ** 4))


def coarse_grained_probabilities(psi: LatticeWaveFunction, block: int) -> np.ndarray:
    """Probabilities of consecutive blocks of ``block`` sites.

    Site ``j`` stands for the cell ``[x_j - eps/2, x_j + eps/2]``.  A ragged
    final block is padded with zero-amplitude sites.
    """
    if int(block) != block or block < 1:
        raise ValidationError(f"block must be a positive integer, got {block}")
    site = psi.site_probabilities
    pad = (-len(site)) % block
    if pad:
        site = np.concatenate([site, np.zeros(pad)])
    return site.reshape(-1, block).sum(axis=1)


@dataclass(frozen=True, eq=False)
class SpinBath:
    """Environment of ``N`` spins coupled to particle position with strengths ``g_a``."""

    couplings: np.ndarray
    lambda_sq: float = field(init=False)

    def __post_init__(self):
        g = np.array(self.couplings, dtype=float).ravel()
        if g.size < 1:
            raise ValidationError("spin bath needs at least one spin")
        if not np.all(np.isfinite(g)):
            raise ValidationError("couplings must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "couplings", g)
        object.__setattr__(self, "lambda_sq", float(2.0 * np.sum(g**2) / g.size))

    @classmethod
    def uniform(cls, n: int, low: float, high: float, rng: np.random.Generator) -> "SpinBath":
        return cls(rng.uniform(low, high, size=n))

    @property
    def n(self) -> int:
        return self.couplings.size


class BathOverlap(NamedTuple):
    exact: float
    gaussian: float


def spin_bath_overlap(bath: SpinBath, t: float, dx: float) -> BathOverlap:
    """Environment overlap for two positions ``dx`` apart after time ``t``."""
    exact = float(np.prod(np.cos(2.0 * bath.couplings * dx * t)))
    approx = math.exp(-bath.n * bath.lambda_sq * t**2 * dx**2)
    return BathOverlap(exact, approx)
