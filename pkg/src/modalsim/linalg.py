"""Bipartite states, reduced density matrices and their spectra.

Everything here works on dense, finite-dimensional complex arrays.  Joint
vectors use row-major flattening of the amplitude matrix, so index
``i * dim_b + j`` holds the amplitude of ``|i>_A (x) |j>_B``; this matches
``np.kron(a, b)``.

The module also carries a small exact-arithmetic path
(:class:`FixedPointMatrix`, :func:`refine_eigenvalues`) for resolving
eigenvalues far below double-precision round-off of the largest one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import mpmath
import numpy as np

from .errors import (
    NotHermitianError,
    NotNormalizedError,
    NotUnitaryError,
    ValidationError,
)

NORM_TOL = 1e-8
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-10
UNITARY_TOL = 1e-10
DEFAULT_DEGENERACY_TOL = 1e-9

Side = Literal["A", "A_prime"]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BipartiteState:
    """Pure state of A (x) A' stored as a ``dim_a x dim_b`` amplitude matrix."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.ndim != 2 or 0 in amps.shape:
            raise ValidationError(f"amplitudes must be a non-empty matrix, got shape {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValidationError("amplitudes contain non-finite values")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @classmethod
    def from_vector(cls, vector, dim_a: int, dim_b: int) -> "BipartiteState":
        vec = np.asarray(vector, dtype=complex)
        if vec.size != dim_a * dim_b:
            raise ValidationError(f"vector of length {vec.size} does not factor as {dim_a}x{dim_b}")
        return cls(vec.reshape(dim_a, dim_b))

    @classmethod
    def product(cls, a, b) -> "BipartiteState":
        return cls(np.outer(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)))

    @property
    def dim_a(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def dim_b(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "BipartiteState":
        n = self.norm
        if n == 0.0:
            raise NotNormalizedError("cannot normalize the zero state")
        return BipartiteState(self.amplitudes / n)

    def check_normalized(self, tol: float = NORM_TOL) -> None:
        deviation = abs(self.norm - 1.0)
        if deviation > tol:
            raise NotNormalizedError(f"state norm deviates from 1 by {deviation:.3e} (tolerance {tol:.0e})")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace matrix.  Positivity is checked on diagonalization."""

    entries: np.ndarray

    def __post_init__(self):
        rho = np.array(self.entries, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] == 0:
            raise ValidationError(f"density matrix must be square, got shape {rho.shape}")
        asym = float(np.max(np.abs(rho - rho.conj().T)))
        if asym > HERMITIAN_TOL:
            raise NotHermitianError(f"max |rho_ij - conj(rho_ji)| = {asym:.3e} exceeds {HERMITIAN_TOL:.0e}")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise NotNormalizedError(f"trace {tr!r} deviates from 1 by more than {TRACE_TOL:.0e}")
        rho = 0.5 * (rho + rho.conj().T)
        object.__setattr__(self, "entries", _frozen(rho))

    @classmethod
    def from_unnormalized(cls, matrix) -> "DensityMatrix":
        m = np.asarray(matrix, dtype=complex)
        return cls(m / np.trace(m).real)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    probabilities: np.ndarray
    vectors: np.ndarray
    degeneracy_tolerance: float
    clusters: tuple[tuple[int, ...], ...] = ()

    def reconstruct(self) -> np.ndarray:
        v = self.vectors
        return (v * self.probabilities) @ v.conj().T

    @property
    def has_degeneracy(self) -> bool:
        return bool(self.clusters)


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    coefficients: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    degeneracy_tolerance: float = DEFAULT_DEGENERACY_TOL
    clusters: tuple[tuple[int, ...], ...] = ()

    @property
    def probabilities(self) -> np.ndarray:
        return self.coefficients**2

    @property
    def rank(self) -> int:
        return len(self.coefficients)

    def branch_states(self) -> np.ndarray:
        """Columns |Psi_i> = |psi_i> (x) |psi'_i> in the joint space."""
        L, R = self.left_vectors, self.right_vectors
        return (L[:, None, :] * R[None, :, :]).reshape(L.shape[0] * R.shape[0], -1)

    def reconstruct(self) -> BipartiteState:
        amps = (self.left_vectors * self.coefficients) @ self.right_vectors.T
        return BipartiteState(amps)


def _phase_fix(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate each column so its largest-magnitude entry is real positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    phases = np.where(np.abs(pivots) > 0, pivots / np.where(pivots == 0, 1, np.abs(pivots)), 1.0)
    fixed = vectors * phases.conj()
    fixed[idx, np.arange(vectors.shape[1])] = np.abs(pivots)
    return fixed, phases


def _clusters(values: np.ndarray, tol: float) -> list[list[int]]:
    groups: list[list[int]] = [[0]] if len(values) else []
    for k in range(1, len(values)):
        if abs(values[k - 1] - values[k]) < tol:
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def _lex_key(vec: np.ndarray) -> tuple:
    parts = np.round(np.stack([vec.real, vec.imag], axis=1), 12).ravel()
    return tuple(-parts)


def _order_within_clusters(values, vectors, tol):
    order = []
    groups = _clusters(values, tol)
    for g in groups:
        if len(g) == 1:
            order.extend(g)
        else:
            order.extend(sorted(g, key=lambda k: _lex_key(vectors[:, k])))
    clusters = tuple(tuple(range(g[0], g[0] + len(g))) for g in groups if len(g) > 1)
    return np.array(order, dtype=int), clusters


def reduced_density_matrix(state: BipartiteState, side: Side = "A") -> DensityMatrix:
    """Partial trace of ``|Psi><Psi|`` over the complement of ``side``."""
    state.check_normalized()
    psi = state.amplitudes
    if side == "A":
        rho = psi @ psi.conj().T
    elif side == "A_prime":
        rho = psi.T @ psi.conj()
    else:
        raise ValidationError(f"side must be 'A' or 'A_prime', got {side!r}")
    return DensityMatrix.from_unnormalized(rho)


def eigen_decompose(
    rho: DensityMatrix | np.ndarray,
    degeneracy_tolerance: float = DEFAULT_DEGENERACY_TOL,
) -> SpectralDecomposition:
    """Sorted, phase-fixed eigendecomposition of a density matrix.

    Probabilities come out in descending order.  Each eigenvector has its
    largest-magnitude entry made real and positive.  Runs of eigenvalues
    closer than ``degeneracy_tolerance`` are reported in ``clusters``; inside
    a cluster the basis is whatever LAPACK returned, ordered
    lexicographically so that the output is reproducible.
    """
    if not isinstance(rho, DensityMatrix):
        rho = DensityMatrix(rho)
    values, vectors = np.linalg.eigh(rho.entries)
    if values[0] < -PSD_TOL:
        raise ValidationError(f"density matrix is not positive semidefinite: eigenvalue {values[0]:.3e}")
    values = values[::-1].copy()
    vectors, _ = _phase_fix(vectors[:, ::-1])
    order, clusters = _order_within_clusters(values, vectors, degeneracy_tolerance)
    return SpectralDecomposition(
        probabilities=_frozen(values[order]),
        vectors=_frozen(vectors[:, order]),
        degeneracy_tolerance=degeneracy_tolerance,
        clusters=clusters,
    )


def schmidt_decompose(
    state: BipartiteState, degeneracy_tolerance: float = DEFAULT_DEGENERACY_TOL
) -> SchmidtDecomposition:
    """Schmidt form via SVD of the amplitude matrix.

    All ``min(dim_a, dim_b)`` terms are kept, including zero coefficients.
    The left vector of every pair is phase-fixed and the right vector takes
    the conjugate phase, so each product ``|psi_i>(x)|psi'_i>`` is unchanged.
    """
    state.check_normalized()
    u, s, vh = np.linalg.svd(state.amplitudes, full_matrices=False)
    left, phases = _phase_fix(u)
    right = vh.T * phases
    probs = s**2
    order, clusters = _order_within_clusters(probs, left, degeneracy_tolerance)
    return SchmidtDecomposition(
        coefficients=_frozen(s[order].copy()),
        left_vectors=_frozen(left[:, order]),
        right_vectors=_frozen(right[:, order]),
        degeneracy_tolerance=degeneracy_tolerance,
        clusters=clusters,
    )


def check_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise NotUnitaryError(f"expected a square matrix, got shape {u.shape}")
    dev = float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
    if dev > tol:
        raise NotUnitaryError(f"max |U^dag U - 1| = {dev:.3e} exceeds {tol:.0e}")
    return u


def apply_unitary(state: BipartiteState, u: np.ndarray, tol: float = UNITARY_TOL) -> BipartiteState:
    u = check_unitary(u, tol)
    if u.shape[0] != state.dim_a * state.dim_b:
        raise ValidationError(
            f"unitary of size {u.shape[0]} does not act on a {state.dim_a}x{state.dim_b} state"
        )
    return BipartiteState.from_vector(u @ state.vector, state.dim_a, state.dim_b)


def minimal_unitary(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Unitary taking unit vector ``source`` to ``target`` and fixing their orthogonal complement."""
    a = np.asarray(source, dtype=complex).ravel()
    b = np.asarray(target, dtype=complex).ravel()
    n = a.size
    c = np.vdot(a, b)
    phase = c / abs(c) if abs(c) > 0 else 1.0
    b_rot = b * np.conj(phase)
    cos = abs(c)
    perp = b_rot - cos * a
    sin = np.linalg.norm(perp)
    if sin < 1e-15:
        return np.eye(n, dtype=complex) + (phase - 1.0) * np.outer(a, a.conj())
    e = np.stack([a, perp / sin], axis=1)
    rot = phase * np.array([[cos, -sin], [sin, cos]])
    return np.eye(n, dtype=complex) + e @ (rot - np.eye(2)) @ e.conj().T


def local_unitary(u_a: np.ndarray, u_b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(u_a, dtype=complex), np.asarray(u_b, dtype=complex))


def random_state(dim_a: int, dim_b: int, rng: np.random.Generator) -> BipartiteState:
    amps = rng.normal(size=(dim_a, dim_b)) + 1j * rng.normal(size=(dim_a, dim_b))
    return BipartiteState(amps).normalized()


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


# -- exact refinement of tiny eigenvalues ---------------------------------


@dataclass(frozen=True)
class FixedPointMatrix:
    """Real symmetric matrix held exactly as Python integers scaled by ``2**bits``.

    Products with it are exact, so eigenvalues many orders of magnitude below
    the largest one can be resolved to full relative precision.
    """

    numerators: np.ndarray = field(repr=False)
    bits: int

    @classmethod
    def from_function(cls, n: int, entry, bits: int = 200) -> "FixedPointMatrix":
        """Build from ``entry(j, k) -> mpf`` evaluated on the upper triangle."""
        scale = mpmath.mpf(2) ** bits
        num = np.empty((n, n), dtype=object)
        for j in range(n):
            for k in range(j, n):
                num[j, k] = num[k, j] = int(mpmath.nint(entry(j, k) * scale))
        return cls(num, bits)

    @classmethod
    def from_toeplitz_product(cls, weights: Sequence, kernel: Sequence, bits: int = 200) -> "FixedPointMatrix":
        """Matrix ``w_j * w_k * K[|j - k|]`` from mpmath-valued ``weights`` and ``kernel``.

        This is the shape of a decohered pure state on a uniform grid and is
        much cheaper than :meth:`from_function` since only ``2n`` values are
        evaluated in high precision.
        """
        scale = mpmath.mpf(2) ** bits
        w = np.array([int(mpmath.nint(v * scale)) for v in weights], dtype=object)
        k = np.array([int(mpmath.nint(v * scale)) for v in kernel], dtype=object)
        n = len(w)
        if len(k) < n:
            raise ValidationError(f"kernel needs {n} lags, got {len(k)}")
        lags = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
        prod = np.outer(w, w) * k[lags]
        shift = 2 * bits
        num = np.frompyfunc(lambda z: z >> shift, 1, 1)(prod).astype(object)
        return cls(num, bits)

    @property
    def size(self) -> int:
        return self.numerators.shape[0]

    def trace(self) -> mpmath.mpf:
        return mpmath.mpf(int(sum(self.numerators.diagonal()))) / mpmath.mpf(2) ** self.bits

    def to_float(self) -> np.ndarray:
        return np.vectorize(lambda z: float(mpmath.mpf(z) / mpmath.mpf(2) ** self.bits))(self.numerators)


def _column_to_fixed(column: np.ndarray, bits: int) -> np.ndarray:
    return np.array([int(round(float(v) * 2.0**52)) << (bits - 52) for v in column], dtype=object)


def _rescale_columns(block: np.ndarray, bits: int) -> np.ndarray:
    """Shift each integer column so its largest entry has about ``bits`` bits."""
    out = np.empty_like(block)
    for c in range(block.shape[1]):
        top = max(abs(int(z)) for z in block[:, c]).bit_length()
        shift = top - bits
        col = block[:, c]
        out[:, c] = [z >> shift for z in col] if shift > 0 else [z << -shift for z in col]
    return out


def refine_eigenvalues(
    matrix: FixedPointMatrix,
    guess_vectors: np.ndarray,
    n_iter: int = 1,
    dps: int = 50,
) -> np.ndarray:
    """Rayleigh-Ritz refinement of leading eigenvalues in exact arithmetic.

    ``guess_vectors`` are real approximate eigenvectors for the top ``k``
    eigenvalues (e.g. from :func:`eigen_decompose` on the rounded matrix).
    The subspace is pushed through the exact matrix ``n_iter`` times, then
    the projected pencil ``(Q^T A Q, Q^T Q)`` is formed with integer
    products and solved at ``dps`` digits.  Values are returned in
    descending order on the matrix's own scale (divide by the trace for
    probabilities).

    Each iteration shrinks the error of level ``n`` by about
    ``lambda_{k+1} / lambda_n``, so ``k`` should exceed the number of wanted
    levels by a few.
    """
    q = np.asarray(guess_vectors)
    if np.iscomplexobj(q):
        if np.max(np.abs(q.imag)) > 1e-8:
            raise ValidationError("refine_eigenvalues only supports real symmetric problems")
        q = q.real
    n, k = q.shape
    if n != matrix.size:
        raise ValidationError(f"guess vectors have length {n}, matrix has size {matrix.size}")
    bits = matrix.bits
    basis = np.stack([_column_to_fixed(q[:, c], bits) for c in range(k)], axis=1)
    for _ in range(n_iter):
        basis = _rescale_columns(matrix.numerators.dot(basis), bits)
    image = matrix.numerators.dot(basis)
    a_int = basis.T.dot(image)
    b_int = basis.T.dot(basis)
    with mpmath.workdps(dps):
        unit = mpmath.mpf(2) ** bits
        a = mpmath.matrix(k, k)
        b = mpmath.matrix(k, k)
        for i in range(k):
            for j in range(k):
                a[i, j] = mpmath.mpf(int(a_int[i, j] + a_int[j, i])) / (2 * unit)
                b[i, j] = mpmath.mpf(int(b_int[i, j]))
        # Whiten with the eigenbasis of the Gram matrix, dropping directions the
        # iteration has collapsed (rank-deficient operators do this).
        b_vals, b_vecs = mpmath.eigsy(b)
        cutoff = max(b_vals[i] for i in range(k)) * mpmath.mpf(10) ** (-(dps - 10))
        keep = [i for i in range(k) if b_vals[i] > cutoff]
        whiten = mpmath.matrix(k, len(keep))
        for c, i in enumerate(keep):
            for r in range(k):
                whiten[r, c] = b_vecs[r, i] / mpmath.sqrt(b_vals[i])
        reduced = whiten.T * a * whiten
        reduced = (reduced + reduced.T) / 2
        evals = mpmath.eigsy(reduced, eigvals_only=True)
        out = sorted((evals[i] for i in range(len(keep))), reverse=True)
        out += [mpmath.mpf(0)] * (k - len(keep))
        return np.array([float(v) for v in out])
