"""Branch dynamics: Bell-type transition rates, discrete kernels and trajectory sampling.

Branches are the Schmidt products ``|Psi_i> = |psi_i> (x) |psi'_i>``.  These
products are independent of the phase freedom of the SVD, so overlaps
between branches at different times are well defined whenever the spectrum
is nondegenerate.

Kernel matrices are stored in native labels: ``matrix[a, j]`` is the
probability of moving from branch ``j`` at step ``n`` to branch ``a`` at
step ``n + 1``.  :attr:`TransitionKernel.aligned` re-expresses it in the
step-``n`` labels through the matching permutation.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateSpectrumError, InfeasibleStepError, NumericalError, ValidationError
from .linalg import (
    DEFAULT_DEGENERACY_TOL,
    BipartiteState,
    SchmidtDecomposition,
    check_unitary,
    schmidt_decompose,
)

log = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-10
CONSISTENCY_TOL = 1e-8
MASK64 = (1 << 64) - 1
WORKERS_ENV = "MODALSIM_WORKERS"


@dataclass(frozen=True, eq=False)
class BranchFrame:
    time: float
    schmidt: SchmidtDecomposition
    probabilities: np.ndarray = field(default=None)

    def __post_init__(self):
        expected = self.schmidt.probabilities
        if self.probabilities is None:
            object.__setattr__(self, "probabilities", expected)
        elif np.max(np.abs(np.asarray(self.probabilities) - expected)) > 1e-12:
            raise ValidationError("frame probabilities disagree with the Schmidt coefficients")

    @classmethod
    def from_state(cls, state: BipartiteState, time: float = 0.0, degeneracy_tolerance=DEFAULT_DEGENERACY_TOL):
        return cls(time, schmidt_decompose(state, degeneracy_tolerance))

    @property
    def n_branches(self) -> int:
        return self.schmidt.rank

    def branch_states(self) -> np.ndarray:
        return self.schmidt.branch_states()


# -- continuous time --------------------------------------------------------


def _align_to(reference: np.ndarray, moved: np.ndarray) -> np.ndarray:
    """Reorder and re-sign columns of ``moved`` to follow ``reference``."""
    ov = reference.conj().T @ moved
    rows, cols = linear_sum_assignment(np.abs(ov), maximize=True)
    out = moved[:, cols[np.argsort(rows)]].copy()
    diag = np.einsum("ij,ij->j", reference.conj(), out)
    phase = np.where(np.abs(diag) > 0, diag / np.where(diag == 0, 1, np.abs(diag)), 1.0)
    return out * phase.conj()


def _check_gaps(probs: np.ndarray, tol: float, t: float) -> None:
    for k in range(len(probs) - 1):
        gap = probs[k] - probs[k + 1]
        if gap < tol and probs[k] > tol:
            raise DegenerateSpectrumError(
                f"Schmidt levels {k} and {k + 1} are degenerate at t={t} (gap {gap:.2e}); "
                "the continuous rates are undefined here, use the discrete engine"
            )


def continuous_j_matrix(
    state_path: Callable[[float], BipartiteState],
    hamiltonian: np.ndarray,
    t: float,
    fd_step: float = 1e-5,
    degeneracy_tolerance: float = DEFAULT_DEGENERACY_TOL,
) -> np.ndarray:
    """Probability currents ``J_ij = 2 sqrt(p_i p_j) Re <Psi_j|(d/dt + iH)|Psi_i>``.

    ``state_path`` must solve the Schrodinger equation for ``hamiltonian``.
    Branch derivatives use central differences of the branch products at
    ``t +- fd_step``, matched to the branches at ``t`` by overlap.  Row sums
    give ``dp_i/dt``.  The returned matrix is the antisymmetric part of the
    differenced estimate; its symmetric part is truncation error.
    """
    centre = schmidt_decompose(state_path(t), degeneracy_tolerance)
    p = centre.probabilities
    _check_gaps(p, degeneracy_tolerance, t)
    psi = centre.branch_states()
    plus = _align_to(psi, schmidt_decompose(state_path(t + fd_step)).branch_states())
    minus = _align_to(psi, schmidt_decompose(state_path(t - fd_step)).branch_states())
    dpsi = (plus - minus) / (2 * fd_step)
    h = np.asarray(hamiltonian, dtype=complex)
    if h.shape != (psi.shape[0], psi.shape[0]):
        raise ValidationError(f"Hamiltonian shape {h.shape} does not match joint dimension {psi.shape[0]}")
    # entry [j, i] = <Psi_j| (d/dt + iH) |Psi_i>
    amp = psi.conj().T @ (dpsi + 1j * (h @ psi))
    sq = np.sqrt(p)
    raw = 2.0 * np.outer(sq, sq) * amp.T.real
    # the symmetric part is pure differencing error since <Psi_i|Psi_j> is constant
    asym = float(np.max(np.abs(raw + raw.T)))
    if asym > 1e-6 * max(float(np.max(np.abs(raw))), 1e-300):
        log.debug("finite-difference asymmetry %.2e at t=%g", asym, t)
    return 0.5 * (raw - raw.T)


def continuous_rates(J: np.ndarray, p: np.ndarray) -> np.ndarray:
    """One-way rates ``T_ij = max(J_ij, 0) / p_j``."""
    J = np.asarray(J, dtype=float)
    p = np.asarray(p, dtype=float)
    pos = np.maximum(J, 0.0)
    np.fill_diagonal(pos, 0.0)
    empty = p <= 0
    if np.any(pos[:, empty] > 0):
        cols = np.flatnonzero(empty & np.any(pos > 0, axis=0)).tolist()
        raise ValidationError(f"positive current out of zero-probability branches {cols}; rate undefined")
    out = np.zeros_like(pos)
    out[:, ~empty] = pos[:, ~empty] / p[~empty]
    return out


# -- discrete time ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Matching:
    permutation: np.ndarray
    scores: np.ndarray

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.permutation == np.arange(len(self.permutation))))

    @property
    def margin(self) -> float:
        """Score of the chosen matching minus the best alternative with one pair swapped."""
        chosen = self.scores[self.permutation, np.arange(len(self.permutation))].sum()
        best_other = -np.inf
        n = len(self.permutation)
        for a in range(n):
            for b in range(a + 1, n):
                perm = self.permutation.copy()
                perm[[a, b]] = perm[[b, a]]
                best_other = max(best_other, self.scores[perm, np.arange(n)].sum())
        return float(chosen - best_other) if n > 1 else float(chosen)


def branch_overlaps(prev: BranchFrame, next: BranchFrame, u_step: np.ndarray) -> np.ndarray:
    """``<Psi'_a| U |Psi_j>`` with ``a`` over next-frame branches and ``j`` over previous ones."""
    u = check_unitary(u_step)
    return next.branch_states().conj().T @ (u @ prev.branch_states())


def match_branches(prev: BranchFrame, next: BranchFrame, u_step: np.ndarray) -> Matching:
    """Maximum-weight perfect matching on ``|Re <Psi'_a|U|Psi_j>|``.

    ``permutation[j]`` is the next-step label assigned to previous label ``j``.
    """
    if prev.n_branches != next.n_branches:
        raise ValidationError(f"frames have {prev.n_branches} and {next.n_branches} branches")
    scores = np.abs(branch_overlaps(prev, next, u_step).real)
    if not np.any(scores > 0):
        raise NumericalError("all branch overlaps vanish; the step is too large to relate the frames")
    rows, cols = linear_sum_assignment(scores, maximize=True)
    perm = np.empty(len(cols), dtype=int)
    perm[cols] = rows
    return Matching(perm, scores)


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Column-stochastic step kernel in native labels (``matrix[next, prev]``)."""

    step_index: int
    matrix: np.ndarray
    matching: np.ndarray
    j_matrix: np.ndarray
    residual: float = 0.0
    clamped_mass: float = 0.0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValidationError("kernel matrix must be 2D")
        if np.any(m < -STOCHASTIC_TOL):
            raise ValidationError(f"kernel has negative entries (min {m.min():.3e})")
        sums = m.sum(axis=0)
        if np.max(np.abs(sums - 1.0), initial=0.0) > STOCHASTIC_TOL:
            raise ValidationError(f"kernel columns do not sum to 1 (max deviation {np.max(np.abs(sums - 1)):.3e})")
        m = np.clip(m, 0.0, None)
        for name, value in (("matrix", m), ("matching", np.asarray(self.matching, dtype=int)),
                            ("j_matrix", np.asarray(self.j_matrix, dtype=float))):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def aligned(self) -> np.ndarray:
        """``p_ij`` with both indices in step-``n`` labels."""
        return self.matrix[self.matching, :]

    def apply(self, probs) -> np.ndarray:
        return self.matrix @ np.asarray(probs, dtype=float)

    def to_json(self) -> str:
        return json.dumps(
            {
                "step_index": self.step_index,
                "matrix": self.matrix.tolist(),
                "matching": self.matching.tolist(),
                "j_matrix": self.j_matrix.tolist(),
                "residual": self.residual,
                "clamped_mass": self.clamped_mass,
            }
        )


def kernel_from_currents(
    J: np.ndarray,
    p_prev: np.ndarray,
    matching: np.ndarray | None = None,
    step_index: int = 0,
    repair: bool = False,
    p_next: np.ndarray | None = None,
) -> TransitionKernel:
    """One-way kernel from an antisymmetric current matrix in aligned labels."""
    J = np.asarray(J, dtype=float)
    p = np.asarray(p_prev, dtype=float)
    n = len(p)
    perm = np.arange(n) if matching is None else np.asarray(matching, dtype=int)
    aligned = np.zeros((n, n))
    live = p > 0
    pos = np.maximum(J, 0.0)
    np.fill_diagonal(pos, 0.0)
    aligned[:, live] = pos[:, live] / p[live]
    diag = 1.0 - aligned.sum(axis=0)
    clamped = 0.0
    bad = np.flatnonzero(diag < -STOCHASTIC_TOL)
    if bad.size:
        if not repair:
            raise InfeasibleStepError(
                f"step {step_index}: negative stay probabilities {diag[bad]} for branches {bad.tolist()}; "
                "halve the time step or enable repair",
                diagonal=diag.copy(),
            )
        for j in bad:
            clamped += -diag[j]
            aligned[:, j] /= aligned[:, j].sum()
            diag[j] = 0.0
        log.warning("step %d: repaired infeasible columns %s, clamped mass %.3e", step_index, bad.tolist(), clamped)
    np.fill_diagonal(aligned, np.clip(diag, 0.0, None))
    native = np.zeros_like(aligned)
    native[perm, :] = aligned
    residual = 0.0
    if p_next is not None:
        residual = float(np.max(np.abs(native @ p - np.asarray(p_next))))
        if residual > CONSISTENCY_TOL and not clamped:
            log.warning("step %d: kernel reproduces next probabilities only to %.2e", step_index, residual)
    return TransitionKernel(step_index, native, perm, J, residual, clamped)


def discrete_kernel(
    prev: BranchFrame,
    next: BranchFrame,
    u_step: np.ndarray,
    matching: Matching | np.ndarray | None = None,
    step_index: int = 0,
    repair: bool = False,
) -> TransitionKernel:
    """Finite-step kernel from ``V_ij = Re[sqrt(p'_i p_j) <Psi'_i|U|Psi_j>]``.

    ``J = V - V^T`` in aligned labels, off-diagonal ``p_ij = max(J_ij, 0)/p_j``
    and the diagonal completes each column.  ``u_step`` should map the
    previous joint state onto the next one; the residual of
    ``sum_j p_ij p_j = p'_i`` is recorded on the kernel.
    """
    if matching is None:
        matching = match_branches(prev, next, u_step)
    perm = matching.permutation if isinstance(matching, Matching) else np.asarray(matching, dtype=int)
    ov = branch_overlaps(prev, next, u_step)[perm, :]
    sq_next = np.sqrt(next.probabilities[perm])
    sq_prev = np.sqrt(prev.probabilities)
    V = (np.outer(sq_next, sq_prev) * ov).real
    J = V - V.T
    return kernel_from_currents(J, prev.probabilities, perm, step_index, repair, next.probabilities)


def kernels_from_frames(
    frames: Sequence[BranchFrame], unitaries: Sequence[np.ndarray], repair: bool = False
) -> list[TransitionKernel]:
    if len(unitaries) != len(frames) - 1:
        raise ValidationError("need one step unitary between each pair of frames")
    return [
        discrete_kernel(frames[n], frames[n + 1], unitaries[n], step_index=n, repair=repair)
        for n in range(len(unitaries))
    ]


# -- sampling --------------------------------------------------------------


def splitmix64(k: int) -> int:
    z = (k + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trajectory_seed(base_seed: int, k: int) -> int:
    """Seed of trajectory ``k``: ``base_seed XOR splitmix64(k)``."""
    return (int(base_seed) ^ splitmix64(k)) & MASK64


def trajectory_uniforms(seed: int, n: int) -> np.ndarray:
    """``n`` uniforms from a Philox stream keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(seed)).random(n)


@dataclass(frozen=True)
class BranchHistory:
    records: tuple[tuple[int, int], ...]
    rng_seed: int

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.records], dtype=int)

    @property
    def n_transitions(self) -> int:
        lab = self.labels
        return int(np.count_nonzero(lab[1:] != lab[:-1]))


def _check_chain(kernels: Sequence[TransitionKernel], initial_probs) -> np.ndarray:
    p = np.asarray(initial_probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
        raise ValidationError("initial probabilities must be a distribution")
    width = len(p)
    for k in kernels:
        if k.matrix.shape[1] != width:
            raise ValidationError(f"kernel {k.step_index} expects {k.matrix.shape[1]} branches, chain has {width}")
        width = k.matrix.shape[0]
    return p


def _inverse_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(weights > 0)
    cdf = np.cumsum(weights[idx])
    pick = np.searchsorted(cdf, u * cdf[-1], side="right")
    return idx[np.minimum(pick, len(idx) - 1)]


def _sample_paths(kernels: Sequence[TransitionKernel], p0: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    n_traj = uniforms.shape[0]
    paths = np.empty((n_traj, len(kernels) + 1), dtype=np.int64)
    if n_traj == 0:
        return paths
    paths[:, 0] = _inverse_cdf(p0, uniforms[:, 0])
    for n, kern in enumerate(kernels):
        cur = paths[:, n]
        nxt = np.empty_like(cur)
        for label in np.unique(cur):
            sel = cur == label
            nxt[sel] = _inverse_cdf(kern.matrix[:, label], uniforms[sel, n + 1])
        paths[:, n + 1] = nxt
    return paths


def sample_history(kernels: Sequence[TransitionKernel], initial_probs, seed: int) -> BranchHistory:
    """One trajectory; uses the Philox stream keyed directly by ``seed``."""
    p0 = _check_chain(kernels, initial_probs)
    u = trajectory_uniforms(int(seed) & MASK64, len(kernels) + 1)[None, :]
    path = _sample_paths(kernels, p0, u)[0]
    return BranchHistory(tuple((n, int(b)) for n, b in enumerate(path)), int(seed) & MASK64)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValidationError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValidationError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass(frozen=True, eq=False)
class Ensemble:
    occupancy: np.ndarray
    paths: np.ndarray | None
    base_seed: int

    @property
    def n_trajectories(self) -> int:
        return int(self.occupancy[0].sum()) if len(self.occupancy) else 0


def run_ensemble(
    kernels: Sequence[TransitionKernel],
    initial_probs,
    n_traj: int,
    base_seed: int,
    keep_paths: bool = False,
    workers: int | None = None,
    chunk_size: int = 4096,
) -> Ensemble:
    """Sample ``n_traj`` histories with per-trajectory RNG streams.

    Trajectory ``k`` draws its uniforms from Philox keyed by
    :func:`trajectory_seed`, so it equals ``sample_history(kernels, p0,
    trajectory_seed(base_seed, k))`` and results do not depend on how
    trajectories are spread over workers.
    """
    p0 = _check_chain(kernels, initial_probs)
    if n_traj < 0:
        raise ValidationError("n_traj must be non-negative")
    widths = [len(p0)] + [k.matrix.shape[0] for k in kernels]
    n_steps = len(kernels)
    workers = worker_count() if workers is None else workers

    def run_chunk(start: int, stop: int) -> np.ndarray:
        u = np.empty((stop - start, n_steps + 1))
        for row, k in enumerate(range(start, stop)):
            u[row] = trajectory_uniforms(trajectory_seed(base_seed, k), n_steps + 1)
        return _sample_paths(kernels, p0, u)

    bounds = [(s, min(s + chunk_size, n_traj)) for s in range(0, n_traj, chunk_size)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        chunks = [run_chunk(*b) for b in bounds]
    paths = np.concatenate(chunks) if chunks else np.empty((0, n_steps + 1), dtype=np.int64)
    occ = np.zeros((n_steps + 1, max(widths)), dtype=np.int64)
    for n in range(n_steps + 1):
        occ[n, : widths[n]] = np.bincount(paths[:, n], minlength=widths[n])
    return Ensemble(occ, paths if keep_paths else None, int(base_seed))


def histories(ensemble: Ensemble) -> list[BranchHistory]:
    if ensemble.paths is None:
        raise ValidationError("ensemble was run without keep_paths")
    return [
        BranchHistory(tuple((n, int(b)) for n, b in enumerate(row)), trajectory_seed(ensemble.base_seed, k))
        for k, row in enumerate(ensemble.paths)
    ]
