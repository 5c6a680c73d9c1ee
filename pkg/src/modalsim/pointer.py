"""Measurement-device models built from pointer-state overlaps.

Pointer states are never modelled microscopically.  A family is defined by
its (log) overlap schedule, and concrete vectors with exactly that Gram
matrix are produced by pivoted Cholesky factorization.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import GramIndefiniteError, NotNormalizedError, ValidationError
from .linalg import BipartiteState, DensityMatrix, reduced_density_matrix

GRAM_PSD_TOL = 1e-10
UNDERFLOW_EXPONENT = -700.0
BLOCK_NORM_TOL = 1e-10

LogOverlap = Callable[[int, int, float], complex]


class PointerOverlap(NamedTuple):
    value: float
    log_value: float


def pointer_overlap(n_constituents: int, distance: float, resolution: float) -> PointerOverlap:
    """Overlap ``exp(-N X^2 / eps^2)`` of two device states a distance ``X`` apart.

    The exponent is returned alongside the value, which underflows to 0 for
    any macroscopic configuration.
    """
    if not resolution > 0:
        raise ValidationError(f"resolution must be positive, got {resolution}")
    if n_constituents < 1:
        raise ValidationError(f"need at least one constituent, got {n_constituents}")
    if distance < 0:
        raise ValidationError(f"distance must be non-negative, got {distance}")
    expo = -n_constituents * distance**2 / resolution**2
    return PointerOverlap(math.exp(expo) if expo > UNDERFLOW_EXPONENT else 0.0, expo)


def collapse_time(T: float, epsilon: float, X: float, N: int) -> float:
    """Time ``T eps / (X sqrt(N))`` after which pointer overlaps are negligible."""
    for name, v in (("T", T), ("epsilon", epsilon), ("X", X), ("N", N)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")
    return T * epsilon / (X * math.sqrt(N))


def _linear(log_value: complex) -> complex:
    if log_value.real < UNDERFLOW_EXPONENT:
        return 0.0
    return cmath.exp(log_value)


@dataclass(frozen=True)
class PointerFamily:
    """Device states ``|M_j(t)>`` specified through ``log <M_i(t)|M_j(t)>``.

    ``log_overlap(i, j, t)`` returns the complex logarithm of the overlap;
    ``-inf`` real part means exactly orthogonal.
    """

    n_outcomes: int
    log_overlap: LogOverlap = field(repr=False)
    embedding_dim: int | None = None

    def __post_init__(self):
        if self.n_outcomes < 1:
            raise ValidationError("a pointer family needs at least one outcome")
        dim = self.n_outcomes if self.embedding_dim is None else self.embedding_dim
        if dim < self.n_outcomes:
            raise ValidationError(f"embedding_dim {dim} is smaller than n_outcomes {self.n_outcomes}")
        object.__setattr__(self, "embedding_dim", dim)

    @classmethod
    def gaussian_schedule(
        cls,
        positions: Sequence[float],
        n_constituents: int,
        epsilon: float,
        t_rise: float,
        embedding_dim: int | None = None,
    ) -> "PointerFamily":
        """Default schedule ``exp(-(t/t_rise)^2 N (X_i - X_j)^2 / eps^2)``.

        All pointers coincide at ``t = 0`` and the overlaps reach the static
        ``exp(-N X^2 / eps^2)`` floor at ``t = t_rise``, staying there after.
        """
        pos = np.asarray(positions, dtype=float)
        if not (epsilon > 0 and t_rise > 0):
            raise ValidationError("epsilon and t_rise must be positive")

        def log_overlap(i: int, j: int, t: float) -> complex:
            s = min(max(t, 0.0) / t_rise, 1.0)
            return complex(-(s**2) * n_constituents * (pos[i] - pos[j]) ** 2 / epsilon**2)

        return cls(len(pos), log_overlap, embedding_dim)

    @classmethod
    def from_gram(cls, gram_at: Callable[[float], np.ndarray], embedding_dim: int | None = None) -> "PointerFamily":
        """Family from a function returning the linear-domain Gram matrix."""
        n = np.asarray(gram_at(0.0)).shape[0]

        def log_overlap(i: int, j: int, t: float) -> complex:
            g = complex(np.asarray(gram_at(t))[i, j])
            return complex(-math.inf) if g == 0 else cmath.log(g)

        return cls(n, log_overlap, embedding_dim)

    def log_gram(self, t: float) -> np.ndarray:
        n = self.n_outcomes
        out = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                if i != j:
                    out[i, j] = self.log_overlap(i, j, t)
        return out

    def gram(self, t: float) -> np.ndarray:
        logs = self.log_gram(t)
        g = np.vectorize(_linear, otypes=[complex])(logs)
        np.fill_diagonal(g, 1.0)
        return g


def pivoted_cholesky(gram: np.ndarray, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``gram = L L^H`` with diagonal pivoting.

    Pivots follow the largest remaining diagonal, ties to the lowest index.
    Returns ``(L, order)`` where ``L`` is ``n x rank`` in the original index
    order and ``order`` lists the pivots.
    """
    g = np.array(gram, dtype=complex)
    n = g.shape[0]
    resid = g.diagonal().real.copy()
    L = np.zeros((n, n), dtype=complex)
    order: list[int] = []
    remaining = list(range(n))
    scale = max(float(resid.max()), 1.0) if n else 1.0
    for k in range(n):
        cand = max(remaining, key=lambda i: (resid[i], -i))
        if resid[cand] <= tol * scale:
            break
        pivot = math.sqrt(resid[cand])
        col = (g[:, cand] - L[:, :k] @ L[cand, :k].conj()) / pivot
        col[order] = 0.0
        col[cand] = pivot
        L[:, k] = col
        order.append(cand)
        remaining.remove(cand)
        for i in remaining:
            resid[i] -= abs(col[i]) ** 2
    return L[:, : len(order)], np.array(order, dtype=int)


def check_gram(gram: np.ndarray, tol: float = GRAM_PSD_TOL) -> np.ndarray:
    g = np.asarray(gram, dtype=complex)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValidationError(f"Gram matrix must be square, got shape {g.shape}")
    if np.max(np.abs(g - g.conj().T), initial=0.0) > 1e-12:
        raise ValidationError("Gram matrix is not Hermitian")
    if g.shape[0]:
        lowest = float(np.linalg.eigvalsh(g)[0])
        if lowest < -tol:
            raise GramIndefiniteError(lowest)
    return g


def realize_gram(gram: np.ndarray, embedding_dim: int | None = None) -> np.ndarray:
    """Columns ``v_j`` with ``<v_i, v_j> = gram[i, j]``, padded to ``embedding_dim`` rows."""
    g = check_gram(gram)
    L, _ = pivoted_cholesky(g)
    vectors = L.conj().T
    dim = g.shape[0] if embedding_dim is None else embedding_dim
    if vectors.shape[0] > dim:
        raise ValidationError(f"Gram of rank {vectors.shape[0]} does not fit in dimension {dim}")
    out = np.zeros((dim, g.shape[0]), dtype=complex)
    out[: vectors.shape[0]] = vectors
    return out


@dataclass(frozen=True, eq=False)
class PointerStates:
    time: float
    vectors: np.ndarray
    gram: np.ndarray
    log_gram: np.ndarray


def realize_pointer_states(family: PointerFamily, t: float) -> PointerStates:
    log_g = family.log_gram(t)
    g = family.gram(t)
    return PointerStates(t, realize_gram(g, family.embedding_dim), g, log_g)


def measurement_rho(family: PointerFamily, probs, t: float) -> tuple[DensityMatrix, PointerStates]:
    """Device density matrix ``sum_j p_j |M_j(t)><M_j(t)|``.

    It is obtained as the partial trace of ``sum_j sqrt(p_j) |M_j> (x) |psi_j>``
    with orthonormal particle states.
    """
    p = np.asarray(probs, dtype=float)
    if p.shape != (family.n_outcomes,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-10:
        raise ValidationError("probabilities must be a distribution over the outcomes")
    states = realize_pointer_states(family, t)
    amps = states.vectors * np.sqrt(p)
    return reduced_density_matrix(BipartiteState(amps)), states


# -- two-level avoided crossing -------------------------------------------


@dataclass(frozen=True)
class CrossoverParams:
    """Subspace density matrix ``[[p0 + a(t-t0), p0 D], [p0 D*, p0 - a(t-t0)]]``."""

    p0: float
    a: float
    delta: complex
    t0: float = 0.0

    def __post_init__(self):
        if not 0 < self.p0 < 1:
            raise ValidationError(f"p0 must lie in (0, 1), got {self.p0}")
        if self.a == 0:
            raise ValidationError("level velocity a must be nonzero")

    @property
    def switch_time(self) -> float:
        """Width ``|p0 D / a|`` of the window in which the eigenvectors rotate."""
        return abs(self.p0 * self.delta / self.a)


class CrossoverSpectrum(NamedTuple):
    p_plus: float
    p_minus: float
    theta: float
    degenerate_point: bool
    delta_phase: float


def crossover_spectrum(params: CrossoverParams, t: float) -> CrossoverSpectrum:
    """Eigenvalues ``p0 +- sqrt(x^2 + |p0 D|^2)`` and mixing angle ``theta``.

    ``x = a (t - t0)`` and ``tan(theta) = (x + r) / |p0 D|``.  A complex
    overlap is first rotated real-positive; its phase is reported.  For
    ``D = 0`` the levels cross exactly and ``theta`` jumps from 0 to pi/2 at
    ``t0``, where ``degenerate_point`` is set.
    """
    x = params.a * (t - params.t0)
    d = abs(params.p0 * params.delta)
    r = math.hypot(x, d)
    # x + r without cancellation when x < 0
    num = x + r if x >= 0 else (d * d / (r - x) if r - x > 0 else 0.0)
    theta = math.atan2(num, d)
    return CrossoverSpectrum(
        params.p0 + r,
        params.p0 - r,
        theta,
        degenerate_point=(d == 0 and x == 0),
        delta_phase=cmath.phase(params.delta) if params.delta != 0 else 0.0,
    )


def crossover_rho(params: CrossoverParams, t: float) -> np.ndarray:
    """The 3x3 device matrix: the crossing pair plus one spectator level of weight ``1 - 2 p0``."""
    x = params.a * (t - params.t0)
    od = params.p0 * params.delta
    if params.p0 > 0.5:
        raise ValidationError("the spectator level needs p0 <= 1/2")
    return np.array(
        [[params.p0 + x, od, 0], [np.conj(od), params.p0 - x, 0], [0, 0, 1 - 2 * params.p0]],
        dtype=complex,
    )


def crossover_state(params: CrossoverParams, t: float) -> BipartiteState:
    """Purification ``sqrt(rho)`` of :func:`crossover_rho` on device (x) environment.

    Requires ``|a (t - t0)| <= p0 sqrt(1 - |D|^2)`` so that the matrix is
    positive.
    """
    rho = crossover_rho(params, t)
    w, v = np.linalg.eigh(rho)
    if w[0] < -1e-12:
        raise ValidationError(
            f"crossover matrix is not positive at t={t}; |a(t-t0)| exceeds p0 sqrt(1-|D|^2)"
        )
    root = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    return BipartiteState(root).normalized()


# -- environment-split blocks -------------------------------------------------

GramSchedule = Callable[[float], np.ndarray]
WeightSchedule = Callable[[float], np.ndarray]


def _constant(value) -> Callable[[float], np.ndarray]:
    arr = np.asarray(value, dtype=complex)
    return lambda t: arr


@dataclass(frozen=True, eq=False)
class BlockModel:
    """Outcomes ``j`` each split into ``m_j`` device/environment sub-states.

    ``weights[j](t)`` gives ``Z_aj(t)``; ``pointer_grams[j](t)`` and
    ``env_grams[j](t)`` give ``<M_aj|M_bj>`` and ``<E_aj|E_bj>``.
    Pointers of different blocks overlap by ``cross_overlap`` (a constant;
    0 means macroscopically distinct).
    """

    outer_probs: np.ndarray
    weights: tuple
    pointer_grams: tuple
    env_grams: tuple
    cross_overlap: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.outer_probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValidationError("outer probabilities must be a distribution")
        n = len(p)
        for name in ("weights", "pointer_grams", "env_grams"):
            seq = tuple(f if callable(f) else _constant(f) for f in getattr(self, name))
            if len(seq) != n:
                raise ValidationError(f"{name} needs one entry per block ({n}), got {len(seq)}")
            object.__setattr__(self, name, seq)
        object.__setattr__(self, "outer_probs", p)

    @classmethod
    def simple(cls, outer_probs, weights, env_grams=None, pointer_grams=None, cross_overlap=0.0):
        """Constant-in-time model; Gram matrices default to identities."""
        ws = [np.asarray(w, dtype=complex) for w in weights]
        ident = [np.eye(len(w)) for w in ws]
        return cls(
            np.asarray(outer_probs, dtype=float),
            tuple(ws),
            tuple(ident if pointer_grams is None else pointer_grams),
            tuple(ident if env_grams is None else env_grams),
            cross_overlap,
        )

    @property
    def n_blocks(self) -> int:
        return len(self.outer_probs)

    def block_sizes(self, t: float = 0.0) -> list[int]:
        return [len(w(t)) for w in self.weights]

    def block_norms(self, t: float) -> np.ndarray:
        """``sum_ab Z_a^* Z_b <M_a|M_b> <E_a|E_b>`` for each block."""
        out = []
        for w, pg, eg in zip(self.weights, self.pointer_grams, self.env_grams):
            z = np.asarray(w(t), dtype=complex)
            out.append(float(np.real(z.conj() @ (np.asarray(pg(t)) * np.asarray(eg(t))) @ z)))
        return np.array(out)


@dataclass(frozen=True, eq=False)
class BlockSplit:
    rho: DensityMatrix
    block_of_coordinate: np.ndarray
    block_traces: np.ndarray
    pointer_vectors: np.ndarray
    block_of_pointer: np.ndarray


def _pointer_gram_full(model: BlockModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    sizes = model.block_sizes(t)
    labels = np.repeat(np.arange(model.n_blocks), sizes)
    g = np.full((len(labels), len(labels)), model.cross_overlap, dtype=complex)
    start = 0
    for j, m in enumerate(sizes):
        g[start : start + m, start : start + m] = np.asarray(model.pointer_grams[j](t))
        start += m
    return g, labels


def split_block_rho(model: BlockModel, t: float) -> BlockSplit:
    """Device density matrix of the environment-split model, with its block structure.

    ``rho = sum_j p_j sum_ab Z_aj Z_bj^* <E_bj|E_aj> |M_aj><M_bj|`` realized
    in a concrete basis.  With ``cross_overlap == 0`` each block gets its own
    coordinates, so ``rho`` is exactly block diagonal and
    ``block_of_coordinate`` labels every row.  Otherwise the pointers are
    realized jointly, coordinates are labelled ``-1`` and block traces are
    measured with projectors onto each block's pointer span.
    """
    norms = model.block_norms(t)
    bad = np.flatnonzero(np.abs(norms - 1.0) > BLOCK_NORM_TOL)
    if bad.size:
        raise NotNormalizedError(f"blocks {bad.tolist()} violate per-block normalization: {norms[bad]}")
    sizes = model.block_sizes(t)
    gram, labels = _pointer_gram_full(model, t)
    if model.cross_overlap == 0:
        coords = np.zeros((len(labels), len(labels)), dtype=complex)
        start = 0
        for j, m in enumerate(sizes):
            sl = slice(start, start + m)
            coords[sl, sl] = realize_gram(gram[sl, sl])
            start += m
        block_of_coordinate = labels.copy()
    else:
        coords = realize_gram(gram)
        block_of_coordinate = np.full(len(labels), -1)
    rho = np.zeros((len(labels), len(labels)), dtype=complex)
    start = 0
    for j, m in enumerate(sizes):
        z = np.asarray(model.weights[j](t), dtype=complex)
        eg = np.asarray(model.env_grams[j](t), dtype=complex)
        coef = model.outer_probs[j] * np.outer(z, z.conj()) * eg.T  # c_ab = p Z_a Z_b^* <E_b|E_a>
        v = coords[:, start : start + m]
        rho += v @ coef @ v.conj().T
        start += m
    rho_dm = DensityMatrix.from_unnormalized(rho)
    traces = np.empty(model.n_blocks)
    for j in range(model.n_blocks):
        if model.cross_overlap == 0:
            idx = block_of_coordinate == j
            traces[j] = float(np.trace(rho_dm.entries[np.ix_(idx, idx)]).real)
        else:
            q, _ = np.linalg.qr(coords[:, labels == j])
            traces[j] = float(np.trace(q.conj().T @ rho_dm.entries @ q).real)
    return BlockSplit(rho_dm, block_of_coordinate, traces, coords, labels)


# -- imperfect devices -----------------------------------------------------


def _imperfect_shapes(p, Z, env_gram, pointer_gram):
    p = np.asarray(p, dtype=float)
    Z = np.asarray(Z, dtype=complex)
    if Z.ndim != 3:
        raise ValidationError("Z must have shape (m, n_dev, n_part)")
    m, n_dev, n_part = Z.shape
    if p.shape != (n_part,):
        raise ValidationError(f"p must have length {n_part}")
    if np.any(p < 0):
        raise ValidationError("probabilities must be non-negative")
    size = n_dev * m
    if env_gram is None:
        env_gram = np.broadcast_to(np.eye(size), (n_part, size, size))
    env_gram = np.asarray(env_gram, dtype=complex)
    if env_gram.shape != (n_part, size, size):
        raise ValidationError(f"env_gram must have shape {(n_part, size, size)}, got {env_gram.shape}")
    if pointer_gram is None:
        pointer_gram = np.broadcast_to(np.eye(m), (n_dev, m, m))
    pointer_gram = np.asarray(pointer_gram, dtype=complex)
    if pointer_gram.shape != (n_dev, m, m):
        raise ValidationError(f"pointer_gram must have shape {(n_dev, m, m)}, got {pointer_gram.shape}")
    return p, Z, env_gram, pointer_gram


def imperfect_measurement_blocks(p, Z, env_gram=None, pointer_gram=None) -> np.ndarray:
    """Probability of each device outcome for an imperfect measurement.

    The joint state is
    ``sum_{a,i,j} sqrt(p_j) Z[a,i,j] |M_ai> (x) |psi_j> (x) |E_aij>`` with
    orthonormal particle states ``psi_j`` and pointers of different outcomes
    ``i`` orthogonal.  ``env_gram[j]`` is the Gram matrix of the environment
    states ``E_aij`` for fixed ``j`` indexed by the flattened pair
    ``(i, a) -> i * m + a``; ``pointer_gram[i]`` holds ``<M_ai|M_bi>``.
    Both default to identities.

    Block ``i`` carries
    ``sum_j p_j sum_ab Z[a,i,j] Z[b,i,j]^* <M_bi|M_ai> <E_bij|E_aij>``.
    """
    p, Z, env_gram, pointer_gram = _imperfect_shapes(p, Z, env_gram, pointer_gram)
    m, n_dev, n_part = Z.shape
    total = 0.0
    blocks = np.zeros(n_dev)
    for j in range(n_part):
        zj = (Z[:, :, j].T).reshape(-1)  # flattened (i, a)
        full = np.zeros((n_dev * m, n_dev * m), dtype=complex)
        for i in range(n_dev):
            sl = slice(i * m, (i + 1) * m)
            full[sl, sl] = pointer_gram[i]
        joint = full * env_gram[j]
        total += p[j] * float(np.real(zj.conj() @ joint @ zj))
        for i in range(n_dev):
            sl = slice(i * m, (i + 1) * m)
            zi = zj[sl]
            blocks[i] += p[j] * float(np.real(zi.conj() @ joint[sl, sl] @ zi))
    if abs(total - 1.0) > BLOCK_NORM_TOL:
        raise NotNormalizedError(f"imperfect-measurement state has squared norm {total!r}")
    return blocks


def imperfect_full_state(p, Z, env_gram=None, pointer_gram=None) -> tuple[BipartiteState, np.ndarray]:
    """Explicit joint vector for the imperfect-measurement model.

    Device coordinates are grouped by outcome.  The bipartition is device
    versus (particle (x) environment).  Returns the state and the outcome
    label of every device coordinate.
    """
    p, Z, env_gram, pointer_gram = _imperfect_shapes(p, Z, env_gram, pointer_gram)
    m, n_dev, n_part = Z.shape
    size = n_dev * m
    pointers = np.zeros((size, size), dtype=complex)
    for i in range(n_dev):
        sl = slice(i * m, (i + 1) * m)
        pointers[sl, sl] = realize_gram(pointer_gram[i])
    envs = [realize_gram(env_gram[j]) for j in range(n_part)]
    amps = np.zeros((size, n_part, size), dtype=complex)
    for j in range(n_part):
        for i in range(n_dev):
            for a in range(m):
                k = i * m + a
                amps[:, j, :] += math.sqrt(p[j]) * Z[a, i, j] * np.outer(pointers[:, k], envs[j][:, k])
    labels = np.repeat(np.arange(n_dev), m)
    return BipartiteState(amps.reshape(size, n_part * size)), labels


def cross_block_weight(vectors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """For each column, the norm of its part outside its dominant block."""
    v = np.asarray(vectors)
    out = np.empty(v.shape[1])
    for c in range(v.shape[1]):
        w = np.array([np.sum(np.abs(v[labels == b, c]) ** 2) for b in np.unique(labels)])
        out[c] = math.sqrt(max(w.sum() - w.max(), 0.0))
    return out


def block_spectra(split: BlockSplit) -> list[np.ndarray]:
    """Eigenvalues of each diagonal block, normalized by the block trace."""
    out = []
    for j in range(len(split.block_traces)):
        idx = split.block_of_coordinate == j
        sub = split.rho.entries[np.ix_(idx, idx)]
        out.append(np.sort(np.linalg.eigvalsh(sub))[::-1] / split.block_traces[j])
    return out

