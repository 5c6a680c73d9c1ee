"""Decay ``A -> B + C`` watched by a device with time resolution ``eta``.

The undecayed amplitude falls as ``exp(-gamma t)``.  Decay products
emitted in window ``j`` (``t_{j-1} < t' < t_j``, ``t_j = j eta``) are
represented by one environment sector ``W_j`` each, correlated with device
state ``|M_j>``.  Sectors of different windows are orthogonal: the product
overlap ``<BC|exp(-i H0 s)|BC>`` only couples emission times within ``tau``
of each other.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, NamedTuple

import numpy as np
from scipy.integrate import quad

from .errors import NumericalError, ValidationError
from .linalg import BipartiteState
from .pointer import PointerFamily, realize_pointer_states
from .stochastic import (
    BranchFrame,
    Ensemble,
    TransitionKernel,
    discrete_kernel,
    match_branches,
    run_ensemble,
)

log = logging.getLogger(__name__)

OverlapFn = Callable[[float], complex]
KernelRate = Literal["linear", "exact"]
MAX_NORM_DEFICIT = 0.05


def flat_overlap(tau: float) -> OverlapFn:
    """``<BC|exp(-i H0 s)|BC> = 1`` for ``0 <= s <= tau`` and 0 beyond."""
    return lambda s: 1.0 if 0 <= s <= tau else 0.0


@dataclass(frozen=True)
class DecayParams:
    """Decay rate ``gamma`` (lifetime ``1/(2 gamma)``) and device resolution ``eta``.

    ``tau`` defaults to ``eta / 100``.  Without an explicit coupling, the
    product overlap is flat on ``[0, tau]`` and ``lambda_coupling`` is set so
    that the rate integral reproduces ``gamma``.
    """

    gamma: float
    eta: float
    n_steps: int
    e0: float = 0.0
    tau: float | None = None
    lambda_coupling: float | None = None
    overlap_fn: OverlapFn | None = None

    def __post_init__(self):
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise ValidationError(f"gamma must be non-negative, got {self.gamma}")
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValidationError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        if self.gamma * self.eta >= 0.1:
            raise ValidationError(f"gamma*eta = {self.gamma * self.eta:g} violates gamma*eta < 0.1")
        tau = self.eta / 100 if self.tau is None else self.tau
        if not tau > 0:
            raise ValidationError(f"tau must be positive, got {tau}")
        if self.gamma * tau >= 0.01:
            raise ValidationError(f"gamma*tau = {self.gamma * tau:g} violates gamma*tau < 0.01")
        if tau > self.eta:
            raise ValidationError("tau must not exceed eta")
        object.__setattr__(self, "tau", tau)
        if self.overlap_fn is None:
            object.__setattr__(self, "overlap_fn", flat_overlap(tau))
        if self.lambda_coupling is None:
            base = decay_gamma(1.0, self.overlap_fn, tau)
            if self.gamma > 0 and base <= 0:
                raise ValidationError("overlap profile gives no decay; supply lambda_coupling")
            object.__setattr__(self, "lambda_coupling", math.sqrt(self.gamma / base) if self.gamma > 0 else 0.0)

    @property
    def gamma_eta(self) -> float:
        return self.gamma * self.eta


def decay_gamma(lambda_coupling: float, overlap_fn: OverlapFn, tau: float) -> float:
    """Rate ``lambda^2 Re int_0^tau <BC|exp(-i H0 t)|BC> dt`` (hbar = 1).

    A sizeable imaginary part (an energy shift) is logged, not returned.
    """
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    tol = 1e-10 * tau
    re, _ = quad(lambda s: complex(overlap_fn(s)).real, 0.0, tau, epsabs=tol, epsrel=1e-12, limit=200)
    im, _ = quad(lambda s: complex(overlap_fn(s)).imag, 0.0, tau, epsabs=tol, epsrel=1e-12, limit=200)
    if abs(im) > 0.01 * abs(re):
        log.warning("overlap integral has imaginary part %.3e (real %.3e): energy shift ignored", im, re)
    return lambda_coupling**2 * re


class DecayWeights(NamedTuple):
    weights: np.ndarray
    deficit: float


def decay_weights(params: DecayParams, n: int) -> DecayWeights:
    """Branch probabilities after ``n`` windows: ``p_0 = e^{-2 n g eta}``, ``p_j = 2 g eta e^{-2 g (j-1) eta}``.

    These are first order in ``gamma eta``; ``deficit = 1 - sum`` is of
    order ``(gamma eta)^2`` per window.
    """
    if int(n) != n or n < 0 or n > params.n_steps:
        raise ValidationError(f"n must be in [0, {params.n_steps}], got {n}")
    ge = params.gamma_eta
    w = np.empty(n + 1)
    w[0] = math.exp(-2 * n * ge)
    w[1:] = 2 * ge * np.exp(-2 * ge * np.arange(n))
    return DecayWeights(w, float(1.0 - w.sum()))


def decay_probability(params: DecayParams, rate: KernelRate = "linear") -> float:
    """Per-window decay probability: ``2 gamma eta`` or the exact ``1 - e^{-2 gamma eta}``."""
    if rate == "linear":
        return 2 * params.gamma_eta
    if rate == "exact":
        return -math.expm1(-2 * params.gamma_eta)
    raise ValidationError(f"unknown kernel rate {rate!r}")


def decay_kernel(params: DecayParams, n: int, rate: KernelRate = "linear", n_branches: int | None = None) -> TransitionKernel:
    """Kernel for the step ``t_n -> t_{n+1}`` on branches ``0 .. n_branches - 1``.

    Branch 0 is the undecayed state and branch ``j`` the decay in window
    ``j``.  The only transition is ``0 -> n + 1``.
    """
    size = params.n_steps + 1 if n_branches is None else n_branches
    if not 0 <= n < size - 1:
        raise ValidationError(f"step {n} needs at least {n + 2} branches, have {size}")
    q = decay_probability(params, rate)
    m = np.eye(size)
    m[0, 0] = 1.0 - q
    m[n + 1, 0] = q
    J = np.zeros((size, size))
    J[n + 1, 0] = q
    J[0, n + 1] = -q
    return TransitionKernel(n, m, np.arange(size), J)


def decay_kernels(params: DecayParams, rate: KernelRate = "linear") -> list[TransitionKernel]:
    return [decay_kernel(params, n, rate) for n in range(params.n_steps)]


# -- explicit joint state ------------------------------------------------


def window_weight(params: DecayParams, lo: float, hi: float) -> float:
    """``|| lambda int_lo^hi dt' e^{-gamma t'} e^{-i H0 (t - t')} |BC> ||^2``.

    With ``c(s) = <BC|exp(-i H0 s)|BC>`` this is
    ``lambda^2 int_0^{min(tau, L)} ds 2 Re c(s) e^{-gamma s} F(s)`` where
    ``F(s)`` integrates ``e^{-2 gamma t''}`` over ``[lo, hi - s]``.
    """
    length = hi - lo
    if length <= 0:
        return 0.0
    g = params.gamma
    lam2 = params.lambda_coupling**2
    if lam2 == 0:
        return 0.0
    base = math.exp(-2 * g * lo)

    def integrand(s: float) -> float:
        span = length - s
        f = span if g == 0 else -math.expm1(-2 * g * span) / (2 * g)
        return 2.0 * complex(params.overlap_fn(s)).real * math.exp(-g * s) * f

    top = min(params.tau, length)
    val, _ = quad(integrand, 0.0, top, epsabs=1e-14 * top, epsrel=1e-12, limit=200)
    return lam2 * base * val


class DecayStateWeights(NamedTuple):
    undecayed: float
    windows: np.ndarray
    norm_deficit: float


def decay_state_weights(params: DecayParams, t: float) -> DecayStateWeights:
    """Squared norms of the undecayed part and of every window at time ``t``.

    A partially elapsed window is included as the last entry.
    """
    if t < 0:
        raise ValidationError("t must be non-negative")
    n_full = int(math.floor(t / params.eta + 1e-12))
    edges = [j * params.eta for j in range(n_full + 1)]
    if t - edges[-1] > 1e-12 * params.eta:
        edges.append(t)
    windows = np.array([window_weight(params, edges[k], edges[k + 1]) for k in range(len(edges) - 1)])
    undecayed = math.exp(-2 * params.gamma * t)
    return DecayStateWeights(undecayed, windows, float(1.0 - undecayed - windows.sum()))


def _device_vectors(family: PointerFamily | None, t: float, n_outcomes: int) -> np.ndarray:
    if family is None:
        return np.eye(n_outcomes, dtype=complex)
    if family.n_outcomes < n_outcomes:
        raise ValidationError(f"pointer family has {family.n_outcomes} outcomes, need {n_outcomes}")
    return realize_pointer_states(family, t).vectors


def decay_full_state(
    params: DecayParams,
    pointer_family: PointerFamily | None,
    t: float,
    n_windows: int | None = None,
) -> BipartiteState:
    """Joint device (x) (A, W_1, W_2, ...) state at time ``t``, normalized.

    ``pointer_family`` supplies ``|M_0>, |M_1>, ...`` (``None`` means
    orthonormal).  ``n_windows`` pads the environment with empty sectors so
    that frames at different times share one joint space.  The norm deficit
    from dropping cross-window overlaps is measured; more than 5% is
    rejected as outside the regime where the closed-form amplitudes hold.
    """
    weights = decay_state_weights(params, t)
    active = len(weights.windows)
    n_windows = active if n_windows is None else n_windows
    if n_windows < active:
        raise ValidationError(f"t={t} populates {active} windows, only {n_windows} requested")
    if abs(weights.norm_deficit) > MAX_NORM_DEFICIT:
        raise NumericalError(
            f"decay state norm deficit {weights.norm_deficit:.3f} exceeds {MAX_NORM_DEFICIT}; "
            "reduce gamma*tau or gamma*eta"
        )
    log.debug("decay state at t=%g: norm deficit %.3e", t, weights.norm_deficit)
    device = _device_vectors(pointer_family, t, n_windows + 1)
    env_dim = n_windows + 1
    amps = np.zeros((device.shape[0], env_dim), dtype=complex)
    phase = cmath.exp(-1j * params.e0 * t)
    amps[:, 0] = math.exp(-params.gamma * t) * phase * device[:, 0]
    for j, w in enumerate(weights.windows, start=1):
        amps[:, j] = math.sqrt(w) * (-1j * phase) * device[:, j]
    return BipartiteState(amps).normalized()


def decay_step_unitary(params: DecayParams, n: int, device_dim: int, n_windows: int) -> np.ndarray:
    """Evolution ``t_n -> t_{n+1}`` on device (x) environment with orthonormal pointers.

    Rotates ``M_0 (x) A`` into ``M_{n+1} (x) W_{n+1}`` with
    ``<M_0 A| U |M_0 A> = e^{-gamma eta}`` (times the ``E0`` phase) and acts
    as the phase ``e^{-i E0 eta}`` everywhere else.
    """
    if n + 1 > n_windows or n + 1 >= device_dim:
        raise ValidationError(f"step {n} needs window {n + 1}; space holds {n_windows} windows")
    env_dim = n_windows + 1
    dim = device_dim * env_dim
    a = 0 * env_dim + 0
    b = (n + 1) * env_dim + (n + 1)
    c = math.exp(-params.gamma_eta)
    s = math.sqrt(-math.expm1(-2 * params.gamma_eta))
    u = np.eye(dim, dtype=complex)
    u[a, a] = c
    u[b, b] = c
    u[b, a] = -1j * s
    u[a, b] = -1j * s
    return cmath.exp(-1j * params.e0 * params.eta) * u


@dataclass(frozen=True, eq=False)
class WindowKernel:
    """Generic-engine kernel re-indexed by window (0 = undecayed)."""

    kernel: TransitionKernel
    matrix: np.ndarray
    prev_windows: np.ndarray
    next_windows: np.ndarray


def kernel_from_frames(params: DecayParams, n: int, pointer_family: PointerFamily | None = None) -> WindowKernel:
    """Run the generic discrete engine on decay frames at ``t_n`` and ``t_{n+1}``.

    Branch labels of each frame are mapped to windows through the device
    pointer with the largest overlap, so ``matrix[i, j]`` is the
    probability of moving from window ``j`` to window ``i``.
    """
    n_windows = n + 1
    dim = n_windows + 1
    t0, t1 = n * params.eta, (n + 1) * params.eta
    prev = BranchFrame.from_state(decay_full_state(params, pointer_family, t0, n_windows), t0)
    nxt = BranchFrame.from_state(decay_full_state(params, pointer_family, t1, n_windows), t1)
    u = decay_step_unitary(params, n, dim, n_windows)
    matching = match_branches(prev, nxt, u)
    kern = discrete_kernel(prev, nxt, u, matching, step_index=n)

    def windows(frame: BranchFrame, t: float) -> np.ndarray:
        device = _device_vectors(pointer_family, t, dim)
        ov = np.abs(device.conj().T @ frame.schmidt.left_vectors)
        return np.argmax(ov, axis=0)

    w_prev, w_next = windows(prev, t0), windows(nxt, t1)
    if len(set(w_prev.tolist())) != dim or len(set(w_next.tolist())) != dim:
        raise NumericalError("branches could not be assigned to distinct windows")
    by_window = np.zeros((dim, dim))
    by_window[np.ix_(w_next, w_prev)] = kern.matrix
    return WindowKernel(kern, by_window, w_prev, w_next)


# -- Monte Carlo ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GeigerResult:
    ensemble: Ensemble
    window_counts: np.ndarray
    survivors: int
    expected_p: np.ndarray
    reverse_transitions: int
    decayed_hops: int

    @property
    def n_trajectories(self) -> int:
        return self.ensemble.n_trajectories

    def survival_curve(self) -> np.ndarray:
        return self.ensemble.occupancy[:, 0]


def count_forbidden_transitions(occupancy_paths: np.ndarray) -> tuple[int, int]:
    """Counts of ``j -> 0`` returns and ``j -> k`` hops between decayed branches."""
    a, b = occupancy_paths[:, :-1], occupancy_paths[:, 1:]
    moved = a != b
    reverse = int(np.count_nonzero(moved & (a > 0) & (b == 0)))
    hops = int(np.count_nonzero(moved & (a > 0) & (b > 0)))
    return reverse, hops


def simulate_geiger(
    params: DecayParams,
    n_traj: int,
    seed: int,
    rate: KernelRate = "exact",
    keep_paths: bool = False,
    workers: int | None = None,
) -> GeigerResult:
    """Sample decay histories over ``params.n_steps`` windows.

    Uses the exact per-window decay probability ``1 - e^{-2 gamma eta}`` by
    default, which is what the generic engine extracts from the explicit
    state; ``rate="linear"`` uses the first-order ``2 gamma eta``.
    Histories are always kept internally to audit the one-way property.
    """
    kernels = decay_kernels(params, rate)
    size = params.n_steps + 1
    p0 = np.zeros(size)
    p0[0] = 1.0
    ens = run_ensemble(kernels, p0, n_traj, seed, keep_paths=True, workers=workers)
    final = ens.paths[:, -1] if n_traj else np.zeros(0, dtype=int)
    counts = np.bincount(final, minlength=size)
    reverse, hops = count_forbidden_transitions(ens.paths) if n_traj else (0, 0)
    expected = decay_weights(params, params.n_steps).weights
    if not keep_paths:
        ens = Ensemble(ens.occupancy, None, ens.base_seed)
    return GeigerResult(ens, counts[1:], int(counts[0]), expected[1:], reverse, hops)
