import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalsim.errors import NotHermitianError, NotNormalizedError, NotUnitaryError, ValidationError
from modalsim.linalg import (
    BipartiteState,
    DensityMatrix,
    FixedPointMatrix,
    apply_unitary,
    eigen_decompose,
    local_unitary,
    minimal_unitary,
    random_state,
    random_unitary,
    reduced_density_matrix,
    refine_eigenvalues,
    schmidt_decompose,
)

BELL = BipartiteState(np.array([[1, 0], [0, 1]]) / math.sqrt(2))

dims = st.integers(min_value=1, max_value=5)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_product_state_gives_rank_one_rho():
    a = np.array([0.6, 0.8j])
    b = np.array([1, 1, 0]) / math.sqrt(2)
    rho = reduced_density_matrix(BipartiteState.product(a, b))
    np.testing.assert_allclose(rho.entries, np.outer(a, a.conj()), atol=1e-14)


def test_bell_state_reduces_to_half_identity():
    np.testing.assert_allclose(reduced_density_matrix(BELL).entries, np.eye(2) / 2, atol=1e-15)
    np.testing.assert_allclose(reduced_density_matrix(BELL, "A_prime").entries, np.eye(2) / 2, atol=1e-15)


def test_reduced_rho_matches_direct_sum():
    rng = np.random.default_rng(3)
    state = random_state(3, 4, rng)
    psi = state.amplitudes
    brute = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for k in range(3):
            for j in range(4):
                brute[i, k] += psi[i, j] * np.conj(psi[k, j])
    np.testing.assert_allclose(reduced_density_matrix(state).entries, brute, atol=1e-12)


def test_joint_vector_layout_matches_kron():
    a, b = np.array([1, 2j]), np.array([3, 4, 5])
    state = BipartiteState.product(a / np.linalg.norm(a), b / np.linalg.norm(b))
    np.testing.assert_allclose(state.vector, np.kron(a, b) / np.linalg.norm(np.kron(a, b)))
    np.testing.assert_array_equal(BipartiteState.from_vector(state.vector, 2, 3).amplitudes, state.amplitudes)


def test_unnormalized_state_rejected_by_operations():
    with pytest.raises(NotNormalizedError):
        reduced_density_matrix(BipartiteState(np.ones((2, 2))))


def test_eigen_decompose_diagonal():
    spec = eigen_decompose(np.diag([0.2, 0.5, 0.3]).astype(complex))
    np.testing.assert_allclose(spec.probabilities, [0.5, 0.3, 0.2])
    np.testing.assert_allclose(np.abs(spec.vectors), np.eye(3)[:, [1, 2, 0]], atol=1e-15)
    assert not spec.has_degeneracy


def test_eigen_decompose_two_level_closed_form():
    d, off = 0.1, 0.05
    spec = eigen_decompose(np.array([[0.5 + d, off], [off, 0.5 - d]], dtype=complex))
    r = math.hypot(d, off)
    np.testing.assert_allclose(spec.probabilities, [0.5 + r, 0.5 - r], atol=1e-15)
    assert abs(r - 0.111803) < 1e-6


def test_bell_state_is_flagged_degenerate():
    spec = eigen_decompose(reduced_density_matrix(BELL))
    assert spec.clusters == ((0, 1),)


def test_eigen_decompose_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        eigen_decompose(np.array([[0.5, 0.1], [0.2, 0.5]], dtype=complex))


def test_density_matrix_validation():
    with pytest.raises(ValidationError):
        DensityMatrix(np.diag([0.7, 0.7]).astype(complex))
    with pytest.raises(ValidationError):
        eigen_decompose(DensityMatrix(np.diag([1.2, -0.2]).astype(complex)))


def test_phase_fix_makes_largest_entry_real_positive():
    rng = np.random.default_rng(0)
    spec = eigen_decompose(reduced_density_matrix(random_state(4, 4, rng)))
    for k in range(4):
        v = spec.vectors[:, k]
        j = np.argmax(np.abs(v))
        assert abs(v[j].imag) < 1e-15 and v[j].real > 0


def test_eigen_decompose_is_bit_reproducible():
    rng = np.random.default_rng(11)
    rho = reduced_density_matrix(random_state(5, 7, rng))
    a, b = eigen_decompose(rho), eigen_decompose(rho)
    assert a.probabilities.tobytes() == b.probabilities.tobytes()
    assert a.vectors.tobytes() == b.vectors.tobytes()


def test_schmidt_product_and_bell():
    prod = BipartiteState.product(np.array([1.0, 0]), np.array([0, 1.0, 0]))
    np.testing.assert_allclose(schmidt_decompose(prod).coefficients, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(schmidt_decompose(BELL).coefficients, [1 / math.sqrt(2)] * 2, atol=1e-15)


def test_schmidt_reconstructs_state():
    rng = np.random.default_rng(5)
    state = random_state(4, 6, rng)
    sd = schmidt_decompose(state)
    np.testing.assert_allclose(sd.reconstruct().amplitudes, state.amplitudes, atol=1e-12)


def test_apply_unitary_examples():
    rng = np.random.default_rng(2)
    state = random_state(2, 3, rng)
    assert np.allclose(apply_unitary(state, np.eye(6)).amplitudes, state.amplitudes)
    u = random_unitary(6, rng)
    back = apply_unitary(apply_unitary(state, u), u.conj().T)
    np.testing.assert_allclose(back.amplitudes, state.amplitudes, atol=1e-12)
    assert abs(apply_unitary(state, u).norm - 1) < 1e-12
    with pytest.raises(NotUnitaryError):
        apply_unitary(state, 2 * np.eye(6))


def test_minimal_unitary_maps_source_to_target():
    rng = np.random.default_rng(8)
    s = random_state(3, 3, rng).vector
    t = random_state(3, 3, rng).vector
    u = minimal_unitary(s, t)
    np.testing.assert_allclose(u @ s, t, atol=1e-12)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(9), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(dims, dims, seeds)
def test_reduced_spectra_agree_on_both_sides(da, db, seed):
    state = random_state(da, db, np.random.default_rng(seed))
    pa = eigen_decompose(reduced_density_matrix(state, "A")).probabilities
    pb = eigen_decompose(reduced_density_matrix(state, "A_prime")).probabilities
    k = min(da, db)
    np.testing.assert_allclose(pa[:k], pb[:k], atol=1e-10)
    assert np.all(np.abs(pa[k:]) < 1e-10) and np.all(np.abs(pb[k:]) < 1e-10)
    np.testing.assert_allclose(schmidt_decompose(state).probabilities, pa[: len(schmidt_decompose(state).probabilities)], atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(dims, dims, seeds)
def test_eigen_decompose_reconstructs(da, db, seed):
    rho = reduced_density_matrix(random_state(da, db, np.random.default_rng(seed)))
    np.testing.assert_allclose(eigen_decompose(rho).reconstruct(), rho.entries, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(dims, dims, seeds)
def test_schmidt_coefficients_invariant_under_local_unitaries(da, db, seed):
    rng = np.random.default_rng(seed)
    state = random_state(da, db, rng)
    u = local_unitary(random_unitary(da, rng), random_unitary(db, rng))
    before = schmidt_decompose(state).coefficients
    after = schmidt_decompose(apply_unitary(state, u)).coefficients
    np.testing.assert_allclose(before, after, atol=1e-10)


def test_refine_eigenvalues_resolves_tiny_levels():
    # rank-structured matrix whose small eigenvalues sit far below double round-off
    n = 40
    x = np.linspace(-4, 4, n)
    w = np.exp(-x**2 / 2)
    kern = np.exp(-0.02 * (np.arange(n) * (x[1] - x[0])) ** 2)
    import mpmath

    with mpmath.workdps(50):
        xs = [mpmath.mpf(-4) + j * mpmath.mpf(8) / (n - 1) for j in range(n)]
        wm = [mpmath.exp(-v**2 / 2) for v in xs]
        km = [mpmath.exp(-mpmath.mpf("0.02") * (m * mpmath.mpf(8) / (n - 1)) ** 2) for m in range(n)]
        exact = FixedPointMatrix.from_toeplitz_product(wm, km, bits=200)
        ref = mpmath.mp.matrix([[wm[j] * wm[k] * km[abs(j - k)] for k in range(n)] for j in range(n)])
        ev = sorted(mpmath.eigsy(ref, eigvals_only=True), reverse=True)
    dense = np.outer(w, w) * kern[np.abs(np.subtract.outer(np.arange(n), np.arange(n)))]
    guess = np.linalg.eigh(dense)[1][:, ::-1][:, :12]
    refined = refine_eigenvalues(exact, guess)
    for k in range(8):
        assert abs(refined[k] - float(ev[k])) <= 1e-12 * abs(float(ev[k])) + 1e-300
