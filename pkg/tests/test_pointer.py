import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalsim.errors import GramIndefiniteError, NotNormalizedError, ValidationError
from modalsim.linalg import eigen_decompose, reduced_density_matrix
from modalsim.pointer import (
    BlockModel,
    CrossoverParams,
    PointerFamily,
    block_spectra,
    collapse_time,
    cross_block_weight,
    crossover_rho,
    crossover_spectrum,
    crossover_state,
    imperfect_full_state,
    imperfect_measurement_blocks,
    measurement_rho,
    pivoted_cholesky,
    pointer_overlap,
    realize_gram,
    realize_pointer_states,
    split_block_rho,
)


def random_psd(n, rank, rng):
    a = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    g = a @ a.conj().T
    d = np.sqrt(np.diag(g).real)
    return g / np.outer(d, d)


def unit(v):
    return v / np.linalg.norm(v)


# -- Gram realization -------------------------------------------------------


def test_identity_gram_gives_orthonormal_vectors():
    v = realize_gram(np.eye(4))
    np.testing.assert_allclose(v.conj().T @ v, np.eye(4), atol=1e-15)


def test_random_gram_reconstructs():
    g = random_psd(4, 4, np.random.default_rng(0))
    v = realize_gram(g)
    assert np.max(np.abs(v.conj().T @ v - g)) < 1e-10


def test_low_rank_gram_and_embedding():
    g = random_psd(5, 2, np.random.default_rng(1))
    L, order = pivoted_cholesky(g)
    assert L.shape == (5, 2) and len(order) == 2
    v = realize_gram(g, embedding_dim=7)
    assert v.shape == (7, 5)
    assert np.max(np.abs(v.conj().T @ v - g)) < 1e-10


def test_indefinite_gram_names_eigenvalue():
    g = np.array([[1, 0.9, 0.9], [0.9, 1, -0.9], [0.9, -0.9, 1]])
    with pytest.raises(GramIndefiniteError) as err:
        realize_gram(g)
    assert err.value.eigenvalue == pytest.approx(np.linalg.eigvalsh(g)[0])


def test_realization_is_deterministic():
    g = random_psd(6, 6, np.random.default_rng(9))
    assert realize_gram(g).tobytes() == realize_gram(g).tobytes()


def test_macroscopic_pointers_underflow_to_orthogonal():
    fam = PointerFamily.gaussian_schedule([0.0, 1.0], 1000, 1e-2, 1.0)
    states = realize_pointer_states(fam, 1.0)
    assert states.log_gram[0, 1].real == pytest.approx(-1e7)
    assert abs(states.vectors[:, 0].conj() @ states.vectors[:, 1]) == 0.0


def test_pointer_overlap_examples():
    assert pointer_overlap(5, 0.0, 1.0).value == 1.0
    big = pointer_overlap(1000, 1.0, 1e-2)
    assert big.log_value == pytest.approx(-1e7) and big.value == 0.0
    assert pointer_overlap(3, 0.4, 1.0).log_value == pytest.approx(4 * pointer_overlap(3, 0.2, 1.0).log_value)


def test_collapse_time_examples():
    assert collapse_time(1.0, 1e-2, 1.0, 1000) == pytest.approx(3.16e-4, rel=1e-3)
    assert collapse_time(2.5, 0.3, 0.3, 1) == 2.5
    assert collapse_time(1.0, 1.0, 1.0, 16) == collapse_time(1.0, 1.0, 1.0, 4) / 2


def test_schedule_interpolates_and_clamps():
    fam = PointerFamily.gaussian_schedule([0.0, 1.0], 4, 1.0, 2.0)
    assert fam.gram(0.0)[0, 1] == 1.0
    assert fam.gram(1.0)[0, 1] == pytest.approx(math.exp(-1.0))
    assert fam.gram(2.0)[0, 1] == fam.gram(50.0)[0, 1] == pytest.approx(math.exp(-4.0))


# -- collapse plateau -------------------------------------------------------


def test_collapse_plateau():
    probs = np.array([0.5, 0.3, 0.2])
    fam = PointerFamily.gaussian_schedule([0.0, 1.0, 2.0], 100, 1.0, 1.0)
    rho, states = measurement_rho(fam, probs, 1.0)
    assert np.max(np.abs(states.gram - np.eye(3))) < 1e-12
    spec = eigen_decompose(rho)
    np.testing.assert_allclose(spec.probabilities, probs, atol=1e-10)
    for k in range(3):
        overlap = abs(states.vectors[:, k].conj() @ spec.vectors[:, k])
        assert abs(overlap - 1) < 1e-6


def test_collapse_starts_pure():
    fam = PointerFamily.gaussian_schedule([0.0, 1.0], 10, 1.0, 1.0)
    rho, _ = measurement_rho(fam, [0.6, 0.4], 0.0)
    assert eigen_decompose(rho).probabilities[0] == pytest.approx(1.0, abs=1e-12)


# -- crossover --------------------------------------------------------------


def test_crossover_symmetric_point():
    s = crossover_spectrum(CrossoverParams(0.3, 2.0, 0.01, 1.0), 1.0)
    assert s.theta == pytest.approx(math.pi / 4)


def test_crossover_values_at_center():
    s = crossover_spectrum(CrossoverParams(0.5, 1.0, 1e-3), 0.0)
    assert s.p_plus == pytest.approx(0.5 + 5e-4, abs=1e-15)
    assert s.p_minus == pytest.approx(0.5 - 5e-4, abs=1e-15)


def test_crossover_switching_window():
    params = CrossoverParams(0.4, 3.0, 0.02, 0.0)
    w = params.switch_time
    assert crossover_spectrum(params, -10 * w).theta < 0.05
    assert crossover_spectrum(params, 10 * w).theta > math.pi / 2 - 0.05


def test_exact_crossing_flags_degenerate_point():
    params = CrossoverParams(0.3, 1.0, 0.0, 0.5)
    assert crossover_spectrum(params, 0.5).degenerate_point
    assert crossover_spectrum(params, 0.4).theta == 0.0
    assert crossover_spectrum(params, 0.6).theta == pytest.approx(math.pi / 2)


def test_complex_delta_rotated_and_reported():
    params = CrossoverParams(0.3, 1.0, 0.01j)
    s = crossover_spectrum(params, 0.0)
    assert s.delta_phase == pytest.approx(math.pi / 2)
    assert s.theta == pytest.approx(math.pi / 4)


def test_crossover_spectrum_matches_matrix():
    params = CrossoverParams(0.35, -0.7, 0.2 + 0.1j, 0.3)
    for t in (0.2, 0.3, 0.41):
        s = crossover_spectrum(params, t)
        ev = np.sort(np.linalg.eigvalsh(crossover_rho(params, t)))[::-1]
        assert {round(s.p_plus, 12), round(s.p_minus, 12)} <= {round(v, 12) for v in ev}
        np.testing.assert_allclose(
            eigen_decompose(reduced_density_matrix(crossover_state(params, t))).probabilities, ev, atol=1e-12
        )


def test_crossover_eigenvector_angle():
    params = CrossoverParams(0.3, 1.0, 0.05)
    t = 0.004
    s = crossover_spectrum(params, t)
    rho = crossover_rho(params, t)[:2, :2].real
    w, v = np.linalg.eigh(rho)
    top = v[:, 1] * np.sign(v[0, 1])
    # upper level is sin(theta) on the first pointer and cos(theta) on the second
    np.testing.assert_allclose(top, [math.sin(s.theta), math.cos(s.theta)], atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.01, 10), st.floats(1e-6, 0.9), st.floats(-1, 1))
def test_min_gap_is_exact(p0, a, delta, t0):
    params = CrossoverParams(p0, a, delta, t0)
    ts = t0 + np.linspace(-1, 1, 41) * params.switch_time * 5
    gaps = [crossover_spectrum(params, float(t)).p_plus - crossover_spectrum(params, float(t)).p_minus for t in ts]
    assert min(gaps) == pytest.approx(2 * p0 * delta, abs=1e-12)
    assert min(gaps) >= 2 * p0 * delta - 1e-15


# -- environment-split blocks ---------------------------------------------


def test_unsplit_blocks_reduce_to_plain_measurement():
    p = [0.5, 0.3, 0.2]
    model = BlockModel.simple(p, [[1.0], [1j], [-1.0]])
    split = split_block_rho(model, 0.0)
    np.testing.assert_allclose(split.rho.entries, np.diag(p), atol=1e-15)
    np.testing.assert_allclose(split.block_traces, p, atol=1e-12)


def test_split_block_eigenvalues():
    rng = np.random.default_rng(4)
    z1 = unit(rng.normal(size=2) + 1j * rng.normal(size=2))
    gram = np.array([[1, 0.4], [0.4, 1]], dtype=complex)
    p = np.array([0.65, 0.35])
    model = BlockModel.simple(p, [z1, [1.0]], pointer_grams=[gram, np.eye(1)])
    split = split_block_rho(model, 0.0)
    root = realize_gram(gram)
    xi = np.sort(np.linalg.eigvalsh(root @ np.diag(np.abs(z1) ** 2) @ root.conj().T))[::-1]
    assert abs(xi.sum() - 1) < 1e-10
    expected = np.sort(np.concatenate([p[0] * xi, [p[1]]]))[::-1]
    np.testing.assert_allclose(eigen_decompose(split.rho).probabilities, expected, atol=1e-12)
    np.testing.assert_allclose(block_spectra(split)[0], xi, atol=1e-12)


def test_degenerate_outer_probabilities_do_not_mix_blocks():
    rng = np.random.default_rng(12)
    za = unit(rng.normal(size=3) + 1j * rng.normal(size=3))
    zb = unit(rng.normal(size=2) + 1j * rng.normal(size=2))
    gram3 = 0.7 * np.eye(3) + 0.3
    model = BlockModel.simple([0.5, 0.5], [za, zb], pointer_grams=[gram3, np.eye(2)])
    split = split_block_rho(model, 0.0)
    spec = eigen_decompose(split.rho)
    weights = cross_block_weight(spec.vectors, split.block_of_coordinate)
    assert weights[spec.probabilities > 1e-12].max() < 1e-8


def test_block_normalization_is_enforced():
    with pytest.raises(NotNormalizedError):
        split_block_rho(BlockModel.simple([1.0], [[0.5, 0.5]]), 0.0)


def test_cross_overlap_blocks():
    model = BlockModel.simple([0.6, 0.4], [[1.0], [1.0]], cross_overlap=0.1)
    split = split_block_rho(model, 0.0)
    # overlapping pointer spans: each projector also catches |s|^2 of the other block
    np.testing.assert_allclose(split.block_traces, [0.6 + 0.4 * 0.01, 0.4 + 0.6 * 0.01], atol=1e-12)
    assert np.all(split.block_of_coordinate == -1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 3), min_size=1, max_size=4))
def test_split_block_traces_sum_to_one(seed, sizes):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(len(sizes)))
    zs = [unit(rng.normal(size=m) + 1j * rng.normal(size=m)) for m in sizes]
    split = split_block_rho(BlockModel.simple(p, zs), 0.0)
    assert abs(split.block_traces.sum() - 1) < 1e-10
    np.testing.assert_allclose(split.block_traces, p, atol=1e-10)


# -- imperfect devices -----------------------------------------------------


def leaky_z(leak, n=2):
    base = np.full((n, n), math.sqrt(leak / (n - 1)))
    np.fill_diagonal(base, math.sqrt(1 - leak))
    return base[None, :, :]


def brute_block_probabilities(p, Z, env=None):
    state, labels = imperfect_full_state(p, Z, env)
    rho = reduced_density_matrix(state)
    return np.array([np.trace(rho.entries[np.ix_(labels == i, labels == i)]).real for i in np.unique(labels)]), rho, labels


def test_perfect_device_returns_p():
    p = np.array([0.2, 0.5, 0.3])
    Z = np.eye(3)[None, :, :]
    np.testing.assert_allclose(imperfect_measurement_blocks(p, Z), p, atol=1e-15)


def test_leaky_device_matches_full_state():
    p = np.array([0.7, 0.3])
    Z = leaky_z(0.05)
    blocks = imperfect_measurement_blocks(p, Z)
    brute, _, _ = brute_block_probabilities(p, Z)
    np.testing.assert_allclose(blocks, brute, atol=1e-10)
    assert abs(blocks.sum() - 1) < 1e-10
    # block i collects sum_j p_j |Z_ij|^2, not p_i
    np.testing.assert_allclose(blocks, [0.7 * 0.95 + 0.3 * 0.05, 0.7 * 0.05 + 0.3 * 0.95])


def test_unnormalized_imperfect_state_rejected():
    with pytest.raises(NotNormalizedError):
        imperfect_measurement_blocks([0.5, 0.5], np.ones((1, 2, 2)))


def test_shape_validation():
    with pytest.raises(ValidationError):
        imperfect_measurement_blocks([1.0], np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(1, 2), st.floats(0, 0.2))
def test_imperfect_formula_matches_brute_force(seed, n, m, overlap):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n))
    Z = rng.normal(size=(m, n, n)) + 1j * rng.normal(size=(m, n, n))
    size = n * m
    block = np.kron(np.eye(n), np.ones((m, m)))
    env = np.eye(size) + overlap / m * (np.ones((size, size)) - block)
    env = np.repeat(env[None], n, axis=0).astype(complex)
    # pointers of different outcomes are orthogonal, so only the unit within-block env Gram enters the norm
    Z /= np.linalg.norm(Z, axis=(0, 1), keepdims=True)
    blocks = imperfect_measurement_blocks(p, Z, env)
    brute, _, _ = brute_block_probabilities(p, Z, env)
    np.testing.assert_allclose(blocks, brute, atol=1e-10)
