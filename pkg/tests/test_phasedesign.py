import math

import numpy as np
import pytest

from risura.channel import GeometryConfig, steering_ris
from risura.phasedesign import (SdpSolution, coupled_response, design_weights,
                                effective_matrix, gaussian_randomization,
                                min_gain, random_phase, solve_phase_sdp)
from risura.sdp import solve_maxmin_phase


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_random_phase_unit_modulus():
    rng = np.random.default_rng(0)
    v = random_phase(1, rng)
    assert v.shape == (1,)
    v = random_phase(64, rng)
    assert np.allclose(np.abs(v), 1.0)


def test_random_phase_mean_is_near_zero():
    rng = np.random.default_rng(1)
    samples = random_phase(100000, rng)
    assert abs(samples.mean()) < 0.01


def test_sdp_single_device_basis_vector():
    # objective Tr(A V) = V(1,1) = 1 for abar = e1 regardless of off-diagonals
    abar = [np.array([1.0, 0, 0, 0], dtype=complex)]
    sol = solve_phase_sdp(abar, [1.0])
    assert math.isclose(sol.objective, 1.0, rel_tol=1e-4)
    _assert_feasible(sol.v)


def test_sdp_single_device_constant_modulus_closed_form():
    # all |abar_n| equal: optimum w * (sum |abar_n|)^2 by phase alignment
    rng = np.random.default_rng(2)
    n = 8
    c = 0.7
    abar = [c * np.exp(2j * np.pi * rng.uniform(size=n))]
    w = 2.5
    sol = solve_phase_sdp(abar, [w])
    expect = w * (c * n) ** 2
    assert abs(sol.objective - expect) <= 1e-4 * expect
    _assert_feasible(sol.v)


def test_sdp_two_orthogonal_devices_beats_random_search():
    rng = np.random.default_rng(3)
    a1 = np.array([1, 1, 0, 0], dtype=complex) / math.sqrt(2)
    a2 = np.array([0, 0, 1, -1], dtype=complex) / math.sqrt(2)
    sol = solve_phase_sdp([a1, a2], [1.0, 1.0])
    best = 0.0
    for _ in range(10000):
        v = np.exp(2j * np.pi * rng.uniform(size=4))
        best = max(best, min_gain(v, [a1, a2], [1.0, 1.0]))
    assert sol.objective >= best - 1e-6


def _assert_feasible(v_mat):
    assert np.allclose(v_mat, v_mat.conj().T, atol=1e-10)
    assert np.linalg.eigvalsh(v_mat).min() >= -1e-8
    assert np.max(np.abs(np.real(np.diagonal(v_mat)) - 1.0)) <= 1e-8


def test_sdp_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_maxmin_phase([], [])
    with pytest.raises(ValueError):
        solve_maxmin_phase([np.zeros(4)], [1.0])


def test_randomization_rank_one_covariance():
    rng = np.random.default_rng(4)
    v0 = np.exp(2j * np.pi * rng.uniform(size=6))
    sol = SdpSolution(np.outer(v0, v0.conj()), 0.0, 0, 0.0)
    abar = [crandn(rng, 6)]
    w = [1.0]
    out = gaussian_randomization(sol, abar, w, 5, rng)
    assert np.allclose(np.abs(out), 1.0)
    assert math.isclose(min_gain(out, abar, w), min_gain(v0, abar, w), rel_tol=1e-9)


def test_randomization_best_so_far_monotone():
    rng = np.random.default_rng(5)
    n = 8
    abar = [crandn(rng, n) for _ in range(3)]
    w = [1.0, 2.0, 0.5]
    v = np.eye(n, dtype=complex)
    vals = []
    for j in (1, 10, 100):
        out = gaussian_randomization(SdpSolution(v, 0, 0, 0), abar, w, j,
                                     np.random.default_rng(77))
        vals.append(min_gain(out, abar, w))
    assert vals[0] <= vals[1] <= vals[2]


def test_randomization_reaches_most_of_the_bound():
    rng = np.random.default_rng(6)
    n = 8
    c = 1.0
    abar = [c * np.exp(2j * np.pi * rng.uniform(size=n))]
    w = [1.0]
    sol = solve_phase_sdp(abar, w)
    for trial in range(20):
        out = gaussian_randomization(sol, abar, w, 50, np.random.default_rng(trial))
        assert min_gain(out, abar, w) >= 0.8 * sol.objective


def test_effective_matrix_identities():
    rng = np.random.default_rng(7)
    u = crandn(rng, 4, 6)
    a_r = crandn(rng, 6, 9)
    ones = np.ones(6)
    assert np.allclose(effective_matrix(u, ones, a_r), u @ a_r)
    v = np.exp(2j * np.pi * rng.uniform(size=3))
    assert np.allclose(effective_matrix(np.eye(3), v, np.eye(3)), np.diag(v))
    # rearrangement identity: P lam = U diag(A_R lam) v
    v6 = np.exp(2j * np.pi * rng.uniform(size=6))
    p = effective_matrix(u, v6, a_r)
    for _ in range(10):
        lam = crandn(rng, 9)
        lhs = p @ lam
        rhs = u @ np.diag(a_r @ lam) @ v6
        assert np.allclose(lhs, rhs, atol=1e-12 * max(1, np.abs(rhs).max()))
    with pytest.raises(ValueError):
        effective_matrix(u, np.ones(5), a_r)


def test_global_phase_invariance_of_min_gain():
    rng = np.random.default_rng(8)
    abar = [crandn(rng, 6) for _ in range(2)]
    w = [1.0, 3.0]
    v = np.exp(2j * np.pi * rng.uniform(size=6))
    g0 = min_gain(v, abar, w)
    g1 = min_gain(np.exp(1.234j) * v, abar, w)
    assert math.isclose(g0, g1, rel_tol=1e-12)


def test_optimized_dominates_single_random_draw():
    rng = np.random.default_rng(9)
    n, k = 16, 4
    wins = 0
    trials = 100
    for t in range(trials):
        abar = [crandn(rng, n) / math.sqrt(2) for _ in range(k)]
        w = list(rng.uniform(0.5, 2.0, size=k))
        sol = solve_phase_sdp(abar, w, tol=1e-5)
        opt = gaussian_randomization(sol, abar, w, 50, rng)
        rand = random_phase(n, rng)
        if min_gain(opt, abar, w) >= min_gain(rand, abar, w):
            wins += 1
    assert wins >= 95


def test_coupled_response_and_weights():
    g = GeometryConfig(n1=2, n2=2)
    dev = steering_ris(0.3, 0.1, g)
    ris = steering_ris(-0.5, 0.2, g)
    ab = coupled_response(dev, ris)
    assert np.allclose(ab, np.conj(ris) * dev)
    w = design_weights([500.0, 1000.0], d_rb=100.0, wavelength=0.1)
    assert w[0] == pytest.approx(4.0 * w[1])
