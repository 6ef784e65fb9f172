import math

import numpy as np
import pytest

from risura.channel import (GeometryConfig, build_dictionary, grid_node,
                            path_loss, sample_device_channel, sample_realization,
                            sample_ris_bs, steering_bs, steering_ris)
from risura.phasedesign import effective_matrix
from risura.textio import load_realization, save_realization


def test_steering_ris_singleton():
    g = GeometryConfig(n1=1, n2=1)
    assert np.allclose(steering_ris(0.3, -0.2, g), [1.0])


def test_steering_ris_zero_phase_axis():
    # with phi = psi = 0 the N1-axis argument cos(psi) sin(phi) vanishes
    g = GeometryConfig(n1=2, n2=1)
    v = steering_ris(0.0, 0.0, g)
    assert np.allclose(v, np.array([1.0, 1.0]) / math.sqrt(2))


def test_steering_ris_unit_norm():
    g = GeometryConfig(n1=4, n2=3)
    rng = np.random.default_rng(0)
    for _ in range(100):
        phi = rng.uniform(-np.pi, np.pi)
        psi = rng.uniform(-np.pi / 2, np.pi / 2)
        assert np.isclose(np.linalg.norm(steering_ris(phi, psi, g)), 1.0)


def test_steering_bs_norm_and_zero_angle():
    assert np.allclose(steering_bs(0.4, 1), [1.0])
    v = steering_bs(0.0, 5)
    assert np.allclose(v, np.ones(5))
    rng = np.random.default_rng(1)
    for m in (2, 4, 8):
        for _ in range(10):
            v = steering_bs(rng.uniform(-np.pi / 2, np.pi / 2), m)
            assert np.isclose(np.linalg.norm(v) ** 2, m)


def test_dictionary_trivial_and_unit_columns():
    g = GeometryConfig(n1=1, n2=1, grid_ratio=1.0)
    assert np.allclose(build_dictionary(g), [[1.0]])
    g = GeometryConfig(n1=4, n2=4, grid_ratio=1.5)
    a_r = build_dictionary(g)
    assert a_r.shape == (16, 36)
    assert np.allclose(np.linalg.norm(a_r, axis=0), 1.0)


def test_dictionary_unitary_at_exact_resolution():
    g = GeometryConfig(n1=4, n2=4, grid_ratio=1.0)
    a_r = build_dictionary(g)
    assert a_r.shape == (16, 16)
    assert np.allclose(a_r.conj().T @ a_r, np.eye(16), atol=1e-12)


def test_ris_bs_single_path_rank_one():
    g = GeometryConfig(m=4, n1=2, n2=2, ris_paths=1)
    u, paths = sample_ris_bs(g, np.random.default_rng(2))
    assert np.linalg.matrix_rank(u) == 1
    # reconstruct from the reported path
    p = paths[0]
    mu = path_loss(g.d_rb, g.wavelength)
    expect = (math.sqrt(mu) * p.gain
              * np.outer(steering_bs(p.sigma, g.m, g),
                         steering_ris(p.phi, p.psi, g).conj()))
    assert np.allclose(u, expect)


def test_ris_bs_rank_bound():
    g = GeometryConfig(m=8, n1=4, n2=2, ris_paths=3)
    u, _ = sample_ris_bs(g, np.random.default_rng(3))
    assert np.linalg.matrix_rank(u) <= 3


def test_ris_bs_energy_moment():
    # E||U||_F^2 = mu * paths * M (unit-norm RIS response, |ab|^2 norm M)
    g = GeometryConfig(m=4, n1=2, n2=2, ris_paths=2, d_rb=10.0, wavelength=0.5)
    rng = np.random.default_rng(4)
    mu = path_loss(g.d_rb, g.wavelength)
    total = 0.0
    n = 10000
    for _ in range(n):
        u, _ = sample_ris_bs(g, rng)
        total += np.linalg.norm(u) ** 2
    expected = mu * g.ris_paths * g.m
    assert abs(total / n - expected) <= 0.05 * expected


def test_device_channel_single_on_grid_path_is_one_hot():
    g = GeometryConfig(n1=2, n2=2, grid_ratio=1.0, device_paths=1,
                       angular_spread_deg=0.0)
    a_r = build_dictionary(g)
    dev = sample_device_channel(g, a_r, np.random.default_rng(5))
    nz = np.nonzero(dev.lam)[0]
    assert len(nz) == 1
    assert nz[0] == dev.dominant_node
    assert np.allclose(dev.h, a_r[:, nz[0]] * dev.lam[nz[0]])


def test_device_channel_sparsity_and_consistency():
    g = GeometryConfig(n1=4, n2=4, grid_ratio=1.5, device_paths=3)
    a_r = build_dictionary(g)
    rng = np.random.default_rng(6)
    for _ in range(50):
        dev = sample_device_channel(g, a_r, rng)
        assert np.count_nonzero(dev.lam) == g.device_paths
        assert np.allclose(dev.h, a_r @ dev.lam)


def test_device_channel_energy_moment():
    g = GeometryConfig(n1=2, n2=2, grid_ratio=1.0, device_paths=2,
                       d_min=10.0, d_max=10.0, wavelength=0.5)
    a_r = build_dictionary(g)
    rng = np.random.default_rng(7)
    mu = path_loss(10.0, g.wavelength)
    total = 0.0
    n = 10000
    for _ in range(n):
        dev = sample_device_channel(g, a_r, rng)
        total += np.linalg.norm(dev.h) ** 2
    # on-grid columns are unit norm and nodes are distinct (orthogonal at
    # exact resolution), so E||h||^2 = mu * paths
    expected = mu * g.device_paths
    assert abs(total / n - expected) <= 0.05 * expected


def test_grid_node_roundtrip():
    g = GeometryConfig(n1=4, n2=4, grid_ratio=1.5)
    p, q = grid_node(0.0, 0.0, g)
    assert 0 <= p < g.n1p and 0 <= q < g.n2p


def test_realization_invariants_and_effective_identity():
    g = GeometryConfig(m=4, n1=2, n2=2, grid_ratio=1.5)
    rng = np.random.default_rng(8)
    real = sample_realization(g, 3, rng)
    assert np.allclose(real.h, real.a_r @ real.lam)
    assert np.allclose(real.u_hat, real.u)
    # U diag(A_R lam) v == (U diag(v) A_R) lam for random phases
    v = np.exp(2j * np.pi * rng.uniform(size=g.n))
    p = effective_matrix(real.u_hat, v, real.a_r)
    for k in range(3):
        lhs = real.u_hat @ np.diag(real.a_r @ real.lam[:, k]) @ v
        rhs = p @ real.lam[:, k]
        assert np.allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()))


def test_realization_perturbed_estimate():
    g = GeometryConfig(m=4, n1=2, n2=2)
    real = sample_realization(g, 2, np.random.default_rng(9), u_hat_rel_err=0.1)
    rel = np.linalg.norm(real.u_hat - real.u) ** 2 / np.linalg.norm(real.u) ** 2
    assert 0.01 < rel < 1.0


def test_realization_serialization_roundtrip(tmp_path):
    g = GeometryConfig(m=4, n1=2, n2=2, grid_ratio=1.5)
    real = sample_realization(g, 2, np.random.default_rng(10))
    path = tmp_path / "real.txt"
    save_realization(str(path), real)
    loaded = load_realization(str(path))
    assert np.allclose(loaded.a_r, real.a_r)
    assert np.allclose(loaded.u, real.u)
    assert np.allclose(loaded.u_hat, real.u_hat)
    assert np.allclose(loaded.lam, real.lam)
    assert np.allclose(loaded.h, real.h)
    assert loaded.devices[0].dominant_node == real.devices[0].dominant_node


def test_geometry_validation():
    with pytest.raises(ValueError):
        GeometryConfig(d_min=10.0, d_max=5.0)
    with pytest.raises(ValueError):
        GeometryConfig(grid_ratio=0.5)
