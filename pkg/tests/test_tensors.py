import numpy as np
import pytest

from risura.tensors import (hadamard, khatri_rao, kruskal, kruskal_unfolding,
                            outer_rank1, refold, unfold, unvec, vec)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def brute_outer(vectors):
    dims = [len(v) for v in vectors]
    out = np.zeros(dims, dtype=complex)
    for idx in np.ndindex(*dims):
        out[idx] = np.prod([vectors[m][idx[m]] for m in range(len(vectors))])
    return out


def test_outer_rank1_basic():
    t = outer_rank1([np.array([1.0, 2.0]), np.array([1.0, 0.0, 1.0])])
    assert t.shape == (2, 3)
    assert np.allclose(t, [[1, 0, 1], [2, 0, 2]])


def test_outer_rank1_singleton():
    t = outer_rank1([np.array([1.0])] * 3)
    assert t.shape == (1, 1, 1)
    assert t[0, 0, 0] == 1.0


def test_outer_rank1_vec_order():
    # derived by brute-force index enumeration
    t = outer_rank1([np.array([1.0, 1.0j]), np.array([2.0, 0.0])])
    assert np.allclose(vec(t), [2.0, 2.0j, 0.0, 0.0])


def test_outer_rank1_matches_bruteforce():
    rng = np.random.default_rng(0)
    vectors = [crandn(rng, n) for n in (3, 2, 4)]
    assert np.allclose(outer_rank1(vectors), brute_outer(vectors))


def test_outer_rank1_rejects_bad_input():
    with pytest.raises(ValueError):
        outer_rank1([])
    with pytest.raises(ValueError):
        outer_rank1([np.array([1.0])])
    with pytest.raises(ValueError):
        outer_rank1([np.array([1.0]), np.array([])])


def test_vec_is_descending_kron():
    rng = np.random.default_rng(1)
    for _ in range(100):
        dims = rng.integers(1, 5, size=rng.integers(2, 5))
        vectors = [crandn(rng, n) for n in dims]
        lhs = vec(outer_rank1(vectors))
        rhs = vectors[-1]
        for v in vectors[-2::-1]:
            rhs = np.kron(rhs, v)
        assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


def test_kruskal_single_column_is_outer():
    f = [np.array([[1.0], [2.0]]), np.array([[1.0], [0.0], [1.0]])]
    assert np.allclose(kruskal(f), [[1, 0, 1], [2, 0, 2]])


def test_kruskal_zero_column_contributes_nothing():
    rng = np.random.default_rng(2)
    cols = [crandn(rng, n) for n in (2, 3)]
    one = [c.reshape(-1, 1) for c in cols]
    two = [np.column_stack([c, np.zeros_like(c)]) for c in cols]
    assert np.allclose(kruskal(one), kruskal(two))


def brute_kruskal(factors):
    dims = [f.shape[0] for f in factors]
    k = factors[0].shape[1]
    out = np.zeros(dims, dtype=complex)
    for idx in np.ndindex(*dims):
        for j in range(k):
            out[idx] += np.prod([factors[m][idx[m], j]
                                 for m in range(len(factors))])
    return out


def test_kruskal_matches_brute_force():
    rng = np.random.default_rng(3)
    factors = [crandn(rng, 2, 2), crandn(rng, 3, 2), crandn(rng, 2, 2)]
    assert np.allclose(kruskal(factors), brute_kruskal(factors), atol=1e-12)


def test_kruskal_rejects_column_mismatch():
    with pytest.raises(ValueError):
        kruskal([np.ones((2, 2)), np.ones((3, 1))])


def test_unfold_matrix_identity():
    rng = np.random.default_rng(4)
    a = crandn(rng, 2, 3)
    assert np.allclose(unfold(a, 1), a)
    assert np.allclose(unfold(a, 2), a.T)


def test_unfold_rank1_example():
    t = outer_rank1([np.array([1.0, 2.0]), np.array([3.0, 4.0])])
    assert np.allclose(unfold(t, 2), [[3, 6], [4, 8]])


def test_unfold_refold_roundtrip():
    rng = np.random.default_rng(5)
    t = crandn(rng, 2, 3, 4)
    for mode in (1, 2, 3):
        assert np.allclose(refold(unfold(t, mode), mode, t.shape), t)


def test_unfold_mode_out_of_range():
    with pytest.raises(IndexError):
        unfold(np.ones((2, 2)), 3)
    with pytest.raises(IndexError):
        unfold(np.ones((2, 2)), 0)


def test_khatri_rao_single_columns():
    out = khatri_rao([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])])
    assert np.allclose(out, [[3], [4], [6], [8]])


def test_khatri_rao_ones_row_identity():
    rng = np.random.default_rng(6)
    a = crandn(rng, 3, 4)
    ones = np.ones((1, 4))
    assert np.allclose(khatri_rao([ones, a]), a)


def test_khatri_rao_gram_identity():
    rng = np.random.default_rng(7)
    a = crandn(rng, 3, 2)
    b = crandn(rng, 4, 2)
    kr = khatri_rao([a, b])
    lhs = kr.T @ kr.conj()
    rhs = (a.T @ a.conj()) * (b.T @ b.conj())
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_khatri_rao_rejects_mismatch():
    with pytest.raises(ValueError):
        khatri_rao([np.ones((2, 2)), np.ones((3, 3))])


def test_hadamard_identities():
    rng = np.random.default_rng(8)
    a = crandn(rng, 2, 2)
    assert np.allclose(hadamard([a, np.ones_like(a)]), a)
    assert np.allclose(hadamard([a, np.zeros_like(a)]), 0)


def test_hadamard_triple_matches_scalar_loop():
    rng = np.random.default_rng(9)
    mats = [crandn(rng, 2, 2) for _ in range(3)]
    out = hadamard(mats)
    for i in range(2):
        for j in range(2):
            assert np.isclose(out[i, j], mats[0][i, j] * mats[1][i, j] * mats[2][i, j])


def test_hadamard_rejects_mismatch():
    with pytest.raises(ValueError):
        hadamard([np.ones((2, 2)), np.ones((2, 3))])


def test_unfold_of_kruskal_is_factor_times_khatri_rao():
    rng = np.random.default_rng(10)
    for _ in range(100):
        k = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(2, 5, size=3)]
        factors = [crandn(rng, n, k) for n in dims]
        t = kruskal(factors)
        for mode in (1, 2, 3):
            lhs = unfold(t, mode)
            rhs = kruskal_unfolding(factors, mode)
            assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(rhs), 1)


def test_kruskal_norm_invariant_under_column_permutation():
    rng = np.random.default_rng(11)
    factors = [crandn(rng, n, 4) for n in (3, 2, 4)]
    perm = rng.permutation(4)
    permuted = [f[:, perm] for f in factors]
    assert np.isclose(np.linalg.norm(kruskal(factors)),
                      np.linalg.norm(kruskal(permuted)))


def test_unvec_rejects_bad_size():
    with pytest.raises(ValueError):
        unvec(np.ones(5), (2, 3))
