import math

import numpy as np
import pytest

from risura.constellation import (UndecodableSignal, bits_to_index,
                                  build_subconstellation, demap_factor,
                                  encode_bits, export_codebook, import_codebook,
                                  index_to_bits, min_chordal_distance)
from risura.tensors import outer_rank1, vec


def test_degenerate_codebook():
    cb = build_subconstellation(4, 0, seed=0)
    assert len(cb) == 1
    assert np.allclose(cb.codewords[0], [1, 0, 0, 0])


def test_two_codewords_near_antipodal():
    cb = build_subconstellation(2, 1, seed=3)
    assert len(cb) == 2
    assert cb.min_distance >= 0.9
    gram = abs(np.vdot(cb.codewords[0], cb.codewords[1]))
    assert math.isclose(cb.min_distance, math.sqrt(1 - gram ** 2), rel_tol=1e-9)


def test_codebook_determinism():
    a = build_subconstellation(8, 6, seed=11)
    b = build_subconstellation(8, 6, seed=11)
    assert np.array_equal(a.codewords, b.codewords)
    c = build_subconstellation(8, 6, seed=12)
    assert not np.array_equal(a.codewords, c.codewords)


def test_codebook_unit_norm_and_positive_distance():
    cb = build_subconstellation(8, 6, seed=1)
    assert np.allclose(np.linalg.norm(cb.codewords, axis=1), 1.0)
    assert cb.min_distance > 0.2


def test_codebook_capacity_errors():
    with pytest.raises(ValueError):
        build_subconstellation(8, 17, seed=0)
    with pytest.raises(ValueError):
        build_subconstellation(1, 2, seed=0)


def test_bit_index_round_trip():
    assert bits_to_index((1, 0, 1)) == 5
    assert index_to_bits(5, 3) == (1, 0, 1)
    for idx in range(16):
        assert bits_to_index(index_to_bits(idx, 4)) == idx


def test_encode_matches_outer_product():
    books = [build_subconstellation(2, 1, seed=0),
             build_subconstellation(2, 1, seed=1)]
    sym = encode_bits([(0,), (1,)], books)
    expect = vec(outer_rank1([books[0].codewords[0], books[1].codewords[1]]))
    assert np.allclose(sym.s, expect)
    assert sym.s.shape == (4,)


def test_encode_all_zero_bits_uses_index_zero():
    books = [build_subconstellation(4, 2, seed=0),
             build_subconstellation(4, 3, seed=1)]
    sym = encode_bits([(0, 0), (0, 0, 0)], books)
    assert np.allclose(sym.factors[0], books[0].codewords[0])
    assert np.allclose(sym.factors[1], books[1].codewords[0])


def test_encode_unit_norm():
    books = [build_subconstellation(4, 2, seed=0),
             build_subconstellation(8, 3, seed=1)]
    rng = np.random.default_rng(0)
    for _ in range(20):
        groups = [tuple(rng.integers(0, 2, size=b.bits)) for b in books]
        assert np.isclose(np.linalg.norm(encode_bits(groups, books).s), 1.0)


def test_encode_bit_length_mismatch():
    books = [build_subconstellation(4, 2, seed=0)]
    with pytest.raises(ValueError):
        encode_bits([(0, 1, 1)], books)


def test_demap_scale_and_phase_invariance():
    cb = build_subconstellation(8, 4, seed=5)
    rng = np.random.default_rng(1)
    for m in (0, 3, 15):
        est = 3.7 * np.exp(1.2j) * cb.codewords[m]
        bits, word, margin = demap_factor(est, cb)
        assert bits == index_to_bits(m, 4)
        assert np.allclose(word, cb.codewords[m])
        scalar = (rng.standard_normal() + 1j * rng.standard_normal()) or 1.0
        bits2, _, _ = demap_factor(est * scalar, cb)
        assert bits2 == bits


def test_demap_small_perturbation_sweep():
    cb = build_subconstellation(6, 3, seed=7)
    rng = np.random.default_rng(2)
    radius = 0.1 * cb.min_distance
    for m in range(len(cb)):
        for _ in range(20):
            noise = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            noise *= radius / np.linalg.norm(noise)
            est = cb.codewords[m] + noise
            bits, _, _ = demap_factor(est, cb)
            # exhaustive nearest-neighbor oracle
            nrm = est / np.linalg.norm(est)
            dists = [1 - abs(np.vdot(c, nrm)) ** 2 for c in cb.codewords]
            assert bits == index_to_bits(int(np.argmin(dists)), 3)
            assert bits == index_to_bits(m, 3)


def test_demap_tie_breaks_to_lowest_index():
    cb = build_subconstellation(2, 1, seed=0)
    cb.codewords[0] = np.array([1.0, 0.0])
    cb.codewords[1] = np.array([0.0, 1.0])
    est = np.array([1.0, 1.0]) / math.sqrt(2)  # equidistant
    bits, word, margin = demap_factor(est, cb)
    assert bits == (0,)
    assert margin == 0.0


def test_demap_zero_estimate_rejected():
    cb = build_subconstellation(4, 2, seed=0)
    with pytest.raises(UndecodableSignal):
        demap_factor(np.zeros(4), cb)


def test_round_trip_all_patterns():
    books = [build_subconstellation(4, 2, seed=21),
             build_subconstellation(4, 3, seed=22)]
    for p in range(4):
        for q in range(8):
            groups = [index_to_bits(p, 2), index_to_bits(q, 3)]
            sym = encode_bits(groups, books)
            for i, cb in enumerate(books):
                bits, _, _ = demap_factor(sym.factors[i], cb)
                assert bits == tuple(groups[i])


def test_codebook_export_import_round_trip():
    cb = build_subconstellation(8, 5, seed=33)
    text = export_codebook(cb)
    loaded = import_codebook(text)
    assert np.array_equal(loaded.codewords, cb.codewords)
    with pytest.raises(ValueError):
        import_codebook("garbage v0\n")


def test_min_chordal_distance_known_case():
    words = np.eye(3, dtype=complex)
    assert math.isclose(min_chordal_distance(words), 1.0)
