"""Grassmannian sub-constellations, bit-to-tensor-symbol mapping, and
nearest-codeword demapping with scalar-ambiguity resolution.

Codewords are unit-norm vectors compared by chordal distance
d(a, b) = sqrt(1 - |a^H b|^2), which is invariant to per-codeword complex
scaling; the demapper therefore resolves symbols up to the global gain that
the decomposition absorbs into the channel column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from .tensors import outer_rank1, vec

MAX_BITS = 16


class UndecodableSignal(ValueError):
    """Raised when an estimate carries no usable signal (zero vector)."""


@dataclass
class SubConstellation:
    dim: int
    bits: int
    seed: int
    codewords: np.ndarray      # (2**bits, dim), unit-norm rows
    min_distance: float

    def __len__(self) -> int:
        return self.codewords.shape[0]


@dataclass
class SymbolTensor:
    factors: List[np.ndarray]  # one codeword per mode

    @property
    def s(self) -> np.ndarray:
        return vec(outer_rank1(self.factors))


def _unit_rows(w: np.ndarray) -> np.ndarray:
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def min_chordal_distance(codewords: np.ndarray) -> float:
    if codewords.shape[0] < 2:
        return math.inf
    gram = codewords @ codewords.conj().T
    coh = np.abs(gram)
    np.fill_diagonal(coh, 0.0)
    worst = float(coh.max())
    return math.sqrt(max(0.0, 1.0 - min(worst, 1.0) ** 2))


def build_subconstellation(tau_i: int, bits: int, seed: int,
                           refine_iters: int = 300) -> SubConstellation:
    """Seeded random packing refined by coherence repulsion.

    Gradient steps on sum_ij |c_i^H c_j|^(2p) with a high exponent push the
    worst pairs apart (a Lloyd-style repulsion); rows stay unit-norm.
    Results are cached per (dim, bits, seed, iters); treat the returned
    codewords as read-only.
    """
    return _build_subconstellation_cached(tau_i, bits, seed, refine_iters)


@lru_cache(maxsize=64)
def _build_subconstellation_cached(tau_i: int, bits: int, seed: int,
                                   refine_iters: int) -> SubConstellation:
    if tau_i < 2:
        raise ValueError("sub-constellation dimension must be >= 2")
    if bits < 0 or bits > MAX_BITS:
        raise ValueError(f"bits per symbol must lie in [0, {MAX_BITS}]")
    m = 1 << bits
    if bits == 0:
        cw = np.zeros((1, tau_i), dtype=complex)
        cw[0, 0] = 1.0
        return SubConstellation(tau_i, 0, seed, cw, math.inf)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, tau_i)) + 1j * rng.standard_normal((m, tau_i))
    w = _unit_rows(w)
    power = 4
    for it in range(refine_iters):
        gram = w @ w.conj().T
        np.fill_diagonal(gram, 0.0)
        weight = np.abs(gram) ** (2 * (power - 1))
        grad = (weight * gram) @ w
        step = 0.5 * (1.0 - it / refine_iters) + 0.05
        scale = np.abs(grad).max()
        if scale > 0:
            w = _unit_rows(w - step / scale * grad)
    return SubConstellation(tau_i, bits, seed, w, min_chordal_distance(w))


def bits_to_index(bits: Sequence[int]) -> int:
    """Big-endian bit group to codeword index."""
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx


def index_to_bits(idx: int, width: int) -> Tuple[int, ...]:
    return tuple((idx >> (width - 1 - i)) & 1 for i in range(width))


def encode_bits(bit_groups: Sequence[Sequence[int]],
                codebooks: Sequence[SubConstellation]) -> SymbolTensor:
    """Map one bit group per mode onto codewords and form the rank-1 symbol."""
    if len(bit_groups) != len(codebooks):
        raise ValueError("need one bit group per codebook")
    factors = []
    for group, cb in zip(bit_groups, codebooks):
        if len(group) != cb.bits:
            raise ValueError(f"bit group of length {len(group)} for a "
                             f"{cb.bits}-bit codebook")
        factors.append(cb.codewords[bits_to_index(group)].copy())
    return SymbolTensor(factors)


def demap_factor(estimate: np.ndarray, codebook: SubConstellation
                 ) -> Tuple[Tuple[int, ...], np.ndarray, float]:
    """Nearest codeword in chordal distance; returns (bits, codeword, margin).

    The margin is the gap between the best and second-best distances (inf for
    single-codeword books).  Ties break to the lowest index.
    """
    est = np.asarray(estimate).reshape(-1)
    if est.shape[0] != codebook.dim:
        raise ValueError("estimate length does not match the codebook")
    nrm = np.linalg.norm(est)
    if nrm == 0 or not np.isfinite(nrm):
        raise UndecodableSignal("zero or non-finite factor estimate")
    est = est / nrm
    coh = np.abs(codebook.codewords.conj() @ est)
    dist = np.sqrt(np.clip(1.0 - np.minimum(coh, 1.0) ** 2, 0.0, None))
    best = int(np.argmin(dist))
    if len(dist) > 1:
        second = float(np.partition(dist, 1)[1])
        margin = second - float(dist[best])
    else:
        margin = math.inf
    return index_to_bits(best, codebook.bits), codebook.codewords[best].copy(), margin


def export_codebook(cb: SubConstellation) -> str:
    """Textual form carrying the construction parameters (the receiver can
    rebuild bit-identical codewords from them)."""
    return ("risura-codebook v1\n"
            f"dim {cb.dim}\n"
            f"bits {cb.bits}\n"
            f"seed {cb.seed}\n"
            f"min_distance {cb.min_distance!r}\n")


def import_codebook(text: str) -> SubConstellation:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if not lines or lines[0] != "risura-codebook v1":
        raise ValueError("unrecognized codebook header")
    fields = dict(ln.split(None, 1) for ln in lines[1:])
    cb = build_subconstellation(int(fields["dim"]), int(fields["bits"]),
                                int(fields["seed"]))
    recorded = float(fields["min_distance"])
    if math.isfinite(recorded) and not math.isclose(recorded, cb.min_distance,
                                                    rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("codebook reconstruction mismatch; incompatible build")
    return cb
