"""Two-stage comparison baseline: per-subblock CP-ALS with the compressed
channel factor treated as free, followed by per-column l1 (LASSO) recovery of
the sparse angular channel by proximal gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensors import hadamard, khatri_rao, unfold


@dataclass
class AlsState:
    factors: List[np.ndarray]       # per-mode estimates; the last one is G_bar
    residuals: List[float] = field(default_factory=list)

    @property
    def g_bar(self) -> np.ndarray:
        return self.factors[-1]


def als_fit(y: np.ndarray, k: int, sweeps: int = 30,
            rng: Optional[np.random.Generator] = None,
            ridge: float = 1e-10) -> AlsState:
    """Classic CP-ALS on one order-(d+1) tensor with column budget ``k``."""
    if k < 1:
        raise ValueError("column budget must be >= 1")
    y = np.asarray(y, dtype=complex)
    rng = rng if rng is not None else np.random.default_rng(0)
    order = y.ndim
    dims = y.shape
    factors = []
    for n in dims:
        w = (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)))
        factors.append(w / np.linalg.norm(w, axis=0, keepdims=True))
    unfoldings = [unfold(y, mode) for mode in range(1, order + 1)]
    norm_y2 = float(np.linalg.norm(unfoldings[0]) ** 2)
    state = AlsState(factors)
    grams = [f.conj().T @ f for f in factors]
    for _ in range(sweeps):
        for mode in range(order):
            others_desc = [factors[j] for j in range(order - 1, -1, -1) if j != mode]
            kr = khatri_rao(others_desc)
            gram = hadamard([grams[j] for j in range(order) if j != mode]).conj()
            gram += ridge * np.trace(gram).real / k * np.eye(k)
            sol = np.linalg.solve(gram.T, (unfoldings[mode] @ kr.conj()).T).T
            factors[mode] = sol
            grams[mode] = sol.conj().T @ sol
        recon = factors[-1] @ khatri_rao(factors[-2::-1]).T
        resid = float(np.linalg.norm(unfoldings[-1] - recon) ** 2)
        state.residuals.append(resid / max(norm_y2, 1e-300))
    state.factors = factors
    return state


def soft_threshold(z: np.ndarray, t: float) -> np.ndarray:
    """Complex soft threshold: shrink the modulus of each entry by ``t``."""
    mag = np.abs(z)
    scale = np.maximum(0.0, 1.0 - t / np.where(mag > 0, mag, 1.0))
    return z * scale


def lasso_path(b_list: Sequence[np.ndarray], p_list: Sequence[np.ndarray],
               lam: float, tol: float = 1e-8, max_iters: int = 2000
               ) -> Tuple[np.ndarray, List[float]]:
    """minimize sum_l ||b_l - P_l g||^2 + lam ||g||_1 by ISTA.

    Returns (g, objective trace); the trace is monotone non-increasing.
    """
    ps = [np.asarray(p, dtype=complex) for p in p_list]
    bs = [np.asarray(b, dtype=complex).reshape(-1) for b in b_list]
    n = ps[0].shape[1]
    gram = sum(p.conj().T @ p for p in ps)
    corr = sum(p.conj().T @ b for p, b in zip(ps, bs))
    lip = 2.0 * float(np.linalg.eigvalsh(gram).max())
    step = 1.0 / max(lip, 1e-300)
    g = np.zeros(n, dtype=complex)
    const = sum(float(np.linalg.norm(b) ** 2) for b in bs)

    def objective(x: np.ndarray) -> float:
        quad = float(np.real(x.conj() @ gram @ x - 2.0 * np.real(corr.conj() @ x)))
        return const + quad + lam * float(np.sum(np.abs(x)))

    trace = [objective(g)]
    for _ in range(max_iters):
        grad = 2.0 * (gram @ g - corr)
        g_new = soft_threshold(g - step * grad, step * lam)
        obj = objective(g_new)
        trace.append(obj)
        g = g_new
        if abs(trace[-2] - trace[-1]) <= tol * max(abs(trace[-2]), 1e-12):
            break
    return g, trace


def lasso_recover(g_bars: Sequence[np.ndarray], p_list: Sequence[np.ndarray],
                  lambda_reg: Optional[float] = None) -> np.ndarray:
    """Recover sparse G columns from per-subblock compressed estimates.

    ``lambda_reg=None`` selects, per column, the largest weight from a small
    logarithmic grid whose residual stays within 10% of the best residual
    found on the grid.
    """
    g_bars = [np.asarray(g) for g in g_bars]
    k = g_bars[0].shape[1]
    n = np.asarray(p_list[0]).shape[1]
    out = np.zeros((n, k), dtype=complex)
    for col in range(k):
        bs = [g[:, col] for g in g_bars]
        if lambda_reg is not None:
            out[:, col], _ = lasso_path(bs, p_list, lambda_reg)
            continue
        corr = sum(np.asarray(p).conj().T @ b for p, b in zip(p_list, bs))
        lam_max = float(np.max(np.abs(corr)))
        if lam_max == 0:
            continue
        grid = lam_max * np.logspace(-4, -0.5, 8)
        fits = []
        for lam in grid:
            g, _ = lasso_path(bs, p_list, lam)
            resid = sum(float(np.linalg.norm(b - np.asarray(p) @ g) ** 2)
                        for p, b in zip(p_list, bs))
            fits.append((lam, g, resid))
        best_resid = min(f[2] for f in fits)
        chosen = max((f for f in fits if f[2] <= 1.1 * best_resid + 1e-300),
                     key=lambda f: f[0])
        out[:, col] = chosen[1]
    return out


def _align_columns(reference: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Greedy column permutation of ``target`` maximizing |correlation| with
    the reference columns (the baseline's cross-subblock alignment)."""
    k = reference.shape[1]
    ref = reference / np.maximum(np.linalg.norm(reference, axis=0, keepdims=True), 1e-300)
    tgt = target / np.maximum(np.linalg.norm(target, axis=0, keepdims=True), 1e-300)
    corr = np.abs(ref.conj().T @ tgt)
    perm = -np.ones(k, dtype=int)
    used = set()
    for _ in range(k):
        i, j = np.unravel_index(np.argmax(corr), corr.shape)
        perm[i] = j
        used.add(j)
        corr[i, :] = -1
        corr[:, j] = -1
    return target[:, perm]


def two_stage_estimate(ys: Sequence[np.ndarray], ps: Sequence[np.ndarray],
                       k: int, sweeps: int = 30,
                       rng: Optional[np.random.Generator] = None,
                       lambda_reg: Optional[float] = None) -> np.ndarray:
    """ALS per subblock, greedy column alignment to subblock 1, then LASSO."""
    rng = rng if rng is not None else np.random.default_rng(0)
    states = [als_fit(y, k, sweeps=sweeps, rng=rng) for y in ys]
    g_bars = [states[0].g_bar]
    for st in states[1:]:
        g_bars.append(_align_columns(states[0].g_bar, st.g_bar))
    return lasso_recover(g_bars, ps, lambda_reg=lambda_reg)
