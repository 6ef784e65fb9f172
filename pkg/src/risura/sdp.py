"""Bundled small-scale conic solver for the max-min phase-shift relaxation.

Solves, over a Hermitian matrix V and scalars (t, s):

    maximize  t
    s.t.      V(n, n) = 1                      n = 1..N
              w_k <A_k, V> - t - s_k = 0       k = 1..K,  A_k = a_k a_k^H
              V PSD,  s >= 0

via ADMM splitting between the affine subspace (linear solve against a
Cholesky-factored Gram matrix, built once) and the product cone
PSD x R x R+^K (eigenvalue clipping).  Intended scale is N <= 64 with a
handful of devices, where the per-iteration eigendecomposition is cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg as sla


class SdpNonConvergence(RuntimeError):
    """Iteration cap reached; ``best`` carries the last polished iterate as
    (V, objective, iterations, feasibility_residual)."""

    def __init__(self, message: str, best):
        super().__init__(message)
        self.best = best


@dataclass
class _Iterate:
    v: np.ndarray
    t: float
    s: np.ndarray


def _combine(alpha: float, x: _Iterate, beta: float, y: _Iterate) -> _Iterate:
    return _Iterate(alpha * x.v + beta * y.v, alpha * x.t + beta * y.t,
                    alpha * x.s + beta * y.s)


def _norm(x: _Iterate) -> float:
    val = np.real(np.vdot(x.v, x.v)) + x.t * x.t + x.s @ x.s
    return math.sqrt(max(float(val), 0.0))


def _psd_project(v: np.ndarray) -> np.ndarray:
    v = 0.5 * (v + v.conj().T)
    w, q = np.linalg.eigh(v)
    w = np.clip(w, 0.0, None)
    return (q * w) @ q.conj().T


def solve_maxmin_phase(abar: Sequence[np.ndarray], weights: Sequence[float],
                       tol: float = 1e-6, max_iters: int = 5000,
                       rho: float = 1.0) -> Tuple[np.ndarray, float, int, float]:
    """Returns (V, objective, iterations, feasibility_residual).

    The returned V is polished to satisfy the feasibility invariants exactly
    (Hermitian, PSD, unit diagonal); the objective is the achieved
    min_k w_k Tr(A_k V) of the polished matrix.
    """
    vecs = [np.asarray(a, dtype=complex).reshape(-1) for a in abar]
    w = np.asarray(weights, dtype=float)
    if len(vecs) == 0 or len(vecs) != w.size:
        raise ValueError("need one weight per device vector")
    n = vecs[0].size
    if any(v.size != n for v in vecs):
        raise ValueError("device vectors must share a common length")
    if any(np.linalg.norm(v) == 0 for v in vecs):
        raise ValueError("device vectors must be nonzero")
    k = len(vecs)

    # Weighted device matrices w_k a_k a_k^H; the N diagonal pins are handled
    # implicitly (their normals are the unit diagonal matrices E_nn).
    dev_mats: List[np.ndarray] = [w[j] * np.outer(vecs[j], vecs[j].conj())
                                  for j in range(k)]

    def residuals(x: _Iterate) -> np.ndarray:
        out = np.empty(n + k)
        out[:n] = np.real(np.diagonal(x.v)) - 1.0
        for j in range(k):
            out[n + j] = np.real(np.vdot(dev_mats[j], x.v)) - x.t - x.s[j]
        return out

    # Gram matrix of the constraint normals under Re<.,.>, factorized once.
    gram = np.zeros((n + k, n + k))
    gram[:n, :n] = np.eye(n)
    for j in range(k):
        gram[:n, n + j] = gram[n + j, :n] = np.real(np.diagonal(dev_mats[j]))
        for i in range(j, k):
            g = np.real(np.vdot(dev_mats[j], dev_mats[i])) + 1.0 + (1.0 if i == j else 0.0)
            gram[n + j, n + i] = gram[n + i, n + j] = g
    gram += 1e-12 * (np.trace(gram) / (n + k)) * np.eye(n + k)
    gram_cf = sla.cho_factor(gram)

    def project_affine(x: _Iterate) -> _Iterate:
        alpha = sla.cho_solve(gram_cf, residuals(x))
        v = x.v.copy()
        t = x.t
        s = x.s.copy()
        v[np.diag_indices(n)] -= alpha[:n]
        for j in range(k):
            v -= alpha[n + j] * dev_mats[j]
            t += alpha[n + j]
            s[j] += alpha[n + j]
        return _Iterate(v, t, s)

    def project_cone(x: _Iterate) -> _Iterate:
        return _Iterate(_psd_project(x.v), x.t, np.clip(x.s, 0.0, None))

    c = _Iterate(np.zeros((n, n), dtype=complex), -1.0, np.zeros(k))  # minimize -t
    y = _Iterate(np.eye(n, dtype=complex), 0.0, np.zeros(k))
    u = _combine(0.0, y, 0.0, y)
    relax = 1.6
    dim = math.sqrt(n * n + 1 + k)
    for it in range(1, max_iters + 1):
        x = project_affine(_combine(1.0, _combine(1.0, y, -1.0, u), -1.0 / rho, c))
        x_rel = _combine(relax, x, 1.0 - relax, y)
        y_new = project_cone(_combine(1.0, x_rel, 1.0, u))
        u = _combine(1.0, u, 1.0, _combine(1.0, x_rel, -1.0, y_new))
        r_prim = _norm(_combine(1.0, x, -1.0, y_new))
        r_dual = rho * _norm(_combine(1.0, y_new, -1.0, y))
        y = y_new
        eps_pri = dim * 1e-10 + tol * max(_norm(x), _norm(y), 1.0)
        eps_dual = dim * 1e-10 + tol * max(rho * _norm(u), 1.0)
        if r_prim <= eps_pri and r_dual <= eps_dual:
            v, obj, feas = _polish(y.v, dev_mats)
            return v, obj, it, feas
        if it % 50 == 0:  # residual balancing
            if r_prim > 10 * r_dual:
                rho *= 2.0
                u = _combine(0.5, u, 0.0, u)
            elif r_dual > 10 * r_prim:
                rho /= 2.0
                u = _combine(2.0, u, 0.0, u)
    v, obj, feas = _polish(y.v, dev_mats)
    raise SdpNonConvergence(
        f"ADMM did not reach tol={tol} within {max_iters} iterations",
        (v, obj, max_iters, feas))


def _polish(v: np.ndarray, dev_mats: Sequence[np.ndarray]
            ) -> Tuple[np.ndarray, float, float]:
    """Rescale a PSD iterate to an exactly feasible point and score it."""
    v = _psd_project(v)
    d = np.real(np.diagonal(v)).copy()
    d[d < 1e-12] = 1.0
    scale = 1.0 / np.sqrt(d)
    v = v * np.outer(scale, scale)
    np.fill_diagonal(v, 1.0)
    v = 0.5 * (v + v.conj().T)
    obj = float(min(np.real(np.vdot(a, v)) for a in dev_mats))
    feas = float(max(np.max(np.abs(np.real(np.diagonal(v)) - 1.0)),
                     max(0.0, -float(np.linalg.eigvalsh(v).min()))))
    return v, obj, feas
