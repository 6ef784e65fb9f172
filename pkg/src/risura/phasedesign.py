"""RIS reflection design: random phases for the training subblocks and the
max-min semidefinite relaxation plus two-step Gaussian randomization for the
last subblock; construction of the effective measurement matrices P_l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import sdp
from .channel import ChannelRealization, steering_ris


@dataclass
class SdpSolution:
    """Relaxed max-min solution; V is Hermitian PSD with unit diagonal."""

    v: np.ndarray
    objective: float
    solver_iterations: int
    feasibility_residual: float


@dataclass
class PhasePlan:
    """Per-subblock unit-modulus reflection vectors and how each was designed."""

    vectors: List[np.ndarray]
    design_modes: List[str] = field(default_factory=list)  # "random" | "optimized"


def random_phase(n: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. unit-modulus entries with phases uniform on [0, 2 pi)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.exp(2j * np.pi * rng.uniform(0.0, 1.0, size=n))


def coupled_response(device_vec: np.ndarray, ris_vec: np.ndarray) -> np.ndarray:
    """abar with abar^H = device^H diag(ris), i.e. abar = conj(ris) * device."""
    device_vec = np.asarray(device_vec).reshape(-1)
    ris_vec = np.asarray(ris_vec).reshape(-1)
    if device_vec.shape != ris_vec.shape:
        raise ValueError("device and RIS responses must share a length")
    return np.conj(ris_vec) * device_vec


def min_gain(v: np.ndarray, abar: Sequence[np.ndarray],
             weights: Sequence[float]) -> float:
    """Worst-case weighted first-path gain min_k w_k |abar_k^H v|^2."""
    return min(w * abs(np.vdot(a, v)) ** 2 for a, w in zip(abar, weights))


def solve_phase_sdp(abar: Sequence[np.ndarray], weights: Sequence[float],
                    tol: float = 1e-6, max_iters: int = 5000) -> SdpSolution:
    """Solve the relaxed max-min problem over PSD V with unit diagonal."""
    v, obj, iters, feas = sdp.solve_maxmin_phase(abar, weights, tol=tol,
                                                 max_iters=max_iters)
    return SdpSolution(v, obj, iters, feas)


def gaussian_randomization(sol: SdpSolution | np.ndarray,
                           abar: Sequence[np.ndarray],
                           weights: Sequence[float], j_samples: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Draw ``j_samples`` Gaussian vectors with covariance V, project each
    entry to unit modulus and keep the best min-gain sample (first index wins
    ties)."""
    if j_samples < 1:
        raise ValueError("need at least one randomization sample")
    v = sol.v if isinstance(sol, SdpSolution) else np.asarray(sol)
    n = v.shape[0]
    w, q = np.linalg.eigh(0.5 * (v + v.conj().T))
    root = q * np.sqrt(np.clip(w, 0.0, None))
    best_vec = None
    best_val = -math.inf
    for _ in range(j_samples):
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
        nu = root @ z
        mag = np.abs(nu)
        nu = np.where(mag > 0, nu / np.where(mag > 0, mag, 1.0), 1.0)
        val = min_gain(nu, abar, weights)
        if val > best_val:
            best_val = val
            best_vec = nu
    return best_vec


def effective_matrix(u_hat: np.ndarray, v_l: np.ndarray,
                     a_r: np.ndarray) -> np.ndarray:
    """P_l = U_hat diag(v_l) A_R."""
    u_hat = np.asarray(u_hat)
    v_l = np.asarray(v_l).reshape(-1)
    a_r = np.asarray(a_r)
    if u_hat.shape[1] != v_l.size or v_l.size != a_r.shape[0]:
        raise ValueError("shape mismatch between U_hat, v_l, and A_R")
    return (u_hat * v_l[None, :]) @ a_r


def design_weights(distances: Sequence[float], d_rb: float,
                   wavelength: float) -> np.ndarray:
    """Cascaded path-loss coefficients wavelength^2/(16 pi^2 d_DR^2 d_RB^2)."""
    d = np.asarray(distances, dtype=float)
    return wavelength ** 2 / (16.0 * np.pi ** 2 * d ** 2 * d_rb ** 2)


def realization_abar(real: ChannelRealization) -> List[np.ndarray]:
    """First-path coupled responses of all active devices in a realization.

    Device side uses the dominant on-grid dictionary column; RIS side uses the
    first RIS-BS path response (angles assumed known to the designer).
    """
    ris = real.ris_paths[0]
    ris_vec = steering_ris(ris.phi, ris.psi, real.geometry)
    out = []
    for dev in real.devices:
        device_vec = real.a_r[:, dev.dominant_node]
        out.append(coupled_response(device_vec, ris_vec))
    return out


def design_phase_plan(real: ChannelRealization, n_subblocks: int,
                      rng: np.random.Generator, mode: str = "optimized",
                      j_samples: int = 50,
                      sdp_tol: float = 1e-6) -> PhasePlan:
    """Random phases for subblocks 1..L-1; SDP + randomization for subblock L
    (or fully random when ``mode == 'random'`` or no device is active)."""
    if mode not in ("optimized", "random"):
        raise ValueError(f"unknown phase design mode {mode!r}")
    n = real.geometry.n
    vectors = [random_phase(n, rng) for _ in range(n_subblocks)]
    modes = ["random"] * n_subblocks
    if mode == "optimized" and real.k_a > 0 and n_subblocks >= 1:
        abar = realization_abar(real)
        weights = design_weights([d.distance for d in real.devices],
                                 real.geometry.d_rb, real.geometry.wavelength)
        try:
            sol = solve_phase_sdp(abar, weights, tol=sdp_tol)
        except sdp.SdpNonConvergence as err:
            v, obj, iters, feas = err.best
            sol = SdpSolution(v, obj, iters, feas)
        vectors[-1] = gaussian_randomization(sol, abar, weights, j_samples, rng)
        modes[-1] = "optimized"
    return PhasePlan(vectors, modes)


def effective_matrices(real: ChannelRealization, plan: PhasePlan) -> List[np.ndarray]:
    return [effective_matrix(real.u_hat, v, real.a_r) for v in plan.vectors]
