"""Geometric channel generation: steering vectors, angular dictionary, RIS-BS
and device-RIS channels with distance-dependent path loss.

Angle conventions: azimuth/elevation pairs in radians.  A RIS response for an
``N1 x N2`` rectangular array is ``kron(phi_{N2}(cos psi cos phi),
phi_{N1}(cos psi sin phi))`` where ``phi_Np(x)`` is the unit-norm phase ramp of
length ``Np``.  The angular dictionary pairs a length-``N1'`` grid ``nu`` with
a length-``N2'`` grid ``sigma``, both uniform over ``[-1, 1)`` (endpoint
excluded: with half-wavelength spacing the responses are 2-periodic in the
grid variable, so -1 and +1 would duplicate a column).  Dictionary column
``p * N2' + q`` is ``kron(phi_{N1}(nu_p), phi_{N2}(sigma_q))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class GeometryConfig:
    """Array geometry, grids, and propagation parameters."""

    m: int = 16                     # BS antennas
    n1: int = 4                     # RIS rows
    n2: int = 4                     # RIS columns
    grid_ratio: float = 1.5         # N1' = ceil(ratio*N1), N2' = ceil(ratio*N2)
    wavelength: float = 0.1         # meters
    spacing: Optional[float] = None  # element spacing, default wavelength/2
    d_rb: float = 100.0             # RIS-BS distance (m)
    d_min: float = 500.0            # device-RIS distance range (m)
    d_max: float = 1000.0
    ris_paths: int = 16             # paths between RIS and BS (rich scattering)
    device_paths: int = 2           # paths between a device and the RIS
    angular_spread_deg: float = 15.0

    def __post_init__(self):
        if min(self.m, self.n1, self.n2, self.ris_paths, self.device_paths) < 1:
            raise ValueError("counts must be positive")
        if self.grid_ratio < 1.0:
            raise ValueError("grid_ratio must be >= 1")
        if self.d_min > self.d_max:
            raise ValueError("d_min must not exceed d_max")

    @property
    def element_spacing(self) -> float:
        return self.wavelength / 2.0 if self.spacing is None else self.spacing

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def n1p(self) -> int:
        return math.ceil(self.grid_ratio * self.n1)

    @property
    def n2p(self) -> int:
        return math.ceil(self.grid_ratio * self.n2)

    @property
    def n_grid(self) -> int:
        return self.n1p * self.n2p


def phase_ramp(n: int, x: float, spacing: float, wavelength: float) -> np.ndarray:
    """Unnormalized array phase ramp exp(-j 2 pi spacing (0..n-1) x / wavelength)."""
    return np.exp(-2j * np.pi * spacing * x / wavelength * np.arange(n))


def _phi(n: int, x: float, g: GeometryConfig) -> np.ndarray:
    return phase_ramp(n, x, g.element_spacing, g.wavelength) / math.sqrt(n)


def steering_ris(phi: float, psi: float, g: GeometryConfig) -> np.ndarray:
    """Unit-norm RIS response for azimuth ``phi``, elevation ``psi``."""
    return np.kron(_phi(g.n2, math.cos(psi) * math.cos(phi), g),
                   _phi(g.n1, math.cos(psi) * math.sin(phi), g))


def steering_bs(sigma: float, m: int, g: Optional[GeometryConfig] = None) -> np.ndarray:
    """BS response for azimuth ``sigma``; squared norm equals ``m``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    gg = g if g is not None else GeometryConfig(m=m)
    return phase_ramp(m, math.sin(sigma), gg.element_spacing, gg.wavelength)


def angular_grid(length: int) -> np.ndarray:
    """Uniform grid over [-1, 1), ``length`` points (exact DFT resolution at
    length == array size)."""
    return -1.0 + 2.0 * np.arange(length) / length


def build_dictionary(g: GeometryConfig) -> np.ndarray:
    """Angular dictionary A_R of shape (N, N1'*N2') with unit-norm columns."""
    nu = angular_grid(g.n1p)
    sg = angular_grid(g.n2p)
    phi1 = np.column_stack([_phi(g.n1, x, g) for x in nu])
    phi2 = np.column_stack([_phi(g.n2, x, g) for x in sg])
    return np.kron(phi1, phi2)


def path_loss(distance: float, wavelength: float) -> float:
    """Free-space power gain (wavelength / 4 pi d)^2 of one link."""
    return (wavelength / (4.0 * np.pi * distance)) ** 2


def _nearest_grid_index(x: float, length: int) -> int:
    # responses are 2-periodic in x, so snap on the circle
    step = 2.0 / length
    return int(round(((x + 1.0) % 2.0) / step)) % length


def grid_node(phi: float, psi: float, g: GeometryConfig) -> Tuple[int, int]:
    """Nearest dictionary node (p, q) for a device-side angle pair."""
    nu = math.cos(psi) * math.sin(phi)
    sg = math.cos(psi) * math.cos(phi)
    return _nearest_grid_index(nu, g.n1p), _nearest_grid_index(sg, g.n2p)


@dataclass
class RisBsPath:
    sigma: float   # azimuth AoA at the BS
    phi: float     # azimuth AoD at the RIS
    psi: float     # elevation AoD at the RIS
    gain: complex


def sample_ris_bs(g: GeometryConfig, rng: np.random.Generator
                  ) -> Tuple[np.ndarray, List[RisBsPath]]:
    """Draw the RIS-BS channel U = sqrt(mu) sum_i gain_i a_B(sigma_i) a_R(phi_i, psi_i)^H."""
    mu = path_loss(g.d_rb, g.wavelength)
    u = np.zeros((g.m, g.n), dtype=complex)
    paths = []
    for _ in range(g.ris_paths):
        sigma = rng.uniform(-np.pi / 2, np.pi / 2)
        phi = rng.uniform(-np.pi, np.pi)
        psi = rng.uniform(-np.pi / 2, np.pi / 2)
        gain = (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2)
        u += math.sqrt(mu) * gain * np.outer(steering_bs(sigma, g.m, g),
                                             steering_ris(phi, psi, g).conj())
        paths.append(RisBsPath(sigma, phi, psi, gain))
    return u, paths


@dataclass
class DeviceChannel:
    lam: np.ndarray                  # sparse angular coefficients, length N_grid
    h: np.ndarray                    # composite channel A_R @ lam, length N
    dominant_phi: float
    dominant_psi: float
    dominant_node: int               # dictionary column of the first path
    distance: float


def sample_device_channel(g: GeometryConfig, a_r: np.ndarray,
                          rng: np.random.Generator,
                          on_grid: bool = True) -> DeviceChannel:
    """Draw one device-RIS channel with ``device_paths`` clustered paths.

    On-grid mode assigns each path gain to the nearest dictionary column
    (distinct columns, so nnz(lam) == device_paths exactly).  Off-grid mode
    evaluates true steering vectors and defines lam by least squares onto A_R.
    """
    if g.device_paths > g.n_grid:
        raise ValueError("more paths than grid nodes")
    dist = rng.uniform(g.d_min, g.d_max)
    mu = path_loss(dist, g.wavelength)
    spread = math.radians(g.angular_spread_deg)
    center_phi = rng.uniform(-np.pi, np.pi)
    center_psi = rng.uniform(-np.pi / 2, np.pi / 2)

    lam = np.zeros(g.n_grid, dtype=complex)
    h_off = np.zeros(g.n, dtype=complex)
    used = set()
    dominant_node = -1
    dom_phi, dom_psi = center_phi, center_psi
    for i in range(g.device_paths):
        for attempt in range(1000):
            phi = center_phi + rng.uniform(-spread / 2, spread / 2)
            psi = center_psi + rng.uniform(-spread / 2, spread / 2)
            p, q = grid_node(phi, psi, g)
            node = p * g.n2p + q
            if node not in used:
                break
        else:
            node = next(n for n in range(g.n_grid) if n not in used)
        used.add(node)
        gain = math.sqrt(mu) * (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2)
        lam[node] += gain
        h_off += gain * steering_ris(phi, psi, g)
        if i == 0:
            dominant_node = node
            dom_phi, dom_psi = phi, psi
    if on_grid:
        h = a_r @ lam
    else:
        h = h_off
        lam, *_ = np.linalg.lstsq(a_r, h, rcond=None)
    return DeviceChannel(lam, h, dom_phi, dom_psi, dominant_node, dist)


@dataclass
class ChannelRealization:
    """One drawn uplink scene: dictionary, RIS-BS channel (and its receiver-side
    estimate), and the active devices' sparse angular channels."""

    geometry: GeometryConfig
    a_r: np.ndarray                    # N x N_grid
    u: np.ndarray                      # M x N
    u_hat: np.ndarray                  # M x N estimate used by the receiver
    lam: np.ndarray                    # N_grid x K_a
    h: np.ndarray                      # N x K_a
    ris_paths: List[RisBsPath] = field(default_factory=list)
    devices: List[DeviceChannel] = field(default_factory=list)

    @property
    def k_a(self) -> int:
        return self.lam.shape[1]


def sample_realization(g: GeometryConfig, k_a: int, rng: np.random.Generator,
                       u_hat_rel_err: float = 0.0,
                       on_grid: bool = True) -> ChannelRealization:
    """Draw a full channel realization with ``k_a`` active devices.

    ``u_hat_rel_err`` adds complex Gaussian perturbation to the quasi-static
    RIS-BS estimate with the given relative power (0 = perfect estimate).
    """
    a_r = build_dictionary(g)
    u, ris_paths = sample_ris_bs(g, rng)
    if u_hat_rel_err > 0:
        scale = math.sqrt(u_hat_rel_err) * np.linalg.norm(u) / math.sqrt(u.size)
        noise = (rng.standard_normal(u.shape) + 1j * rng.standard_normal(u.shape)) / math.sqrt(2)
        u_hat = u + scale * noise
    else:
        u_hat = u.copy()
    devices = [sample_device_channel(g, a_r, rng, on_grid=on_grid) for _ in range(k_a)]
    lam = (np.column_stack([d.lam for d in devices])
           if devices else np.zeros((g.n_grid, 0), dtype=complex))
    h = (np.column_stack([d.h for d in devices])
         if devices else np.zeros((g.n, 0), dtype=complex))
    return ChannelRealization(g, a_r, u, u_hat, lam, h, ris_paths, devices)


def with_perturbed_estimate(real: ChannelRealization, rel_err: float,
                            rng: np.random.Generator) -> ChannelRealization:
    """Copy of a realization with a freshly perturbed U estimate."""
    scale = math.sqrt(rel_err) * np.linalg.norm(real.u) / math.sqrt(real.u.size)
    noise = (rng.standard_normal(real.u.shape)
             + 1j * rng.standard_normal(real.u.shape)) / math.sqrt(2)
    return ChannelRealization(real.geometry, real.a_r, real.u,
                              real.u + scale * noise, real.lam, real.h,
                              real.ris_paths, real.devices)
