"""Binary-free textual serialization: complex arrays with dimension headers,
channel realizations, and posterior snapshots.

Complex values are written one per token as ``a+bj`` (Python complex literal
without parentheses); arrays are emitted row-major.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, TextIO, Tuple

import numpy as np

from .channel import ChannelRealization, DeviceChannel, GeometryConfig, RisBsPath
from .ctad import PosteriorState


def _fmt(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def write_array(f: TextIO, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=complex)
    dims = " ".join(str(d) for d in arr.shape)
    f.write(f"array {name} {dims}\n")
    flat = arr.reshape(-1)
    for start in range(0, flat.size, 8):
        f.write(" ".join(_fmt(z) for z in flat[start:start + 8]) + "\n")


class _Reader:
    def __init__(self, f: TextIO):
        self.tokens: List[str] = []
        for line in f:
            self.tokens.extend(line.split())
        self.pos = 0

    def take(self, n: int = 1) -> List[str]:
        if self.pos + n > len(self.tokens):
            raise ValueError("truncated file")
        out = self.tokens[self.pos:self.pos + n]
        self.pos += n
        return out

    def expect(self, word: str) -> None:
        got = self.take(1)[0]
        if got != word:
            raise ValueError(f"expected {word!r}, found {got!r}")

    def done(self) -> bool:
        return self.pos >= len(self.tokens)


def _read_array(r: _Reader) -> Tuple[str, np.ndarray]:
    r.expect("array")
    name = r.take(1)[0]
    dims = []
    while r.pos < len(r.tokens) and r.tokens[r.pos].isdigit():
        dims.append(int(r.take(1)[0]))
    size = int(np.prod(dims)) if dims else 0
    vals = [complex(t) for t in r.take(size)]
    return name, np.asarray(vals, dtype=complex).reshape(dims)


def save_tensors(path: str, arrays: Dict[str, np.ndarray]) -> None:
    with open(path, "w") as f:
        f.write("risura-tensors v1\n")
        for name, arr in arrays.items():
            write_array(f, name, arr)


def load_tensors(path: str) -> Dict[str, np.ndarray]:
    with open(path) as f:
        r = _Reader(f)
    r.expect("risura-tensors")
    r.expect("v1")
    out: Dict[str, np.ndarray] = {}
    while not r.done():
        name, arr = _read_array(r)
        out[name] = arr
    return out


def save_realization(path: str, real: ChannelRealization) -> None:
    g = real.geometry
    with open(path, "w") as f:
        f.write("risura-channel v1\n")
        f.write(f"geometry {g.m} {g.n1} {g.n2} {g.grid_ratio!r} {g.wavelength!r} "
                f"{g.element_spacing!r} {g.d_rb!r} {g.d_min!r} {g.d_max!r} "
                f"{g.ris_paths} {g.device_paths} {g.angular_spread_deg!r}\n")
        f.write(f"devices {real.k_a}\n")
        for p in real.ris_paths:
            f.write(f"ris_path {p.sigma!r} {p.phi!r} {p.psi!r} {_fmt(p.gain)}\n")
        for d in real.devices:
            f.write(f"device {d.dominant_phi!r} {d.dominant_psi!r} "
                    f"{d.dominant_node} {d.distance!r}\n")
        write_array(f, "a_r", real.a_r)
        write_array(f, "u", real.u)
        write_array(f, "u_hat", real.u_hat)
        write_array(f, "lam", real.lam)
        write_array(f, "h", real.h)


def load_realization(path: str) -> ChannelRealization:
    with open(path) as f:
        r = _Reader(f)
    r.expect("risura-channel")
    r.expect("v1")
    r.expect("geometry")
    vals = r.take(12)
    geo = GeometryConfig(
        m=int(vals[0]), n1=int(vals[1]), n2=int(vals[2]),
        grid_ratio=float(vals[3]), wavelength=float(vals[4]),
        spacing=float(vals[5]), d_rb=float(vals[6]), d_min=float(vals[7]),
        d_max=float(vals[8]), ris_paths=int(vals[9]),
        device_paths=int(vals[10]), angular_spread_deg=float(vals[11]))
    r.expect("devices")
    k_a = int(r.take(1)[0])
    ris_paths = []
    for _ in range(geo.ris_paths):
        r.expect("ris_path")
        s, p, q, g_tok = r.take(4)
        ris_paths.append(RisBsPath(float(s), float(p), float(q), complex(g_tok)))
    dev_meta = []
    for _ in range(k_a):
        r.expect("device")
        phi, psi, node, dist = r.take(4)
        dev_meta.append((float(phi), float(psi), int(node), float(dist)))
    arrays = {}
    while not r.done():
        name, arr = _read_array(r)
        arrays[name] = arr
    devices = [DeviceChannel(arrays["lam"][:, j], arrays["h"][:, j],
                             meta[0], meta[1], meta[2], meta[3])
               for j, meta in enumerate(dev_meta)]
    return ChannelRealization(geo, arrays["a_r"], arrays["u"], arrays["u_hat"],
                              arrays["lam"], arrays["h"], ris_paths, devices)


def save_posterior(path: str, state: PosteriorState) -> None:
    with open(path, "w") as f:
        f.write("risura-posterior v1\n")
        f.write(f"dims {len(state.tau)} {' '.join(str(t) for t in state.tau)} "
                f"{state.m} {state.n_grid} {state.k} {state.n_subblocks}\n")
        f.write(f"delta {state.delta!r}\n")
        f.write(f"flags {int(state.use_elementwise_sparsity)} "
                f"{int(state.diagonal_gram)}\n")
        f.write(f"a_beta {state.a_beta!r}\n")
        write_array(f, "mg", state.mg)
        write_array(f, "omega", state.omega)
        write_array(f, "a_xi", state.a_xi)
        write_array(f, "a_eta", state.a_eta)
        write_array(f, "a_gamma", state.a_gamma)
        for l in range(state.n_subblocks):
            for i in range(state.d):
                write_array(f, f"mx_{l}_{i}", state.mx[l][i])
                write_array(f, f"sx_{l}_{i}", state.sx[l][i])
            write_array(f, f"xi_{l}", state.xi_mat[l])


def load_posterior(path: str) -> PosteriorState:
    with open(path) as f:
        r = _Reader(f)
    r.expect("risura-posterior")
    r.expect("v1")
    r.expect("dims")
    d = int(r.take(1)[0])
    tau = tuple(int(t) for t in r.take(d))
    m, n_grid, k, n_sub = (int(t) for t in r.take(4))
    r.expect("delta")
    delta = float(r.take(1)[0])
    r.expect("flags")
    use_xi, diag_gram = (bool(int(t)) for t in r.take(2))
    r.expect("a_beta")
    a_beta = float(r.take(1)[0])
    arrays = {}
    while not r.done():
        name, arr = _read_array(r)
        arrays[name] = arr
    return PosteriorState(
        tau=tau, m=m, n_grid=n_grid, k=k, delta=delta,
        use_elementwise_sparsity=use_xi, diagonal_gram=diag_gram,
        mg=arrays["mg"], omega=arrays["omega"],
        mx=[[arrays[f"mx_{l}_{i}"] for i in range(d)] for l in range(n_sub)],
        sx=[[arrays[f"sx_{l}_{i}"] for i in range(d)] for l in range(n_sub)],
        a_xi=arrays["a_xi"].real, a_eta=arrays["a_eta"].real.reshape(-1),
        a_gamma=arrays["a_gamma"].real.reshape(-1), a_beta=a_beta,
        xi_mat=[arrays[f"xi_{l}"] for l in range(n_sub)],
    )
