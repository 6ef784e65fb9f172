"""End-to-end Monte-Carlo experiment engine: system configuration, the full
per-trial pipeline (channels -> phase plan -> encoding -> tensor synthesis ->
detection -> demapping -> stitching -> metrics), CSV persistence, and
resumable parameter sweeps.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import GeometryConfig, sample_realization
from .constellation import SubConstellation, build_subconstellation, demap_factor, encode_bits
from .ctad import CtadConfig, compute_elbo, run_ctad
from .metrics import nmse_metric, per_metric
from .outercode import TreeCodeConfig, split_and_encode, stitch
from .phasedesign import design_phase_plan, effective_matrices
from .tensors import outer_rank1

SEED_ENV_VAR = "CTAD_SEED"


@dataclass(frozen=True)
class SystemConfig:
    """All physical and algorithmic knobs of one experiment.

    Power convention: the noise is unit-variance circular complex Gaussian
    per tensor entry.  With ``effective_snr_db`` set, the symbol amplitude is
    scaled each trial so that the WEAKEST active device's per-entry signal
    power hits that SNR exactly (every device is then at least that
    detectable; fading spread between devices is preserved); otherwise
    ``transmit_power_dbm`` scales the symbol amplitude by sqrt(10^(p/10))
    and the absolute channel gains decide the rest.
    """

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    kbar: int = 256                    # device population (ID space)
    ka_min: int = 2
    ka_max: int = 6
    n_subblocks: int = 3               # L
    tau: Tuple[int, ...] = (8, 8)
    bits_per_mode: Tuple[int, ...] = (6, 6)
    parity: Tuple[int, ...] = (0, 8, 12)
    code_seed: int = 7
    max_columns: int = 12              # CTAD column budget K
    delta: float = 1e-6
    max_iters: int = 200
    tol: float = 1e-6
    prune_ratio: float = 1e4
    use_elementwise_sparsity: bool = True
    diagonal_gram: bool = False
    restarts: int = 3
    track_elbo: bool = False
    transmit_power_dbm: float = 10.0
    effective_snr_db: Optional[float] = 30.0
    phase_mode: str = "optimized"      # "optimized" | "random"
    j_samples: int = 50
    trials: int = 50
    base_seed: int = 0

    def __post_init__(self):
        if len(self.tau) != len(self.bits_per_mode):
            raise ValueError("tau and bits_per_mode must have equal length")
        if len(self.parity) != self.n_subblocks:
            raise ValueError("parity profile must have one entry per subblock")
        if not 0 <= self.ka_min <= self.ka_max:
            raise ValueError("need 0 <= ka_min <= ka_max")
        if self.kbar < self.ka_max:
            raise ValueError("device population smaller than ka_max")

    @property
    def subblock_bits(self) -> int:
        return sum(self.bits_per_mode)

    @property
    def id_bits(self) -> int:
        return max(1, (self.kbar - 1).bit_length())

    def tree_code(self) -> TreeCodeConfig:
        return TreeCodeConfig(subblock_bits=self.subblock_bits,
                              parity=self.parity, seed=self.code_seed,
                              id_bits=self.id_bits)

    def ctad(self) -> CtadConfig:
        return CtadConfig(max_columns=self.max_columns, delta=self.delta,
                          max_iters=self.max_iters, tol=self.tol,
                          prune_ratio=self.prune_ratio,
                          use_elementwise_sparsity=self.use_elementwise_sparsity,
                          diagonal_gram=self.diagonal_gram,
                          restarts=self.restarts, track_elbo=self.track_elbo)

    def codebooks(self) -> List[SubConstellation]:
        return [build_subconstellation(t, b, self.code_seed + 101 * i)
                for i, (t, b) in enumerate(zip(self.tau, self.bits_per_mode))]


# Flat key-value config format: one "key = value" per line, tuples as
# comma-separated entries.  Geometry fields carry a "geo_" prefix.
_GEO_FIELDS = {f.name for f in dataclasses.fields(GeometryConfig)}
_SYS_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)} - {"geometry"}


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config(text: str) -> SystemConfig:
    """Parse the flat key-value format; unknown keys are rejected."""
    sys_kwargs: Dict[str, object] = {}
    geo_kwargs: Dict[str, object] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("geo_") and key[4:] in _GEO_FIELDS:
            geo_kwargs[key[4:]] = _parse_scalar(value)
        elif key in _SYS_FIELDS:
            if key in ("tau", "bits_per_mode", "parity"):
                sys_kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key == "phase_mode":
                sys_kwargs[key] = value
            else:
                sys_kwargs[key] = _parse_scalar(value)
        else:
            raise ValueError(f"unknown config key: {key!r}")
    geometry = GeometryConfig(**geo_kwargs)
    return SystemConfig(geometry=geometry, **sys_kwargs)


def format_config(cfg: SystemConfig) -> str:
    lines = []
    for f in dataclasses.fields(GeometryConfig):
        lines.append(f"geo_{f.name} = {getattr(cfg.geometry, f.name)}")
    for f in dataclasses.fields(SystemConfig):
        if f.name == "geometry":
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: SystemConfig) -> str:
    """Stable digest of everything except the trial count (so reruns with
    more trials extend the same results directory)."""
    lines = [ln for ln in format_config(cfg).splitlines()
             if not ln.startswith("trials =")]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


@dataclass
class TrialRecord:
    trial: int
    seed: int
    config_hash: str
    k_a: int
    k_hat: int
    per: Optional[float]
    nmse_db: Optional[float]
    elbo_final: float
    iterations: int
    runtime_ms: float
    phase_design_mode: str
    status: str = "ok"

    COLUMNS = ("trial", "seed", "config_hash", "k_a", "k_hat", "per",
               "nmse_db", "elbo_final", "iterations", "runtime_ms",
               "phase_design_mode", "status")

    def row(self) -> List[str]:
        def fmt(v):
            if v is None:
                return "nan"
            if isinstance(v, float):
                return f"{v:.9g}"
            return str(v)
        return [fmt(getattr(self, c)) for c in self.COLUMNS]


def _draw_ka(cfg: SystemConfig, rng: np.random.Generator) -> int:
    if cfg.ka_min == cfg.ka_max:
        return cfg.ka_min
    return int(rng.integers(cfg.ka_min, cfg.ka_max + 1))


def synthesize_tensors(symbols: Sequence[Sequence[Sequence[np.ndarray]]],
                       effective: Sequence[np.ndarray],
                       lam: np.ndarray, amplitude: float,
                       tau: Sequence[int]) -> List[np.ndarray]:
    """Noise-free observation tensors, one per subblock.

    ``symbols[l][k]`` is the list of per-mode codewords of device k in
    subblock l; the channel factor of device k is ``amplitude * P_l lam[:, k]``.
    """
    clean = []
    for l, p_l in enumerate(effective):
        shape = tuple(int(t) for t in tau) + (p_l.shape[0],)
        acc = np.zeros(shape, dtype=complex)
        for k in range(lam.shape[1]):
            vectors = list(symbols[l][k]) + [amplitude * (p_l @ lam[:, k])]
            acc += outer_rank1(vectors)
        clean.append(acc)
    return clean


def add_noise(clean: Sequence[np.ndarray], rng: np.random.Generator,
              noise_power: float = 1.0) -> List[np.ndarray]:
    """Circular complex Gaussian noise with the given per-entry power."""
    out = []
    for t in clean:
        w = rng.standard_normal(t.shape) + 1j * rng.standard_normal(t.shape)
        out.append(t + math.sqrt(noise_power / 2.0) * w)
    return out


def run_trial(cfg: SystemConfig, seed: int) -> TrialRecord:
    """One deterministic end-to-end trial."""
    t_start = time.perf_counter()
    chash = config_hash(cfg)
    rng = np.random.default_rng(seed)
    stage = "channel"
    try:
        k_a = _draw_ka(cfg, rng)
        real = sample_realization(cfg.geometry, k_a, rng)

        stage = "phase_design"
        plan = design_phase_plan(real, cfg.n_subblocks, rng, mode=cfg.phase_mode,
                                 j_samples=cfg.j_samples)
        effective = effective_matrices(real, plan)

        stage = "encode"
        code = cfg.tree_code()
        books = cfg.codebooks()
        ids = rng.choice(cfg.kbar, size=k_a, replace=False)
        payloads = []
        for dev in range(k_a):
            id_bits = [int(b) for b in format(ids[dev], f"0{cfg.id_bits}b")]
            data_bits = rng.integers(0, 2, size=code.payload_bits - cfg.id_bits)
            payloads.append(tuple(id_bits + [int(b) for b in data_bits]))
        symbols: List[List[List[np.ndarray]]] = []
        blocks_per_dev = [split_and_encode(p, code) for p in payloads]
        for l in range(cfg.n_subblocks):
            per_dev = []
            for dev in range(k_a):
                block = blocks_per_dev[dev][l]
                groups = []
                pos = 0
                for bits in cfg.bits_per_mode:
                    groups.append(block[pos:pos + bits])
                    pos += bits
                per_dev.append(encode_bits(groups, books).factors)
            symbols.append(per_dev)

        stage = "synthesize"
        clean = synthesize_tensors(symbols, effective, real.lam, 1.0, cfg.tau)
        if cfg.effective_snr_db is not None:
            # per-device per-entry signal power; unit-norm symbols make the
            # device's tensor energy sum_l ||P_l lam_k||^2
            tau_prod = int(np.prod(cfg.tau))
            device_power = [
                sum(float(np.linalg.norm(p @ real.lam[:, k]) ** 2) for p in effective)
                * tau_prod / (cfg.n_subblocks * cfg.geometry.m * tau_prod)
                for k in range(k_a)]
            weakest = min(device_power) if device_power else 0.0
            target = 10.0 ** (cfg.effective_snr_db / 10.0)
            amplitude = math.sqrt(target / weakest) if weakest > 0 else 1.0
        else:
            amplitude = math.sqrt(10.0 ** (cfg.transmit_power_dbm / 10.0))
        ys = add_noise([amplitude * t for t in clean], rng)

        stage = "detect"
        result = run_ctad(ys, effective, cfg.ctad(), rng=rng)

        stage = "demap"
        # Bounded-distance validation against the common codebook: a surviving
        # component is only accepted as a device when every factor estimate
        # demaps within half the codebook's minimum chordal distance.  Columns
        # that fit structured noise decode nowhere near a codeword and are
        # rejected here (the receiver-side analogue of a failed decode).
        lists: List[List[np.ndarray]] = [[] for _ in range(cfg.n_subblocks)]
        distinct = set()
        for col in range(result.k_hat):
            blocks = []
            ok = True
            for l in range(cfg.n_subblocks):
                block_bits: List[int] = []
                for i, cb in enumerate(books):
                    est = result.factors[l][i][:, col]
                    nrm = np.linalg.norm(est)
                    if nrm == 0:
                        ok = False
                        break
                    bits, codeword, _ = demap_factor(est, cb)
                    dist = math.sqrt(max(0.0, 1.0 - min(
                        abs(np.vdot(codeword, est / nrm)), 1.0) ** 2))
                    if math.isfinite(cb.min_distance) and dist > 0.7 * cb.min_distance:
                        ok = False
                        break
                    block_bits.extend(bits)
                if not ok:
                    break
                blocks.append(np.asarray(block_bits, dtype=np.uint8))
            if ok:
                signature = tuple(int(b) for blk in blocks for b in blk)
                if signature not in distinct:
                    distinct.add(signature)
                    for l, blk in enumerate(blocks):
                        lists[l].append(blk)
        validated = len(distinct)

        stage = "stitch"
        decoded = stitch(lists, code).messages
        # the receiver's active-device-count estimate: components that decode
        # into parity-consistent, ID-unique messages
        validated = len(decoded)

        stage = "metrics"
        per = per_metric(decoded, payloads)
        _, nmse_db = nmse_metric(result.g_hat, real.lam)
        if result.elbo_trace:
            elbo_final = result.elbo_trace[-1]
        else:
            elbo_final = compute_elbo(result.state, ys, effective)
        runtime_ms = (time.perf_counter() - t_start) * 1e3
        return TrialRecord(trial=-1, seed=seed, config_hash=chash, k_a=k_a,
                           k_hat=validated, per=per, nmse_db=nmse_db,
                           elbo_final=elbo_final, iterations=result.iterations,
                           runtime_ms=runtime_ms,
                           phase_design_mode=cfg.phase_mode)
    except Exception as err:  # record the failing stage, never die silently
        runtime_ms = (time.perf_counter() - t_start) * 1e3
        return TrialRecord(trial=-1, seed=seed, config_hash=chash, k_a=-1,
                           k_hat=-1, per=None, nmse_db=None,
                           elbo_final=math.nan, iterations=0,
                           runtime_ms=runtime_ms,
                           phase_design_mode=cfg.phase_mode,
                           status=f"error:{stage}:{type(err).__name__}")


def base_seed(cfg: SystemConfig) -> int:
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else cfg.base_seed


def _aggregate(records: Sequence[TrialRecord]) -> Dict[str, float]:
    ok = [r for r in records if r.status == "ok"]
    pers = [r.per for r in ok if r.per is not None]
    nmses = [r.nmse_db for r in ok if r.nmse_db is not None]
    ranks = [1.0 if r.k_hat == r.k_a else 0.0 for r in ok]
    out = {
        "trials": float(len(records)),
        "ok": float(len(ok)),
        "per_mean": float(np.mean(pers)) if pers else math.nan,
        "per_std": float(np.std(pers)) if pers else math.nan,
        "nmse_db_mean": float(np.mean(nmses)) if nmses else math.nan,
        "nmse_db_std": float(np.std(nmses)) if nmses else math.nan,
        "rank_acc": float(np.mean(ranks)) if ranks else math.nan,
        "iters_mean": float(np.mean([r.iterations for r in ok])) if ok else math.nan,
    }
    return out


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[str]],
               append: bool = False) -> None:
    exists = os.path.exists(path)
    mode = "a" if append and exists else "w"
    with open(path, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(header)
        w.writerows(rows)


def _read_done_trials(path: str, key_cols: Sequence[str]) -> set:
    if not os.path.exists(path):
        return set()
    done = set()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            done.add(tuple(row[c] for c in key_cols))
    return done


def simulate(cfg: SystemConfig, out_dir: str = "results",
             progress: bool = False) -> List[TrialRecord]:
    """Run ``cfg.trials`` seeded trials, appending to the config's CSV pair."""
    chash = config_hash(cfg)
    run_dir = os.path.join(out_dir, chash)
    os.makedirs(run_dir, exist_ok=True)
    trials_path = os.path.join(run_dir, "trials.csv")
    with open(os.path.join(run_dir, "config.txt"), "w") as f:
        f.write(format_config(cfg))
    done = _read_done_trials(trials_path, ("trial",))
    seed0 = base_seed(cfg)
    records = []
    rows = []
    for idx in range(cfg.trials):
        if (str(idx),) in done:
            continue
        rec = run_trial(cfg, seed0 + idx)
        rec.trial = idx
        records.append(rec)
        rows.append(rec.row())
        if progress:
            print(f"trial {idx}: k_a={rec.k_a} k_hat={rec.k_hat} "
                  f"per={rec.per} nmse_db={rec.nmse_db} [{rec.status}]")
    _write_csv(trials_path, TrialRecord.COLUMNS, rows, append=True)
    all_records = read_trials(trials_path)
    agg = _aggregate(all_records)
    _write_csv(os.path.join(run_dir, "aggregate.csv"),
               list(agg.keys()), [[f"{v:.9g}" for v in agg.values()]])
    return records


def read_trials(path: str) -> List[TrialRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(TrialRecord(
                trial=int(row["trial"]), seed=int(row["seed"]),
                config_hash=row["config_hash"], k_a=int(row["k_a"]),
                k_hat=int(row["k_hat"]),
                per=None if row["per"] == "nan" else float(row["per"]),
                nmse_db=None if row["nmse_db"] == "nan" else float(row["nmse_db"]),
                elbo_final=float(row["elbo_final"]),
                iterations=int(row["iterations"]),
                runtime_ms=float(row["runtime_ms"]),
                phase_design_mode=row["phase_design_mode"],
                status=row["status"]))
    return out


SWEEPABLE = ("transmit_power_dbm", "effective_snr_db", "n_subblocks",
             "ka_min", "ka_max", "max_columns", "trials", "phase_mode",
             "use_elementwise_sparsity", "grid_ratio")


def _with_axis(cfg: SystemConfig, axis: str, value) -> SystemConfig:
    if axis == "grid_ratio":
        return replace(cfg, geometry=replace(cfg.geometry, grid_ratio=float(value)))
    if axis == "n_subblocks":
        value = int(value)
        parity = cfg.parity[:value] if value <= len(cfg.parity) else (
            cfg.parity + (cfg.parity[-1],) * (value - len(cfg.parity)))
        return replace(cfg, n_subblocks=value, parity=parity)
    if axis not in SWEEPABLE or not hasattr(cfg, axis):
        raise ValueError(f"unknown sweep axis {axis!r}; known: {SWEEPABLE}")
    current = getattr(cfg, axis)
    if isinstance(current, bool):
        value = value in (True, "true", "True", 1, "1")
    elif isinstance(current, int):
        value = int(value)
    elif isinstance(current, float) or current is None:
        value = float(value)
    return replace(cfg, **{axis: value})


def sweep(cfg: SystemConfig, axis: str, values: Sequence, out_dir: str = "results",
          progress: bool = False) -> str:
    """Run trials for each axis value; one trials.csv plus per-value
    aggregates, resumable by (value, trial) key."""
    key = hashlib.sha256((config_hash(cfg) + axis
                          + ",".join(str(v) for v in values)).encode()).hexdigest()[:16]
    run_dir = os.path.join(out_dir, f"sweep-{key}")
    os.makedirs(run_dir, exist_ok=True)
    trials_path = os.path.join(run_dir, "trials.csv")
    header = ["axis", "value"] + list(TrialRecord.COLUMNS)
    done = _read_done_trials(trials_path, ("value", "trial"))
    seed0 = base_seed(cfg)
    by_value: Dict[str, List[TrialRecord]] = {}
    new_rows = []
    for vi, value in enumerate(values):
        sub = _with_axis(cfg, axis, value)
        for idx in range(sub.trials):
            if (str(value), str(idx)) in done:
                continue
            rec = run_trial(sub, seed0 + vi * 100003 + idx)
            rec.trial = idx
            new_rows.append([axis, str(value)] + rec.row())
            by_value.setdefault(str(value), []).append(rec)
            if progress:
                print(f"{axis}={value} trial {idx}: k_hat={rec.k_hat} "
                      f"per={rec.per} nmse_db={rec.nmse_db}")
    _write_csv(trials_path, header, new_rows, append=True)
    # re-aggregate everything present
    groups: Dict[str, List[TrialRecord]] = {}
    with open(trials_path, newline="") as f:
        for row in csv.DictReader(f):
            rec = TrialRecord(
                trial=int(row["trial"]), seed=int(row["seed"]),
                config_hash=row["config_hash"], k_a=int(row["k_a"]),
                k_hat=int(row["k_hat"]),
                per=None if row["per"] == "nan" else float(row["per"]),
                nmse_db=None if row["nmse_db"] == "nan" else float(row["nmse_db"]),
                elbo_final=float(row["elbo_final"]),
                iterations=int(row["iterations"]),
                runtime_ms=float(row["runtime_ms"]),
                phase_design_mode=row["phase_design_mode"], status=row["status"])
            groups.setdefault(row["value"], []).append(rec)
    agg_rows = []
    agg_header = None
    for value in (str(v) for v in values):
        if value not in groups:
            continue
        agg = _aggregate(groups[value])
        if agg_header is None:
            agg_header = ["axis", "value"] + list(agg.keys())
        agg_rows.append([axis, value] + [f"{v:.9g}" for v in agg.values()])
    if agg_header is not None:
        _write_csv(os.path.join(run_dir, "aggregate.csv"), agg_header, agg_rows)
    return run_dir
