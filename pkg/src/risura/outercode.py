"""Tree-based outer code: payload splitting with seeded random parity
augmentation, and stitching of per-subblock candidate lists back into full
messages by depth-first parity-consistent search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class TreeCodeConfig:
    """Subblock size R, per-subblock parity widths, and the parity seed.

    Subblock l carries ``R - parity[l]`` fresh info bits followed by
    ``parity[l]`` parity bits, each a random GF(2) combination of every info
    bit that precedes it in the stream (earlier subblocks plus the current
    one).  ``id_bits`` marks the leading payload bits as the device ID for
    the duplicate-discard rule.
    """

    subblock_bits: int                 # R
    parity: Tuple[int, ...]            # (p_1, ..., p_L), p_1 == 0
    seed: int = 0
    id_bits: int = 0

    def __post_init__(self):
        if self.subblock_bits < 1 or len(self.parity) < 1:
            raise ValueError("need a positive subblock size and >= 1 subblock")
        if self.parity[0] != 0:
            raise ValueError("the first subblock carries no parity")
        if any(p < 0 or p > self.subblock_bits for p in self.parity):
            raise ValueError("parity widths must lie in [0, R]")
        if not 0 <= self.id_bits <= self.payload_bits:
            raise ValueError("id_bits must fit inside the payload")

    @property
    def n_subblocks(self) -> int:
        return len(self.parity)

    @property
    def info_bits(self) -> Tuple[int, ...]:
        return tuple(self.subblock_bits - p for p in self.parity)

    @property
    def payload_bits(self) -> int:
        return sum(self.info_bits)


@dataclass
class StitchResult:
    messages: List[Tuple[int, ...]]    # parity-consistent unique payloads
    discarded: int                     # pruned paths plus duplicate-ID drops


def _parity_matrices(cfg: TreeCodeConfig) -> List[np.ndarray]:
    """Random binary parity maps; matrix l has shape (p_l, info prefix size)."""
    rng = np.random.default_rng(cfg.seed)
    mats = []
    prefix = 0
    for l in range(cfg.n_subblocks):
        prefix += cfg.info_bits[l]
        mats.append(rng.integers(0, 2, size=(cfg.parity[l], prefix), dtype=np.uint8))
    return mats


def split_and_encode(payload: Sequence[int], cfg: TreeCodeConfig
                     ) -> List[np.ndarray]:
    """Split a payload into L subblocks of R bits each (info then parity)."""
    bits = np.asarray(payload, dtype=np.uint8).reshape(-1)
    if bits.size != cfg.payload_bits:
        raise ValueError(f"payload must have {cfg.payload_bits} bits, got {bits.size}")
    mats = _parity_matrices(cfg)
    blocks = []
    pos = 0
    for l in range(cfg.n_subblocks):
        info = bits[pos:pos + cfg.info_bits[l]]
        pos += cfg.info_bits[l]
        prefix = bits[:pos]
        par = (mats[l] @ prefix) % 2 if cfg.parity[l] else np.zeros(0, dtype=np.uint8)
        blocks.append(np.concatenate([info, par.astype(np.uint8)]))
    return blocks


def stitch(candidates: Sequence[Sequence[Sequence[int]]], cfg: TreeCodeConfig
           ) -> StitchResult:
    """Depth-first search over per-subblock candidate lists.

    A path survives iff every parity section recomputes from its own info
    prefix; surviving payloads are deduplicated, then any device ID shared by
    several distinct payloads discards them all.
    """
    if len(candidates) != cfg.n_subblocks:
        raise ValueError("need one candidate list per subblock")
    lists = [[np.asarray(c, dtype=np.uint8).reshape(-1) for c in lst]
             for lst in candidates]
    for lst in lists:
        for c in lst:
            if c.size != cfg.subblock_bits:
                raise ValueError("candidate blocks must have R bits")
    mats = _parity_matrices(cfg)
    survivors: List[Tuple[int, ...]] = []
    discarded = 0

    def descend(level: int, prefix: np.ndarray):
        nonlocal discarded
        if level == cfg.n_subblocks:
            survivors.append(tuple(int(b) for b in prefix))
            return
        n_info = cfg.info_bits[level]
        for cand in lists[level]:
            info, par = cand[:n_info], cand[n_info:]
            new_prefix = np.concatenate([prefix, info])
            if cfg.parity[level]:
                expected = (mats[level] @ new_prefix) % 2
                if not np.array_equal(expected.astype(np.uint8), par):
                    discarded += 1
                    continue
            descend(level + 1, new_prefix)

    descend(0, np.zeros(0, dtype=np.uint8))

    unique = list(dict.fromkeys(survivors))
    if cfg.id_bits > 0:
        ids = [msg[:cfg.id_bits] for msg in unique]
        dup = {i for i in ids if ids.count(i) > 1}
        kept = [msg for msg, i in zip(unique, ids) if i not in dup]
        discarded += len(unique) - len(kept)
        unique = kept
    return StitchResult(messages=unique, discarded=discarded)
