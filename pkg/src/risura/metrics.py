"""Detection and estimation metrics: packet error rate and permutation/scale
resolved NMSE."""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

NMSE_ZERO_DB = -120.0   # reported in place of -inf for an exact estimate


def per_metric(decoded: Sequence[Tuple[int, ...]],
               transmitted: Sequence[Tuple[int, ...]]) -> Optional[float]:
    """Fraction of transmitted payloads not recovered (missing, wrong, or
    discarded as duplicates).  Returns None when nothing was transmitted."""
    if len(transmitted) == 0:
        return None
    decoded_set = {tuple(int(b) for b in msg) for msg in decoded}
    errors = sum(1 for msg in transmitted
                 if tuple(int(b) for b in msg) not in decoded_set)
    return errors / len(transmitted)


def match_columns(g_hat: np.ndarray, g_true: np.ndarray) -> np.ndarray:
    """Assign estimated columns to true columns by maximal |correlation|.

    Returns an array ``assign`` with ``assign[k]`` the estimated column index
    matched to true column ``k`` (or -1 when no estimate is available).
    """
    k_true = g_true.shape[1]
    k_hat = g_hat.shape[1]
    assign = -np.ones(k_true, dtype=int)
    if k_hat == 0:
        return assign
    tn = np.maximum(np.linalg.norm(g_true, axis=0, keepdims=True), 1e-300)
    hn = np.maximum(np.linalg.norm(g_hat, axis=0, keepdims=True), 1e-300)
    corr = np.abs((g_true / tn).conj().T @ (g_hat / hn))
    rows, cols = linear_sum_assignment(-corr)
    for r, c in zip(rows, cols):
        assign[r] = c
    return assign


def nmse_metric(g_hat: np.ndarray, g_true: np.ndarray
                ) -> Tuple[Optional[float], Optional[float]]:
    """(linear NMSE, dB) after resolving column permutation and per-column
    complex scale; unmatched true columns count at full energy.  Returns
    (None, None) for an all-zero truth."""
    g_true = np.asarray(g_true)
    g_hat = np.asarray(g_hat)
    total = float(np.linalg.norm(g_true) ** 2)
    if total == 0:
        return None, None
    assign = match_columns(g_hat, g_true)
    err = 0.0
    for k in range(g_true.shape[1]):
        truth = g_true[:, k]
        if assign[k] < 0:
            err += float(np.linalg.norm(truth) ** 2)
            continue
        est = g_hat[:, assign[k]]
        denom = float(np.real(np.vdot(est, est)))
        scale = np.vdot(est, truth) / denom if denom > 0 else 0.0
        err += float(np.linalg.norm(truth - scale * est) ** 2)
    nmse = err / total
    db = NMSE_ZERO_DB if nmse <= 0 else max(10.0 * math.log10(nmse), NMSE_ZERO_DB)
    return nmse, db
