"""Patch-pair acceptance by intensity and gradient-magnitude correlation."""

from __future__ import annotations

import numpy as np

# absorbs round-off when a measured correlation sits exactly on a threshold
GATE_SLACK = 1e-9


def pearson(a, b) -> float:
    """Pearson correlation; 0 when either input is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def gradient_magnitude(patch) -> np.ndarray:
    """Central differences with replicated borders."""
    p = np.pad(np.asarray(patch, dtype=np.float64), 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    return np.hypot(gx, gy)


def gate_decision(corr: float, grad_corr: float, sum_threshold: float = 1.0,
                  min_threshold: float = 0.4) -> bool:
    """Accept when the two correlations add up to the threshold and neither is below the floor.

    The sum test is inclusive, so a pair sitting exactly at (0.5, 0.5) passes.
    """
    return (corr + grad_corr >= sum_threshold - GATE_SLACK
            and min(corr, grad_corr) >= min_threshold - GATE_SLACK)


def similarity_gate(p, q, sum_threshold: float = 1.0, min_threshold: float = 0.4):
    """Return (corr, grad_corr, accept) for two equally sized patches."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("patches must have the same shape")
    if p.std() == 0 or q.std() == 0:
        return 0.0, 0.0, False
    corr = pearson(p, q)
    grad_corr = pearson(gradient_magnitude(p), gradient_magnitude(q))
    return corr, grad_corr, gate_decision(corr, grad_corr, sum_threshold, min_threshold)
