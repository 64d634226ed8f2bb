"""Affine patch registration by inverse-compositional Gauss-Newton on SSD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import warp_affine

MAX_ITERS = 50
STEP_TOL = 1e-4
DIVERGENCE_RUN = 3


@dataclass(frozen=True)
class Registration:
    warped: np.ndarray     # VIS patch resampled onto the NIR grid
    matrix: np.ndarray     # 2x3, NIR pixel (x, y, 1) -> VIS pixel
    params: np.ndarray     # 6 warp parameters in centred coordinates
    registered: bool       # False when the fit diverged and identity was returned
    iterations: int
    ssd_identity: float
    ssd: float


def params_to_matrix(p, center) -> np.ndarray:
    """Warp x' = A x + t in coordinates centred on ``center``, as a pixel-space 2x3 matrix."""
    A = np.array([[1.0 + p[0], p[2]], [p[1], 1.0 + p[3]]])
    t = np.array([p[4], p[5]])
    c = np.asarray(center, dtype=np.float64)
    return np.hstack([A, (t + c - A @ c)[:, None]])


def _as3(p) -> np.ndarray:
    return np.array([[1.0 + p[0], p[2], p[4]], [p[1], 1.0 + p[3], p[5]], [0.0, 0.0, 1.0]])


def _from3(W) -> np.ndarray:
    return np.array([W[0, 0] - 1.0, W[1, 0], W[0, 1], W[1, 1] - 1.0, W[0, 2], W[1, 2]])


def affine_register(vis, nir, max_iters: int = MAX_ITERS, step_tol: float = STEP_TOL) -> Registration:
    """Align ``vis`` onto ``nir`` (the fixed template) with a 6-parameter affine warp.

    Starts at identity; stops after ``max_iters`` or when the update norm drops
    below ``step_tol``. The best iterate by SSD (identity included) is kept, so
    the residual never exceeds the unregistered one. If the error grows on
    three consecutive iterations the fit is abandoned and the identity result
    returned with ``registered=False``.
    """
    vis = np.asarray(vis, dtype=np.float64)
    T = np.asarray(nir, dtype=np.float64)
    if vis.shape != T.shape:
        raise ValueError("patches must have the same shape")
    if T.std() == 0 or vis.std() == 0:
        raise ValueError("registration needs non-constant patches")
    h, w = T.shape
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs -= center[0]
    ys -= center[1]
    gy, gx = np.gradient(T)
    # steepest-descent images for p = (a11-1, a21, a12, a22-1, tx, ty)
    sd = np.stack([gx * xs, gy * xs, gx * ys, gy * ys, gx, gy], axis=-1).reshape(-1, 6)
    t_flat = T.ravel()

    p = np.zeros(6)
    best_p, best_err = p.copy(), np.inf
    prev_err, rises, it = np.inf, 0, 0
    for it in range(1, max_iters + 1):
        warped = warp_affine(vis, params_to_matrix(p, center), T.shape, mode="constant", cval=np.nan)
        valid = np.isfinite(warped).ravel()
        if valid.sum() < 6:
            break
        err = warped.ravel()[valid] - t_flat[valid]
        mse = float(np.mean(err * err))
        if mse < best_err:
            best_p, best_err = p.copy(), mse
        rises = rises + 1 if mse > prev_err else 0
        prev_err = mse
        if rises >= DIVERGENCE_RUN:
            return _identity_result(vis, T, center, it)
        J = sd[valid]
        try:
            dp = np.linalg.solve(J.T @ J, J.T @ err)
        except np.linalg.LinAlgError:
            break
        p = _from3(_as3(p) @ np.linalg.inv(_as3(dp)))
        if np.linalg.norm(dp) < step_tol:
            break
    # the last update has not been scored yet
    warped = warp_affine(vis, params_to_matrix(p, center), T.shape, mode="constant", cval=np.nan)
    valid = np.isfinite(warped)
    if valid.sum() >= 6 and np.mean((warped[valid] - T[valid]) ** 2) < best_err:
        best_p = p.copy()
    ident = _identity_result(vis, T, center, it)
    M = params_to_matrix(best_p, center)
    warped = warp_affine(vis, M, T.shape)
    ssd = float(np.mean((warped - T) ** 2))
    if ssd > ident.ssd:
        # never hand back a fit that is worse than doing nothing
        return Registration(ident.warped, ident.matrix, ident.params, True, it, ident.ssd, ident.ssd)
    return Registration(warped, M, best_p, True, it, ident.ssd, ssd)


def _identity_result(vis, T, center, it) -> Registration:
    ssd = float(np.mean((vis - T) ** 2))
    return Registration(vis.copy(), params_to_matrix(np.zeros(6), center), np.zeros(6),
                        False, it, ssd, ssd)
