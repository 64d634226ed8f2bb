"""BT.601 full-range RGB <-> YCbCr on [0, 1] rasters (chroma offset 0.5)."""

from __future__ import annotations

import numpy as np

KR, KB = 0.299, 0.114
KG = 1.0 - KR - KB


def rgb_to_ycbcr(rgb) -> np.ndarray:
    """(H, W, 3) RGB -> (3, H, W) stack of Y, Cb, Cr."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError("expected an (..., 3) RGB raster")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = KR * r + KG * g + KB * b
    cb = 0.5 + (b - y) / (2.0 * (1.0 - KB))
    cr = 0.5 + (r - y) / (2.0 * (1.0 - KR))
    return np.stack([y, cb, cr])


def ycbcr_to_rgb(ycbcr, clamp: bool = True) -> np.ndarray:
    """Inverse of ``rgb_to_ycbcr``; (3, H, W) -> (H, W, 3), optionally clamped to [0, 1]."""
    y, cb, cr = (np.asarray(c, dtype=np.float64) for c in ycbcr)
    r = y + 2.0 * (1.0 - KR) * (cr - 0.5)
    b = y + 2.0 * (1.0 - KB) * (cb - 0.5)
    g = (y - KR * r - KB * b) / KG
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(rgb, 0.0, 1.0) if clamp else rgb


def luminance(rgb) -> np.ndarray:
    return rgb_to_ycbcr(rgb)[0]
