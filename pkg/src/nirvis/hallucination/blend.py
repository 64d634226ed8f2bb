"""Blending the hallucinated luminance back with the NIR input."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

DEFAULT_ALPHA = 0.6
DEFAULT_SIGMA = 1.0


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at 3 sigma and renormalised to unit sum."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_smooth(image, sigma: float, passes: int = 1) -> np.ndarray:
    """Separable Gaussian filtering with replicate borders, applied ``passes`` times."""
    out = np.asarray(image, dtype=np.float64)
    g = gaussian_kernel(sigma)
    for _ in range(passes):
        out = ndimage.correlate1d(out, g, axis=-2, mode="nearest")
        out = ndimage.correlate1d(out, g, axis=-1, mode="nearest")
    return out


def blend(y_hat, nir, alpha: float = DEFAULT_ALPHA, sigma: float = DEFAULT_SIGMA,
          passes: int = 2) -> np.ndarray:
    """Y = y_hat - alpha * G(nir - y_hat), with G the Gaussian filter applied ``passes`` times.

    ``passes=2`` reads the squared filter as two successive blurs; ``passes=1``
    gives the single-blur reading.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    nir = np.asarray(nir, dtype=np.float64)
    if y_hat.shape != nir.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {nir.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if passes not in (1, 2):
        raise ValueError("passes must be 1 or 2")
    if alpha == 0.0:
        return y_hat.copy()
    return y_hat - alpha * gaussian_smooth(nir - y_hat, sigma, passes)
