"""Whole-face inference with the three channel networks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .color import ycbcr_to_rgb
from .network import CHANNELS, HallucinationNet, forward


class UntrainedNetWarning(UserWarning):
    """A network that never went through ``train`` was used for inference."""


@dataclass(frozen=True)
class HallucinatedImage:
    ycbcr: np.ndarray   # (3, H, W), unclamped network outputs
    rgb: np.ndarray     # (H, W, 3), clamped to [0, 1]


def run_net(net: HallucinationNet, nir, group: int = 4) -> np.ndarray:
    """Forward a (B, H, W) stack in groups of ``group`` rasters, returning float64."""
    nir = np.asarray(nir)
    single = nir.ndim == 2
    stack = nir[None] if single else nir
    out = np.concatenate([forward(net, stack[i:i + group]) for i in range(0, len(stack), group)])
    out = out.astype(np.float64)
    return out[0] if single else out


def hallucinate(nets: dict, nir, group: int = 4):
    """Apply the Y, Cb and Cr nets to NIR faces (H x W or B x H x W).

    Returns a ``HallucinatedImage`` (or a list of them for a stack).
    """
    missing = [c for c in CHANNELS if c not in nets]
    if missing:
        raise ValueError(f"missing channel nets: {missing}")
    untrained = [c for c in CHANNELS if not nets[c].trained]
    if untrained:
        warnings.warn(f"untrained hallucination nets: {untrained}", UntrainedNetWarning, stacklevel=2)
    nir = np.asarray(nir)
    channels = np.stack([run_net(nets[c], nir, group) for c in CHANNELS], axis=-3)
    if nir.ndim == 2:
        return HallucinatedImage(channels, ycbcr_to_rgb(channels))
    return [HallucinatedImage(c, ycbcr_to_rgb(c)) for c in channels]
