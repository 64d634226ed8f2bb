"""Sliding-window mining of registered, correlation-gated NIR/VIS patch pairs."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import groupby

import numpy as np

from .align import FACE_SIZE, AlignedFace, warp_affine
from .gate import similarity_gate
from .register import affine_register

GRID_REGIONS = 6


@dataclass(frozen=True)
class MiningConfig:
    window: int = 60
    stride: int = 12
    crop: int = 40
    sum_threshold: float = 1.0
    min_threshold: float = 0.4
    target_total: int | None = None   # pre-flip pair budget for spatial pruning; None keeps all

    def __post_init__(self):
        if not 0 < self.crop < self.window <= FACE_SIZE:
            raise ValueError("need 0 < crop < window <= face size")
        if (self.window - self.crop) % 2:
            raise ValueError("window - crop must be even for a centred crop")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        for t in (self.sum_threshold, self.min_threshold):
            if not -2.0 <= t <= 2.0:
                raise ValueError("gate thresholds must lie in [-2, 2]")
        if self.target_total is not None and self.target_total < 1:
            raise ValueError("target_total must be positive")

    @property
    def quota(self) -> int | None:
        if self.target_total is None:
            return None
        return math.ceil(self.target_total / GRID_REGIONS ** 2)

    def positions(self) -> list[int]:
        return list(range(0, FACE_SIZE - self.window + 1, self.stride))


@dataclass(frozen=True)
class PatchPair:
    nir_patch: np.ndarray     # (crop, crop)
    vis_patch: np.ndarray     # (crop, crop) registered VIS luminance
    subject: int
    location: tuple           # (row, col) of the window's top-left corner
    flipped: bool = False
    vis_chroma: np.ndarray | None = None   # (2, crop, crop) registered Cb, Cr
    corr: float = 1.0
    grad_corr: float = 1.0
    nir_id: str = ""
    vis_id: str = ""

    def __post_init__(self):
        if self.nir_patch.shape != self.vis_patch.shape or self.nir_patch.ndim != 2:
            raise ValueError("patch pair needs two equally sized 2-D patches")

    @property
    def score(self) -> float:
        return self.corr + self.grad_corr

    @property
    def key(self) -> tuple:
        return (self.subject, self.nir_id, self.vis_id, self.location, self.flipped)


def flip_pair(pair: PatchPair) -> PatchPair:
    """Mirror both patches left-right and toggle the flip flag."""
    chroma = None if pair.vis_chroma is None else pair.vis_chroma[:, :, ::-1].copy()
    return replace(pair, nir_patch=pair.nir_patch[:, ::-1].copy(),
                   vis_patch=pair.vis_patch[:, ::-1].copy(), vis_chroma=chroma,
                   flipped=not pair.flipped)


def region_of(location, window: int) -> tuple[int, int]:
    """6 x 6 face-grid cell containing the window centre."""
    cy = location[0] + window / 2.0
    cx = location[1] + window / 2.0
    size = FACE_SIZE / GRID_REGIONS
    return (min(int(cy // size), GRID_REGIONS - 1), min(int(cx // size), GRID_REGIONS - 1))


def _standardize(a: np.ndarray) -> np.ndarray:
    return (a - a.mean()) / a.std()


def scan_face_pair(nir: AlignedFace, vis: AlignedFace, config: MiningConfig) -> tuple[list, int]:
    """Gate every window of one NIR/VIS pair; returns (accepted pairs, windows scanned)."""
    w, c = config.window, config.crop
    off = (w - c) // 2
    inner = (slice(off, off + c), slice(off, off + c))
    accepted, scanned = [], 0
    for r in config.positions():
        for col in config.positions():
            scanned += 1
            nir60 = nir.image[r:r + w, col:col + w]
            vis60 = vis.image[r:r + w, col:col + w]
            if nir60.std() == 0 or vis60.std() == 0:
                continue
            # standardise each window so SSD compares structure, not spectral gain
            reg = affine_register(_standardize(vis60), _standardize(nir60))
            nir40 = nir60[inner]
            vis40 = warp_affine(vis60, reg.matrix, (w, w))[inner]
            corr, grad_corr, ok = similarity_gate(nir40, vis40, config.sum_threshold,
                                                  config.min_threshold)
            if not ok:
                continue
            chroma = None
            if vis.chroma is not None:
                chroma = np.stack([warp_affine(ch[r:r + w, col:col + w], reg.matrix, (w, w))[inner]
                                   for ch in vis.chroma])
            accepted.append(PatchPair(nir40.copy(), vis40.copy(), nir.subject, (r, col), False,
                                      chroma, corr, grad_corr, nir.image_id, vis.image_id))
    return accepted, scanned


def _scan_job(args):
    return scan_face_pair(*args)


def prune_pairs(pairs: list, config: MiningConfig) -> list:
    """Keep at most ``config.quota`` pairs per face-grid region, best scores first."""
    if config.quota is None:
        return sorted(pairs, key=lambda p: p.key)
    def region(p):
        return region_of(p.location, config.window)
    kept = []
    for _, group in groupby(sorted(pairs, key=lambda p: (region(p), -p.score, p.key)), key=region):
        kept.extend(list(group)[:config.quota])
    return sorted(kept, key=lambda p: p.key)


def face_pair_jobs(nir_faces, vis_faces):
    """Every (NIR, VIS) combination within a subject, in deterministic order."""
    by_subject = {}
    for face in vis_faces:
        by_subject.setdefault(face.subject, []).append(face)
    jobs = []
    for nir in sorted(nir_faces, key=lambda f: (f.subject, f.image_id)):
        for vis in sorted(by_subject.get(nir.subject, []), key=lambda f: f.image_id):
            jobs.append((nir, vis))
    return jobs


def mine_pairs(nir_faces, vis_faces, config: MiningConfig | None = None, jobs: int = 1,
               flip: bool = True, stats: dict | None = None) -> list[PatchPair]:
    """Mine gated patch pairs from every same-subject NIR/VIS face combination.

    Candidates are pruned to a per-region quota and every survivor is returned
    together with its horizontal mirror (original first). ``stats`` if given
    receives the number of windows scanned and accepted.
    """
    config = config or MiningConfig()
    pairs_in = face_pair_jobs(nir_faces, vis_faces)
    args = [(n, v, config) for n, v in pairs_in]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_scan_job, args))
    else:
        results = [_scan_job(a) for a in args]
    candidates = [p for accepted, _ in results for p in accepted]
    if stats is not None:
        stats["scanned"] = sum(n for _, n in results)
        stats["accepted"] = len(candidates)
    survivors = prune_pairs(candidates, config)
    if not flip:
        return survivors
    out = []
    for p in survivors:
        out += [p, flip_pair(p)]
    return out
