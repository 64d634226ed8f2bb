"""Three-point face alignment and intensity normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..hallucination.color import rgb_to_ycbcr

FACE_SIZE = 224
# x, y of left eye, right eye, mouth centre in the aligned frame
CANONICAL_LANDMARKS = np.array([[78.0, 90.0], [146.0, 90.0], [112.0, 168.0]])


class AlignmentError(ValueError):
    """Landmarks are degenerate or fall outside the image."""


@dataclass(frozen=True)
class AlignedFace:
    image: np.ndarray           # (224, 224) NIR intensity or VIS luminance
    subject: int
    spectrum: str
    image_id: str
    chroma: np.ndarray | None = None   # (2, 224, 224) Cb, Cr for colour VIS faces

    def __post_init__(self):
        if self.image.shape != (FACE_SIZE, FACE_SIZE):
            raise ValueError(f"aligned faces are {FACE_SIZE}x{FACE_SIZE}, got {self.image.shape}")
        if not np.all(np.isfinite(self.image)):
            raise ValueError("aligned face has non-finite pixels")


def affine_from_points(src, dst) -> np.ndarray:
    """2x3 matrix M with M @ [x, y, 1] = dst for each of three (x, y) points in src."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    A = np.hstack([src, np.ones((3, 1))])
    span = np.ptp(src, axis=0).max()
    if abs(np.linalg.det(A)) <= 1e-9 * max(span, 1.0) ** 2:
        raise AlignmentError("landmarks are collinear")
    return np.linalg.solve(A, dst).T


def warp_affine(image, matrix, shape, order: int = 1, mode: str = "nearest", cval: float = 0.0):
    """Sample ``image`` at ``matrix @ [x, y, 1]`` for every output pixel (x = column)."""
    m = np.asarray(matrix, dtype=np.float64)
    # ndimage indexes (row, col), i.e. (y, x)
    rc = np.array([[m[1, 1], m[1, 0]], [m[0, 1], m[0, 0]]])
    return ndimage.affine_transform(np.asarray(image, dtype=np.float64), rc,
                                    offset=(m[1, 2], m[0, 2]), output_shape=tuple(shape),
                                    order=order, mode=mode, cval=cval, prefilter=order > 1)


def landmark_align(image, landmarks, subject: int = 0, spectrum: str = "NIR", image_id: str = "",
                   canonical=CANONICAL_LANDMARKS, size: int = FACE_SIZE) -> AlignedFace:
    """Warp ``image`` so its three landmarks land on the canonical positions.

    Colour images are split into luminance (the aligned raster) and chroma.
    Resampling is bilinear with replicated borders.
    """
    image = np.asarray(image, dtype=np.float64)
    lm = np.asarray(landmarks, dtype=np.float64).reshape(3, 2)
    h, w = image.shape[:2]
    if np.any(lm < 0) or np.any(lm[:, 0] > w - 1) or np.any(lm[:, 1] > h - 1):
        raise AlignmentError("landmarks fall outside the image")
    affine_from_points(lm, canonical)         # collinearity check on the detected points
    M = affine_from_points(canonical, lm)     # output frame -> source pixels
    chroma = None
    if image.ndim == 3:
        ycc = rgb_to_ycbcr(image)
        planes = [warp_affine(c, M, (size, size)) for c in ycc]
        lum, chroma = planes[0], np.stack(planes[1:])
    else:
        lum = warp_affine(image, M, (size, size))
    return AlignedFace(lum, subject, spectrum, image_id, chroma)


def normalize_stats(face: AlignedFace, ref_mean: float, ref_std: float) -> AlignedFace:
    """Affinely rescale intensities to the reference mean and (population) std."""
    std = float(face.image.std())
    if std <= 0 or not np.isfinite(std):
        raise ValueError(f"face {face.image_id!r} is constant; cannot normalise")
    image = (face.image - face.image.mean()) / std * ref_std + ref_mean
    return AlignedFace(image, face.subject, face.spectrum, face.image_id, face.chroma)
