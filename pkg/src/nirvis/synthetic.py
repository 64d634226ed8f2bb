"""Synthetic fixtures standing in for the (non-redistributable) NIR-VIS corpus.

Feature-level generators build labelled matrices with controlled subspace
structure; ``synthetic_faces`` renders small image sets with landmarks so the
image pipeline can run end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .lowrank import LabeledFeatureMatrix


def orthogonal_class_features(rng, dim=12, n_classes=3, rank=2, per_class=5) -> LabeledFeatureMatrix:
    """Classes living in mutually orthogonal ``rank``-dim subspaces (no noise)."""
    if n_classes * rank > dim:
        raise ValueError("not enough dimensions for orthogonal class subspaces")
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    blocks = [Q[:, c * rank:(c + 1) * rank] @ rng.standard_normal((rank, per_class))
              for c in range(n_classes)]
    return LabeledFeatureMatrix(np.hstack(blocks), np.repeat(np.arange(n_classes), per_class))


def subspace_class_features(rng, dim=20, n_classes=3, rank=2, per_class=10,
                            noise=0.01) -> LabeledFeatureMatrix:
    """Classes on random (hence pairwise non-orthogonal) low-dim subspaces plus noise."""
    blocks = []
    for _ in range(n_classes):
        basis, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
        blocks.append(basis @ rng.standard_normal((rank, per_class))
                      + noise * rng.standard_normal((dim, per_class)))
    return LabeledFeatureMatrix(np.hstack(blocks), np.repeat(np.arange(n_classes), per_class))


def fixed_angle_rotation(rng, dim: int, angle_deg: float) -> np.ndarray:
    """Orthogonal matrix turning every vector by ``angle_deg`` (odd dims keep one axis fixed)."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    c, s = np.cos(np.deg2rad(angle_deg)), np.sin(np.deg2rad(angle_deg))
    block = np.eye(dim)
    for i in range(0, dim - 1, 2):
        block[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
    return Q @ block @ Q.T


@dataclass
class CrossSpectralData:
    features: np.ndarray    # (dim, N)
    labels: np.ndarray      # (N,)
    spectrum: np.ndarray    # (N,) "VIS" / "NIR"
    sample: np.ndarray      # (N,) sample index within subject and spectrum
    rotation: np.ndarray

    def select(self, mask) -> "CrossSpectralData":
        return CrossSpectralData(self.features[:, mask], self.labels[mask], self.spectrum[mask],
                                 self.sample[mask], self.rotation)


def cross_spectral_features(rng, n_subjects=20, per_spectrum=10, dim=64, noise=0.01,
                            angle_deg=85.0) -> CrossSpectralData:
    """Subjects are random unit vectors; NIR samples see a fixed global rotation.

    VIS sample: ``s + noise``; NIR sample: ``R s + noise`` with ``R`` shared by
    every subject.
    """
    subjects = rng.standard_normal((dim, n_subjects))
    subjects /= np.linalg.norm(subjects, axis=0)
    R = fixed_angle_rotation(rng, dim, angle_deg)
    cols, labels, spectrum, sample = [], [], [], []
    for tag, base in (("VIS", subjects), ("NIR", R @ subjects)):
        for c in range(n_subjects):
            cols.append(base[:, [c]] + noise * rng.standard_normal((dim, per_spectrum)))
            labels += [c] * per_spectrum
            spectrum += [tag] * per_spectrum
            sample += list(range(per_spectrum))
    return CrossSpectralData(np.hstack(cols), np.array(labels), np.array(spectrum),
                             np.array(sample), R)


def spectral_shift_features(rng, n_subjects=40, per_spectrum=5, dim=32, shift_dim=4, shift=3.0,
                            noise=0.01) -> CrossSpectralData:
    """Subjects are random unit vectors; NIR samples add a large random offset
    confined to a fixed ``shift_dim``-dim subspace shared by every subject.

    Unlike a global rotation, the spectral nuisance here can be removed by one
    linear map learned on other subjects, so subject-disjoint folds still work.
    """
    subjects = rng.standard_normal((dim, n_subjects))
    subjects /= np.linalg.norm(subjects, axis=0)
    B, _ = np.linalg.qr(rng.standard_normal((dim, shift_dim)))
    cols, labels, spectrum, sample = [], [], [], []
    for tag in ("VIS", "NIR"):
        for c in range(n_subjects):
            X = subjects[:, [c]] + noise * rng.standard_normal((dim, per_spectrum))
            if tag == "NIR":
                X = X + shift / np.sqrt(shift_dim) * (B @ rng.standard_normal((shift_dim, per_spectrum)))
            cols.append(X)
            labels += [c] * per_spectrum
            spectrum += [tag] * per_spectrum
            sample += list(range(per_spectrum))
    return CrossSpectralData(np.hstack(cols), np.array(labels), np.array(spectrum),
                             np.array(sample), B)


def smooth_texture(rng, shape, sigma: float) -> np.ndarray:
    """Gaussian-filtered white noise rescaled to zero mean, unit std."""
    t = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (t - t.mean()) / t.std()


CANVAS = 256


def _face_luminance(rng, identity: np.ndarray) -> np.ndarray:
    """Shaded ellipse with dark eyes and mouth at the canonical spots, plus identity texture."""
    from .mining.align import CANONICAL_LANDMARKS
    yy, xx = np.mgrid[0:224, 0:224].astype(np.float64)
    face = np.exp(-(((xx - 112) / 85) ** 2 + ((yy - 120) / 105) ** 2) ** 2)
    lum = 0.15 + 0.6 * face
    for (x, y), r in zip(CANONICAL_LANDMARKS, (9.0, 9.0, 13.0)):
        lum -= 0.25 * np.exp(-(((xx - x) / r) ** 2 + ((yy - y) / (0.55 * r)) ** 2))
    return lum + 0.08 * identity * face


def _place(rng, lum: np.ndarray, max_shift: float = 6.0, max_angle: float = 3.0):
    """Paste a 224 frame into a larger canvas under a small random similarity warp."""
    from .mining.align import CANONICAL_LANDMARKS, warp_affine
    ang = np.deg2rad(rng.uniform(-max_angle, max_angle))
    s = rng.uniform(0.97, 1.03)
    shift = rng.uniform(-max_shift, max_shift, 2) + (CANVAS - 224) / 2
    A = s * np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    c = np.array([112.0, 112.0])
    fwd = np.hstack([A, (shift + c - A @ c)[:, None]])            # frame -> canvas
    inv = np.linalg.inv(np.vstack([fwd, [0, 0, 1]]))[:2]
    planes = lum if lum.ndim == 3 else lum[None]
    out = np.stack([warp_affine(p, inv, (CANVAS, CANVAS)) for p in planes])
    landmarks = (fwd[:, :2] @ CANONICAL_LANDMARKS.T).T + fwd[:, 2]
    return (out if lum.ndim == 3 else out[0]), landmarks


def synthetic_faces(rng, out_dir, n_subjects: int = 6, vis_per_subject: int = 2,
                    nir_per_subject: int = 2, noise: float = 0.01):
    """Render NIR (grayscale) and VIS (RGB) PNG faces with a manifest; returns its path.

    Each subject owns a smooth identity texture. VIS faces tint the luminance
    with a per-subject skin colour; NIR faces see a nonlinear intensity response
    and a sensor texture of their own, so the two spectra differ but share
    structure.
    """
    from pathlib import Path

    from PIL import Image

    from .hallucination.color import ycbcr_to_rgb
    from .manifest import ManifestEntry, write_manifest
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for subject in range(n_subjects):
        identity = smooth_texture(rng, (224, 224), 4.0)
        base = _face_luminance(rng, identity)
        tint = rng.uniform(-0.06, 0.06, 2)
        for spectrum, count in (("VIS", vis_per_subject), ("NIR", nir_per_subject)):
            for k in range(count):
                if spectrum == "VIS":
                    y = base + noise * rng.standard_normal(base.shape)
                    chroma = [0.5 - 0.05 + tint[0] + 0 * y, 0.5 + 0.06 + tint[1] + 0.05 * (y - 0.5)]
                    img = ycbcr_to_rgb(np.stack([y] + chroma))
                    img = img.transpose(2, 0, 1)
                else:
                    sensor = 0.03 * smooth_texture(rng, (224, 224), 1.5)
                    img = 0.85 * np.clip(base, 0, 1) ** 0.7 + 0.1 + sensor
                    img = img + noise * rng.standard_normal(base.shape)
                placed, landmarks = _place(rng, img)
                pixels = np.clip(placed, 0.0, 1.0)
                image_id = f"s{subject:03d}_{spectrum.lower()}{k}"
                path = out_dir / f"{image_id}.png"
                if spectrum == "VIS":
                    Image.fromarray(np.round(pixels.transpose(1, 2, 0) * 255).astype(np.uint8), "RGB").save(path)
                else:
                    Image.fromarray(np.round(pixels * 255).astype(np.uint8), "L").save(path)
                entries.append(ManifestEntry(path, subject, spectrum, image_id, landmarks))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest
