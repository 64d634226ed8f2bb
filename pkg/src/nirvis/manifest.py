"""Image manifests: one CSV row per face image with its three landmarks."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

FIELDS = ["path", "subject", "spectrum", "image_id",
          "left_eye_x", "left_eye_y", "right_eye_x", "right_eye_y", "mouth_x", "mouth_y"]


class ManifestError(ValueError):
    """Manifest row is missing fields or has unparsable values."""


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    subject: int
    spectrum: str          # "NIR" or "VIS"
    image_id: str
    landmarks: np.ndarray  # (3, 2) x, y of left eye, right eye, mouth

    def load_image(self) -> np.ndarray:
        """Pixels scaled to [0, 1]: (H, W) for NIR, (H, W, 3) for VIS."""
        with Image.open(self.path) as im:
            im = im.convert("L" if self.spectrum == "NIR" else "RGB")
            return np.asarray(im, dtype=np.float64) / 255.0


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                spectrum = row["spectrum"].strip().upper()
                if spectrum not in ("NIR", "VIS"):
                    raise ValueError(f"unknown spectrum {row['spectrum']!r}")
                lm = np.array([float(row[f]) for f in FIELDS[4:]]).reshape(3, 2)
                subject = int(row["subject"])
                if subject < 0:
                    raise ValueError("subject ids must be non-negative")
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{line}: {exc}") from exc
            img = Path(row["path"])
            entries.append(ManifestEntry(img if img.is_absolute() else path.parent / img,
                                         subject, spectrum, row["image_id"], lm))
    return entries


def write_manifest(path: str | os.PathLike, entries) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for e in entries:
            p = Path(e.path)
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([p.as_posix(), e.subject, e.spectrum, e.image_id]
                       + [repr(float(v)) for v in np.asarray(e.landmarks).ravel()])
