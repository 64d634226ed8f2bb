"""Binary patch-pair dataset with a plain-text index."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .mine import PatchPair

MAGIC = b"NVPATCH\0"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")   # magic, version, count, crop, vis channels (1 or 3)


class PatchFileError(ValueError):
    """Patch dataset file is malformed or from an unknown version."""


def _record_dtype(crop: int, vis_channels: int) -> np.dtype:
    return np.dtype([
        ("subject", "<i4"), ("row", "<i4"), ("col", "<i4"), ("flipped", "u1"),
        ("corr", "<f8"), ("grad_corr", "<f8"),
        ("nir", "<f4", (crop, crop)), ("vis", "<f4", (vis_channels, crop, crop)),
    ])


def save_patches(path: str | os.PathLike, pairs: list[PatchPair]) -> None:
    """Write pairs to ``path`` and a tab-separated index to ``path + '.idx'``."""
    path = Path(path)
    crop = pairs[0].nir_patch.shape[0] if pairs else 0
    chans = 3 if pairs and pairs[0].vis_chroma is not None else 1
    if any((p.vis_chroma is not None) != (chans == 3) for p in pairs):
        raise ValueError("either all or none of the pairs must carry chroma")
    rec = np.zeros(len(pairs), dtype=_record_dtype(crop, chans))
    for i, p in enumerate(pairs):
        rec[i] = (p.subject, p.location[0], p.location[1], p.flipped, p.corr, p.grad_corr,
                  p.nir_patch,
                  p.vis_patch[None] if chans == 1 else np.concatenate([p.vis_patch[None], p.vis_chroma]))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(pairs), crop, chans))
        fh.write(rec.tobytes())
    with open(str(path) + ".idx", "w") as fh:
        fh.write("index\tsubject\trow\tcol\tflipped\tnir_id\tvis_id\n")
        for i, p in enumerate(pairs):
            fh.write(f"{i}\t{p.subject}\t{p.location[0]}\t{p.location[1]}\t{int(p.flipped)}"
                     f"\t{p.nir_id}\t{p.vis_id}\n")


def load_patches(path: str | os.PathLike) -> list[PatchPair]:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise PatchFileError(f"{path}: truncated header")
        magic, version, count, crop, chans = _HEADER.unpack(head)
        if magic != MAGIC:
            raise PatchFileError(f"{path}: not a patch dataset")
        if version != VERSION:
            raise PatchFileError(f"{path}: unsupported version {version}")
        body = fh.read()
    if count == 0:
        return []
    dtype = _record_dtype(crop, chans)
    if len(body) != count * dtype.itemsize:
        raise PatchFileError(f"{path}: expected {count} records")
    rec = np.frombuffer(body, dtype=dtype)
    ids = [("", "")] * count
    idx_path = Path(str(path) + ".idx")
    if idx_path.exists():
        lines = idx_path.read_text().splitlines()[1:]
        ids = [tuple(line.split("\t")[5:7]) for line in lines]
    pairs = []
    for r, (nir_id, vis_id) in zip(rec, ids):
        vis = r["vis"].astype(np.float64)
        pairs.append(PatchPair(r["nir"].astype(np.float64), vis[0], int(r["subject"]),
                               (int(r["row"]), int(r["col"])), bool(r["flipped"]),
                               vis[1:] if chans == 3 else None,
                               float(r["corr"]), float(r["grad_corr"]), nir_id, vis_id))
    return pairs
