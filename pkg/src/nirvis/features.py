"""Deep-feature ingestion: versioned feature files, subject folds, a built-in provider."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NVFEAT\0\0"
VERSION = 1
SPECTRA = ("NIR", "VIS")
KINDS = ("raw_nir", "hallucinated", "vis")
ID_BYTES = 48

_HEAD = struct.Struct("<8sIIIB32s")         # magic, version, dim, count, expects_rgb, provider
_RECORD = struct.Struct(f"<i{ID_BYTES}sBBBI")  # subject, image id, spectrum, kind, replicated, dim


class FeatureFileError(ValueError):
    """Feature file is malformed, inconsistent or from an unknown version."""


class FoldError(ValueError):
    """Fold assignment is incomplete or not subject-disjoint."""


@dataclass(frozen=True)
class FeatureRecord:
    subject: int
    image_id: str
    spectrum: str            # "NIR" or "VIS"
    kind: str                # "raw_nir", "hallucinated" or "vis"
    vector: np.ndarray
    replicated: bool = False  # single-channel NIR copied to 3 channels for the extractor

    def __post_init__(self):
        if self.spectrum not in SPECTRA:
            raise ValueError(f"unknown spectrum {self.spectrum!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown input kind {self.kind!r}")
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError(f"record {self.image_id!r}: vector must be 1-D and finite")
        if len(self.image_id.encode()) > ID_BYTES:
            raise ValueError(f"image id longer than {ID_BYTES} bytes: {self.image_id!r}")
        object.__setattr__(self, "vector", v)

    def same_as(self, other: "FeatureRecord") -> bool:
        return (self.subject, self.image_id, self.spectrum, self.kind, self.replicated) == \
            (other.subject, other.image_id, other.spectrum, other.kind, other.replicated) \
            and np.array_equal(self.vector, other.vector)


@dataclass(frozen=True)
class FeatureFile:
    records: list
    provider: str = ""
    expects_rgb: bool = False

    @property
    def dim(self) -> int:
        return len(self.records[0].vector) if self.records else 0


def save_features(path: str | os.PathLike, records, provider: str = "", expects_rgb: bool = False,
                  strict: bool = True) -> None:
    """Write records behind a header carrying dimension, count and provider name.

    ``strict=False`` skips the uniform-dimension check (only useful to build
    broken fixtures).
    """
    records = list(records)
    dim = len(records[0].vector) if records else 0
    if strict:
        for i, r in enumerate(records):
            if len(r.vector) != dim:
                raise FeatureFileError(f"record {i} ({r.image_id!r}) has dim {len(r.vector)}, expected {dim}")
    name = provider.encode()
    if len(name) > 32:
        raise ValueError("provider name longer than 32 bytes")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, dim, len(records), int(expects_rgb), name))
        for r in records:
            fh.write(_RECORD.pack(r.subject, r.image_id.encode(), SPECTRA.index(r.spectrum),
                                  KINDS.index(r.kind), int(r.replicated), len(r.vector)))
            fh.write(r.vector.astype("<f8").tobytes())


def load_features(path: str | os.PathLike) -> FeatureFile:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEAD.size:
        raise FeatureFileError(f"{path}: truncated header")
    magic, version, dim, count, expects_rgb, name = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: not a feature file")
    if version != VERSION:
        raise FeatureFileError(f"{path}: unknown version {version}")
    records, pos = [], _HEAD.size
    for i in range(count):
        if pos + _RECORD.size > len(data):
            raise FeatureFileError(f"{path}: record {i} is truncated")
        subject, raw_id, spec, kind, replicated, rdim = _RECORD.unpack_from(data, pos)
        image_id = raw_id.rstrip(b"\0").decode(errors="replace")
        pos += _RECORD.size
        if rdim != dim:
            raise FeatureFileError(f"{path}: record {i} ({image_id!r}) has dim {rdim}, header says {dim}")
        if spec >= len(SPECTRA) or kind >= len(KINDS):
            raise FeatureFileError(f"{path}: record {i} ({image_id!r}) has an unknown tag")
        end = pos + 8 * rdim
        if end > len(data):
            raise FeatureFileError(f"{path}: record {i} ({image_id!r}) is truncated")
        vec = np.frombuffer(data[pos:end], dtype="<f8").astype(np.float64)
        pos = end
        if expects_rgb and KINDS[kind] == "raw_nir" and not replicated:
            raise FeatureFileError(f"{path}: record {i} ({image_id!r}) is raw NIR fed to an RGB "
                                   "extractor but not marked replicated")
        try:
            records.append(FeatureRecord(subject, image_id, SPECTRA[spec], KINDS[kind], vec,
                                         bool(replicated)))
        except ValueError as exc:
            raise FeatureFileError(f"{path}: record {i}: {exc}") from exc
    if pos != len(data):
        raise FeatureFileError(f"{path}: {len(data) - pos} trailing bytes after {count} records")
    return FeatureFile(records, name.rstrip(b"\0").decode(), bool(expects_rgb))


@dataclass(frozen=True)
class FoldAssignment:
    n_folds: int
    fold_of: dict = field(default_factory=dict)   # subject -> 1-based fold

    def __post_init__(self):
        bad = {s: f for s, f in self.fold_of.items() if not 1 <= f <= self.n_folds}
        if bad:
            raise FoldError(f"fold index out of range for subjects {sorted(bad)}")

    @classmethod
    def from_lists(cls, folds) -> "FoldAssignment":
        fold_of = {}
        for k, members in enumerate(folds, start=1):
            for s in members:
                if s in fold_of:
                    raise FoldError(f"subject {s} assigned to folds {fold_of[s]} and {k}")
                fold_of[s] = k
        return cls(len(folds), fold_of)

    def subjects(self, fold: int) -> list:
        return sorted(s for s, f in self.fold_of.items() if f == fold)


def make_folds(subjects, n_folds: int) -> FoldAssignment:
    """Contiguous folds over subject ids taken in natural (numeric) order."""
    ordered = sorted(set(int(s) for s in subjects))
    if not 1 <= n_folds <= len(ordered):
        raise FoldError(f"cannot split {len(ordered)} subjects into {n_folds} folds")
    chunks = np.array_split(np.array(ordered), n_folds)
    return FoldAssignment.from_lists([c.tolist() for c in chunks])


def split_folds(records, assignment: FoldAssignment, test_fold: int):
    """(train, test) record lists; test holds exactly the subjects of ``test_fold``."""
    if not 1 <= test_fold <= assignment.n_folds:
        raise FoldError(f"test fold {test_fold} outside 1..{assignment.n_folds}")
    train, test = [], []
    for r in records:
        if r.subject not in assignment.fold_of:
            raise FoldError(f"subject {r.subject} ({r.image_id!r}) has no fold")
        (test if assignment.fold_of[r.subject] == test_fold else train).append(r)
    overlap = {r.subject for r in train} & {r.subject for r in test}
    assert not overlap, f"subjects in both splits: {sorted(overlap)}"
    return train, test


class BlockMeanProvider:
    """Mean colour of 16 x 16 blocks of a 224 x 224 RGB face (588 values)."""

    name = "blockmean16"
    expects_rgb = True
    block = 16

    def extract(self, image) -> tuple[np.ndarray, bool]:
        """Feature vector and whether a single-channel input was replicated to RGB."""
        img = np.asarray(image, dtype=np.float64)
        replicated = img.ndim == 2
        if replicated:
            img = np.repeat(img[..., None], 3, axis=2)
        h, w, c = img.shape
        if c != 3 or h % self.block or w % self.block:
            raise ValueError(f"expected an RGB image tiled by {self.block}px blocks, got {img.shape}")
        b = self.block
        means = img.reshape(h // b, b, w // b, b, c).mean(axis=(1, 3))
        return means.ravel(), replicated


PROVIDERS = {BlockMeanProvider.name: BlockMeanProvider}
