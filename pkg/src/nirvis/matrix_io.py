"""Versioned matrix container shared by the PCA and low-rank models.

Files are numpy ``.npz`` archives (no pickling) holding a ``format_version``
scalar, a ``kind`` string and float64 arrays stored row-major.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1


class MatrixFileError(ValueError):
    pass


def save_arrays(path: str | os.PathLike, kind: str, arrays: Mapping[str, np.ndarray],
                **scalars: int) -> None:
    payload = {
        "format_version": np.array(FORMAT_VERSION, dtype=np.int64),
        "kind": np.array(kind),
    }
    for name, value in scalars.items():
        payload[name] = np.array(value, dtype=np.int64)
    for name, arr in arrays.items():
        payload[name] = np.ascontiguousarray(arr, dtype=np.float64)
    # np.savez appends .npz to bare names; write through a handle to keep the path exact
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path: str | os.PathLike, kind: str) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        if "format_version" not in data.files or "kind" not in data.files:
            raise MatrixFileError(f"{path}: not a matrix container")
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise MatrixFileError(f"{path}: unsupported format version {version}")
        found = str(data["kind"])
        if found != kind:
            raise MatrixFileError(f"{path}: expected a {kind!r} file, found {found!r}")
        return {name: data[name] for name in data.files if name not in ("format_version", "kind")}
