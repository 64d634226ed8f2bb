"""PCA reduction of deep features to the working dimension."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .lowrank import DimensionError, _as_matrix, _check_finite
from .matrix_io import load_arrays, save_arrays

DEFAULT_DIM = 1024


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray          # (d,)
    projection: np.ndarray    # (k, d), rows are principal directions
    eigenvalues: np.ndarray   # (k,), non-increasing

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[0]

    def save(self, path: str | os.PathLike) -> None:
        save_arrays(path, "pca_model",
                    {"mean": self.mean, "projection": self.projection,
                     "eigenvalues": self.eigenvalues},
                    input_dim=self.input_dim, output_dim=self.output_dim)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PcaModel":
        a = load_arrays(path, "pca_model")
        model = cls(a["mean"], a["projection"], a["eigenvalues"])
        if (model.input_dim, model.output_dim) != (int(a["input_dim"]), int(a["output_dim"])):
            raise DimensionError(f"{path}: stored dims disagree with arrays")
        return model


def working_dim(d: int, n: int, requested: int = DEFAULT_DIM) -> int:
    """Clamp the requested PCA size to what ``n`` centred samples in ``d`` dims support."""
    return max(1, min(requested, d, n - 1))


def _orient(vectors: np.ndarray) -> np.ndarray:
    # deterministic sign: largest-magnitude entry of every column positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _complete_basis(U: np.ndarray, k: int) -> np.ndarray:
    d = U.shape[0]
    Q, _ = np.linalg.qr(np.hstack([U, np.eye(d)]))
    return np.hstack([U, Q[:, U.shape[1]:k]])


def fit_pca(X, k: int) -> PcaModel:
    """Fit PCA on the columns of ``X`` (d x N), keeping the top ``k`` directions.

    When N < d the eigenproblem is solved on the N x N centred Gram matrix and
    mapped back to feature space. Directions with numerically zero variance are
    completed with an orthonormal complement so the projection rows always form
    an orthonormal set.
    """
    X = _check_finite(X, "PCA input")
    if X.ndim != 2:
        raise DimensionError("PCA input must be d x N")
    d, n = X.shape
    if not 1 <= k <= min(d, n):
        raise ValueError(f"k={k} outside [1, min(d, N)={min(d, n)}]")
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    scale = max(n - 1, 1)
    if n < d:
        evals, V = np.linalg.eigh(Xc.T @ Xc / scale)
        order = np.argsort(evals)[::-1]
        evals, V = evals[order], V[:, order]
        tol = max(evals[0], 0.0) * max(d, n) * np.finfo(float).eps
        good = np.flatnonzero(evals[:k] > tol)
        U = Xc @ V[:, good] / np.sqrt(evals[good] * scale)
        U = _orient(U)
        if U.shape[1] < k:
            U = _complete_basis(U, k)
        evals = np.clip(evals[:k], 0.0, None)
    else:
        evals, U = np.linalg.eigh(Xc @ Xc.T / scale)
        order = np.argsort(evals)[::-1][:k]
        evals, U = np.clip(evals[order], 0.0, None), _orient(U[:, order])
    return PcaModel(mean, np.ascontiguousarray(U.T), evals)


def apply_pca(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != model.input_dim:
        raise DimensionError(f"PCA expects {model.input_dim}-dim input, got {X.shape[0]}")
    centred = X - (model.mean[:, None] if X.ndim == 2 else model.mean)
    return model.projection @ centred


def merge_pca_lowrank(model: PcaModel, T) -> tuple[np.ndarray, np.ndarray]:
    """Fold PCA and the low-rank transform into one affine map ``x -> M (x - mean)``."""
    M = _as_matrix(T)
    if M.shape != (model.output_dim, model.output_dim):
        raise DimensionError(f"transform {M.shape} does not match PCA output {model.output_dim}")
    return M @ model.projection, model.mean.copy()


def apply_merged(matrix: np.ndarray, mean: np.ndarray, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != matrix.shape[1]:
        raise DimensionError(f"merged map expects {matrix.shape[1]}-dim input, got {X.shape[0]}")
    return matrix @ (X - (mean[:, None] if X.ndim == 2 else mean))

