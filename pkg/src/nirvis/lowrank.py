"""Low-rank transform learning over labelled deep-feature matrices.

The transform T is a square linear map learned to minimise

    sum_c ||T Y_c||_*  -  ||T Y||_*

where ``Y_c`` collects the feature columns of class ``c``. The objective is a
difference of convex functions; it is minimised with the concave-convex
procedure (CCP): the concave term is linearised at the current iterate and the
resulting convex surrogate is decreased by subgradient descent.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .matrix_io import load_arrays, save_arrays

SPECTRA = ("NIR", "VIS")
RANK_TOL = 1e-10


class InvalidInputError(ValueError):
    """Raised for non-finite or empty numerical input."""


class DimensionError(ValueError):
    """Raised when operand dimensions do not agree."""


class ConvergenceWarning(UserWarning):
    pass


def _check_finite(M: np.ndarray, what: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        raise InvalidInputError(f"{what} is empty")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{what} has non-finite entries")
    return M


@dataclass(frozen=True)
class LabeledFeatureMatrix:
    """Feature columns (d x N) with one subject label and spectrum tag per column."""

    data: np.ndarray
    labels: np.ndarray
    spectrum: np.ndarray = None

    def __post_init__(self):
        data = _check_finite(self.data, "feature matrix")
        if data.ndim != 2:
            raise InvalidInputError("feature matrix must be 2-D (d x N)")
        labels = np.asarray(self.labels)
        if labels.shape != (data.shape[1],):
            raise DimensionError(f"expected {data.shape[1]} labels, got {labels.shape}")
        spectrum = self.spectrum
        if spectrum is None:
            spectrum = np.full(data.shape[1], "VIS")
        spectrum = np.asarray(spectrum).astype(str)
        if spectrum.shape != labels.shape:
            raise DimensionError("spectrum tags must match the column count")
        bad = set(np.unique(spectrum)) - set(SPECTRA)
        if bad:
            raise InvalidInputError(f"unknown spectrum tags {sorted(bad)}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spectrum", spectrum)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_blocks(self) -> list[np.ndarray]:
        return [self.data[:, self.labels == c] for c in self.classes]


@dataclass(frozen=True)
class LowRankTransform:
    matrix: np.ndarray
    trained_on_dim: int
    converged: bool = True
    objective_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        M = _check_finite(self.matrix, "transform")
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(f"transform must be square, got {M.shape}")
        if M.shape[0] != self.trained_on_dim:
            raise DimensionError("trained_on_dim does not match the matrix size")
        M = M.copy()
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls, d: int) -> "LowRankTransform":
        return cls(np.eye(d), d)

    def save(self, path: str | os.PathLike) -> None:
        save_arrays(path, "lowrank_transform", {"matrix": self.matrix}, dim=self.trained_on_dim)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LowRankTransform":
        arrays = load_arrays(path, "lowrank_transform")
        d = int(arrays["dim"])
        matrix = arrays["matrix"]
        if matrix.shape != (d, d):
            raise DimensionError(f"{path}: stored dim {d} disagrees with matrix {matrix.shape}")
        return cls(matrix, d)


@dataclass(frozen=True)
class CcpConfig:
    max_outer_iters: int = 50
    outer_tolerance: float = 1e-6
    inner_max_iters: int = 100
    inner_step: float = 1e-3
    inner_tolerance: float = 1e-8

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.outer_tolerance < 0 or self.inner_tolerance < 0:
            raise ValueError("tolerances must be non-negative")
        if not self.inner_step > 0:
            raise ValueError("inner_step must be positive")


def nuclear_norm(M) -> float:
    """Sum of singular values of ``M``."""
    M = _check_finite(M)
    return float(np.linalg.svd(M, compute_uv=False).sum())


def nuclear_subgradient(M, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Subgradient ``U V^T`` of the nuclear norm at ``M``.

    Singular directions whose singular value falls below ``rank_tol * sigma_max``
    are dropped, so a zero matrix maps to the zero subgradient.
    """
    M = _check_finite(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(M)
    keep = s > rank_tol * s[0]
    return U[:, keep] @ Vt[keep]


def _nuclear_and_subgradient(M: np.ndarray) -> tuple[float, np.ndarray]:
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0, np.zeros_like(M)
    keep = s > RANK_TOL * s[0]
    return float(s.sum()), U[:, keep] @ Vt[keep]


def _as_matrix(T) -> np.ndarray:
    return T.matrix if isinstance(T, LowRankTransform) else np.asarray(T, dtype=np.float64)


def lowrank_objective(T, Y: LabeledFeatureMatrix) -> float:
    """``sum_c ||T Y_c||_* - ||T Y||_*``; non-negative up to round-off."""
    M = _as_matrix(T)
    if M.shape != (Y.dim, Y.dim):
        raise DimensionError(f"transform {M.shape} does not act on {Y.dim}-dim features")
    within = sum(nuclear_norm(M @ Yc) for Yc in Y.class_blocks())
    return within - nuclear_norm(M @ Y.data)


def _surrogate(T: np.ndarray, blocks: list[np.ndarray], linear: np.ndarray):
    """Convex majoriser value and a subgradient at ``T``."""
    value = -float(np.vdot(linear, T))
    grad = -linear.copy()
    for Yc in blocks:
        nn, G = _nuclear_and_subgradient(T @ Yc)
        value += nn
        grad += G @ Yc.T
    return value, grad


def _descend_surrogate(T0, blocks, linear, config: CcpConfig):
    T = T0
    best_T = T0
    best_val, grad = _surrogate(T, blocks, linear)
    for _ in range(config.inner_max_iters):
        step = config.inner_step * grad
        if np.linalg.norm(step) < config.inner_tolerance:
            break
        T = T - step
        val, grad = _surrogate(T, blocks, linear)
        if val < best_val:
            best_val, best_T = val, T
    return best_T, best_val


def learn_lowrank_transform(Y: LabeledFeatureMatrix, config: CcpConfig | None = None,
                            init: np.ndarray | None = None) -> LowRankTransform:
    """Learn a low-rank transform with the concave-convex procedure.

    Parameters
    ----------
    Y : LabeledFeatureMatrix
        Training features; columns of one subject may mix spectra.
    config : CcpConfig, optional
        Iteration limits and step size of the outer and inner loops.
    init : ndarray, optional
        Starting transform; the identity when omitted.

    Returns
    -------
    LowRankTransform
        The last accepted outer iterate. ``objective_trace`` records the true
        objective after every outer step and never increases. ``converged`` is
        False (and a ``ConvergenceWarning`` is issued) when the outer loop hit
        ``max_outer_iters`` before the relative decrease fell under tolerance.
    """
    config = config or CcpConfig()
    d = Y.dim
    T = np.eye(d) if init is None else np.array(init, dtype=np.float64)
    if T.shape != (d, d):
        raise DimensionError(f"initial transform {T.shape} does not act on {d}-dim features")
    blocks = Y.class_blocks()
    if len(blocks) < 2:
        # objective is identically zero
        return LowRankTransform(T, d, True, (0.0,))

    f = lowrank_objective(T, Y)
    trace = [f]
    converged = False
    for _ in range(config.max_outer_iters):
        # gradient of ||T Y||_* with respect to T at the current iterate
        linear = nuclear_subgradient(T @ Y.data) @ Y.data.T
        T_new, _ = _descend_surrogate(T, blocks, linear, config)
        f_new = lowrank_objective(T_new, Y)
        if f_new > f:
            # round-off made the majoriser step worse; keep the current iterate
            converged = True
            break
        decrease = f - f_new
        T, f = T_new, f_new
        trace.append(f)
        if decrease <= config.outer_tolerance * max(abs(trace[-2]), np.finfo(float).tiny):
            converged = True
            break
    if not converged:
        warnings.warn(f"CCP stopped after {config.max_outer_iters} outer iterations "
                      "without meeting the tolerance", ConvergenceWarning, stacklevel=2)
    return LowRankTransform(T, d, converged, tuple(trace))


def embed(T, features) -> np.ndarray:
    """Apply the transform to feature columns (d x M); no renormalisation."""
    M = _as_matrix(T)
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] != M.shape[1]:
        raise DimensionError(f"transform acts on {M.shape[1]}-dim features, got {X.shape[0]}")
    return M @ X
