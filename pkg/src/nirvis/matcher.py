"""Closed-set identification by cosine similarity, with rank-k / CMC reporting."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray   # (k, n) one column per image
    labels: np.ndarray     # (n,) subject ids
    spectrum: str = "VIS"
    ids: tuple = ()

    def __post_init__(self):
        F = np.asarray(self.features, dtype=np.float64)
        if F.ndim != 2 or F.shape[1] == 0:
            raise ValueError("feature set needs a non-empty k x n matrix")
        if not np.all(np.isfinite(F)):
            raise ValueError("feature set has non-finite entries")
        labels = np.asarray(self.labels)
        if labels.shape != (F.shape[1],):
            raise ValueError(f"expected {F.shape[1]} labels, got {labels.shape}")
        ids = tuple(self.ids) if len(self.ids) else tuple(str(i) for i in range(F.shape[1]))
        if len(ids) != F.shape[1]:
            raise ValueError("ids must match the column count")
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GallerySet(FeatureSet):
    spectrum: str = "VIS"


@dataclass(frozen=True)
class ProbeSet(FeatureSet):
    spectrum: str = "NIR"


@dataclass(frozen=True)
class MatchReport:
    cmc: np.ndarray            # cmc[r-1] = rank-r identification rate
    probe_ids: tuple
    true_labels: np.ndarray
    pred_labels: np.ndarray
    scores: np.ndarray         # similarity of the best gallery match
    hit_ranks: np.ndarray      # 1-based rank of the first correct match, 0 if absent

    @property
    def rank_accuracies(self) -> np.ndarray:
        return self.cmc

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])

    def write_rank_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "rate"])
            for r, rate in enumerate(self.cmc, start=1):
                w.writerow([r, repr(float(rate))])

    def write_decisions_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["probe_id", "true_label", "pred_label", "score"])
            for pid, t, p, s in zip(self.probe_ids, self.true_labels, self.pred_labels, self.scores):
                w.writerow([pid, t, p, repr(float(s))])


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _unit_columns(F: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(F, axis=0)
    if np.any(norms == 0):
        raise ZeroVectorError(f"{what} contains a zero feature column")
    return F / norms


def similarity_matrix(gallery: FeatureSet, probes: FeatureSet) -> np.ndarray:
    """Cosine similarities, probes x gallery.

    einsum (no BLAS) keeps a fixed summation order per pair, so duplicated
    gallery columns produce bit-identical scores and ties stay exact.
    """
    if gallery.features.shape[0] != probes.features.shape[0]:
        raise ValueError(f"feature dims differ: gallery {gallery.features.shape[0]}, "
                         f"probes {probes.features.shape[0]}")
    G = _unit_columns(gallery.features, "gallery")
    P = _unit_columns(probes.features, "probe set")
    return np.einsum("ki,kj->ij", P, G)


def identify(gallery: GallerySet, probes: ProbeSet, max_rank: int | None = None) -> MatchReport:
    """Rank every gallery image for each probe and accumulate the CMC curve.

    Gallery columns are ordered by descending similarity with ties broken by the
    lower gallery index. A probe scores a rank-r hit when any image of its
    subject is among the top r.
    """
    n_gallery = len(gallery)
    max_rank = n_gallery if max_rank is None else max_rank
    if not 1 <= max_rank <= n_gallery:
        raise ValueError(f"max_rank must lie in [1, {n_gallery}]")
    S = similarity_matrix(gallery, probes)
    order = np.argsort(-S, axis=1, kind="stable")
    ranked_labels = gallery.labels[order]
    correct = ranked_labels == probes.labels[:, None]
    has_hit = correct.any(axis=1)
    hit_ranks = np.where(has_hit, correct.argmax(axis=1) + 1, 0)
    ranks = np.arange(1, max_rank + 1)
    cmc = ((hit_ranks[:, None] >= 1) & (hit_ranks[:, None] <= ranks[None, :])).mean(axis=0)
    best = order[:, 0]
    return MatchReport(
        cmc=cmc,
        probe_ids=probes.ids,
        true_labels=probes.labels.copy(),
        pred_labels=gallery.labels[best],
        scores=S[np.arange(len(probes)), best],
        hit_ranks=hit_ranks,
    )
