"""End-to-end experiment: mine -> train -> hallucinate -> features -> PCA -> low-rank -> match.

Every expensive stage writes its artifact under ``<out_dir>/cache`` named by a
hash of its inputs and the config keys it depends on, so ablation cells and
alpha sweeps reuse identical files instead of recomputing them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, ConfigError
from .features import (PROVIDERS, FeatureRecord, load_features, make_folds, save_features,
                       split_folds)
from .hallucination import (CHANNELS, AdamState, HallucinationNet, blend, build_net, run_net,
                            train, ycbcr_to_rgb)
from .lowrank import CcpConfig, LabeledFeatureMatrix, learn_lowrank_transform
from .manifest import read_manifest
from .matcher import GallerySet, MatchReport, ProbeSet, identify
from .mining import (MiningConfig, landmark_align, load_patches, mine_pairs, normalize_stats,
                     save_patches)
from .pca import apply_merged, fit_pca, merge_pca_lowrank, working_dim

log = logging.getLogger("nirvis")

# (name, hallucinated probes, low-rank embedding) in the order of the summary table
CELLS = (
    ("baseline", False, False),
    ("hallucination", True, False),
    ("lowrank", False, True),
    ("hallucination_lowrank", True, True),
)
CELL_TITLES = {
    "baseline": "Raw NIR probes",
    "hallucination": "Hallucination",
    "lowrank": "Low-rank",
    "hallucination_lowrank": "Hallucination + Low-rank",
}


class StageError(RuntimeError):
    """A pipeline stage failed (exit code 3); the stage name leads the message."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


@contextmanager
def stage(name: str):
    try:
        yield
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()


def _l2_columns(F: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(F, axis=0)
    return F / np.where(norms == 0, 1.0, norms)


@dataclass
class CellResult:
    name: str
    hallucination: bool
    lowrank: bool
    report: MatchReport


class Experiment:
    """One experiment directory driven by a validated ``Config``."""

    def __init__(self, config: Config):
        self.cfg = config.validate()
        self.out = Path(self.cfg["out_dir"])
        self.cache = self.out / "cache"
        self.cache.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict = {}
        self._faces = None
        self._manifest_key = None
        self._built: dict = {}   # artifact name -> path, resolved once per instance

    # -- artifact cache -------------------------------------------------

    def _record(self, name: str, path: Path) -> str:
        sha = file_digest(path)
        try:
            shown = path.relative_to(self.out).as_posix()
        except ValueError:
            shown = path.as_posix()
        self.artifacts[name] = {"path": shown, "sha256": sha}
        return sha

    def _cached(self, name: str, key: str, suffix: str, build) -> Path:
        if name in self._built:
            return self._built[name]
        path = self.cache / f"{name}-{key[:20]}{suffix}"
        if not path.exists():
            tmp = path.with_name(path.name + ".tmp")
            build(tmp)
            os.replace(tmp, path)
            log.info("built %s", path.name)
        else:
            log.info("reusing %s", path.name)
        self._record(name, path)
        self._built[name] = path
        return path

    def write_artifacts(self) -> Path:
        path = self.out / "artifacts.json"
        path.write_text(json.dumps(self.artifacts, sort_keys=True, indent=1) + "\n")
        return path

    # -- images ---------------------------------------------------------

    @property
    def image_mode(self) -> bool:
        return self.cfg["data.manifest"] is not None

    def _require_images(self, what: str):
        if not self.image_mode:
            raise ConfigError(f"{what} needs data.manifest (image mode)")

    def manifest_key(self) -> str:
        if self._manifest_key is None:
            entries = read_manifest(self.cfg["data.manifest"])
            self._manifest_key = digest(file_digest(self.cfg["data.manifest"]),
                                        [file_digest(e.path) for e in entries])
        return self._manifest_key

    def folds(self, subjects):
        return make_folds(subjects, self.cfg["protocol.folds"])

    def faces(self):
        """Aligned faces in manifest order, normalised to the reference VIS statistics."""
        if self._faces is not None:
            return self._faces
        with stage("align"):
            entries = read_manifest(self.cfg["data.manifest"])
            if not entries:
                raise ValueError("manifest is empty")
            aligned = [landmark_align(e.load_image(), e.landmarks, e.subject, e.spectrum, e.image_id)
                       for e in entries]
            assignment = self.folds([f.subject for f in aligned])
            test = self.cfg["protocol.test_fold"]
            refs = [f for f in aligned if f.spectrum == "VIS" and assignment.fold_of[f.subject] != test]
            if not refs:
                raise ValueError("no training-fold VIS image to take reference statistics from")
            ref = refs[0]
            mean, std = float(ref.image.mean()), float(ref.image.std())
            self._faces = ([normalize_stats(f, mean, std) for f in aligned], assignment)
        return self._faces

    def mining_config(self) -> MiningConfig:
        c = self.cfg
        return MiningConfig(c["mining.window"], c["mining.stride"], c["mining.crop"],
                            c["mining.sum_threshold"], c["mining.min_threshold"],
                            c["mining.target_total"])

    def patches(self) -> Path:
        self._require_images("patch mining")
        if "patches" in self._built:
            return self._built["patches"]
        key = digest(self.manifest_key(), self.cfg.subtree("mining", "protocol"))

        def build(tmp):
            faces, assignment = self.faces()
            test = self.cfg["protocol.test_fold"]
            train_faces = [f for f in faces if assignment.fold_of[f.subject] != test]
            stats = {}
            pairs = mine_pairs([f for f in train_faces if f.spectrum == "NIR"],
                               [f for f in train_faces if f.spectrum == "VIS"],
                               self.mining_config(), jobs=self.cfg["jobs"], stats=stats)
            log.info("mined %d pairs (%d of %d windows accepted)", len(pairs), stats["accepted"],
                     stats["scanned"])
            if not pairs:
                raise ValueError("no patch pairs passed the gate")
            save_patches(tmp, pairs)
            os.replace(str(tmp) + ".idx", str(tmp).replace(".tmp", "") + ".idx")

        with stage("mine-patches"):
            return self._cached("patches", key, ".bin", build)

    def net_path(self, channel: str) -> Path:
        wdir = self.cfg["halluc.weights_dir"]
        if wdir is not None:
            path = Path(wdir) / f"{channel}.npz"
            with stage("train-hallucinator"):
                if not path.exists():
                    raise FileNotFoundError(f"{path} missing from halluc.weights_dir")
            self._record(f"net_{channel}", path)
            return path
        if f"net_{channel}" in self._built:
            return self._built[f"net_{channel}"]
        patches = self.patches()
        key = digest(file_digest(patches), channel, self.cfg["seed"],
                     self.cfg.subtree("halluc.epochs", "halluc.batch", "halluc.max_iters",
                                      "halluc.lr", "halluc.shared_prelu"))

        def build(tmp):
            pairs = load_patches(patches)
            c = self.cfg
            net = build_net(channel, seed=c["seed"], shared_prelu=c["halluc.shared_prelu"])
            net, history = train(net, pairs, epochs=c["halluc.epochs"], batch_size=c["halluc.batch"],
                                 seed=c["seed"], state=AdamState(lr=c["halluc.lr"]),
                                 max_iters=c["halluc.max_iters"])
            net.save(tmp)
            history.write_csv(self.out / f"train_{channel}.csv")

        with stage("train-hallucinator"):
            return self._cached(f"net_{channel}", key, ".npz", build)

    def nets(self) -> dict:
        return {c: HallucinationNet.load(self.net_path(c)) for c in CHANNELS}

    def hallucinated_raw(self) -> Path:
        """Unblended Y, Cb, Cr network outputs for every NIR face, in manifest order."""
        self._require_images("hallucination")
        if "hallucinated" in self._built:
            return self._built["hallucinated"]
        paths = {c: self.net_path(c) for c in CHANNELS}
        key = digest(self.manifest_key(), self.cfg.subtree("protocol"),
                     {c: file_digest(p) for c, p in paths.items()})

        def build(tmp):
            faces, _ = self.faces()
            nir = np.stack([f.image for f in faces if f.spectrum == "NIR"])
            nets = {c: HallucinationNet.load(p) for c, p in paths.items()}
            out = np.stack([run_net(nets[c], nir) for c in CHANNELS], axis=1)
            with open(tmp, "wb") as fh:
                np.save(fh, out.astype(np.float32))

        with stage("hallucinate"):
            return self._cached("hallucinated", key, ".npy", build)

    def hallucinated_images(self) -> list:
        """(image id, blended YCbCr) for every NIR face."""
        raw = np.load(self.hallucinated_raw())
        faces, _ = self.faces()
        nir = [f for f in faces if f.spectrum == "NIR"]
        c = self.cfg
        out = []
        with stage("hallucinate"):
            for face, ycc in zip(nir, raw.astype(np.float64)):
                y = blend(ycc[0], face.image, c["halluc.alpha"], c["halluc.sigma"],
                          c["halluc.blend_passes"])
                out.append((face.image_id, np.stack([y, ycc[1], ycc[2]])))
        return out

    # -- features -------------------------------------------------------

    def features(self) -> Path:
        if not self.image_mode:
            path = Path(self.cfg["data.features"])
            self._record("features", path)
            return path
        if "features" in self._built:
            return self._built["features"]
        halluc = self.cfg["ablation.hallucination"]
        parts = [self.manifest_key(), self.cfg.subtree("features", "protocol")]
        if halluc:
            parts += [file_digest(self.hallucinated_raw()),
                      self.cfg.subtree("halluc.alpha", "halluc.sigma", "halluc.blend_passes")]
        key = digest(*parts)

        def build(tmp):
            provider = PROVIDERS[self.cfg["features.provider"]]()
            faces, _ = self.faces()
            records = []
            for f in faces:
                if f.spectrum == "VIS":
                    rgb = ycbcr_to_rgb(np.concatenate([f.image[None], f.chroma])) \
                        if f.chroma is not None else f.image
                    vec, rep = provider.extract(rgb)
                    records.append(FeatureRecord(f.subject, f.image_id, "VIS", "vis", vec, rep))
                else:
                    vec, rep = provider.extract(np.clip(f.image, 0.0, 1.0))
                    records.append(FeatureRecord(f.subject, f.image_id, "NIR", "raw_nir", vec, rep))
            if halluc:
                subject_of = {f.image_id: f.subject for f in faces}
                for image_id, ycc in self.hallucinated_images():
                    vec, rep = provider.extract(ycbcr_to_rgb(ycc))
                    records.append(FeatureRecord(subject_of[image_id], image_id, "NIR",
                                                 "hallucinated", vec, rep))
            save_features(tmp, records, provider.name, provider.expects_rgb)

        with stage("features"):
            return self._cached("features", key, ".bin", build)

    # -- embedding and matching ----------------------------------------

    def ccp_config(self) -> CcpConfig:
        c = self.cfg
        return CcpConfig(c["ccp.max_outer_iters"], c["ccp.outer_tolerance"],
                         c["ccp.inner_max_iters"], c["ccp.inner_step"], c["ccp.inner_tolerance"])

    def cells(self):
        h, l = self.cfg["ablation.hallucination"], self.cfg["ablation.lowrank"]
        return [cell for cell in CELLS if (not cell[1] or h) and (not cell[2] or l)]

    def _split(self):
        records = load_features(self.features()).records
        if not records:
            raise ValueError("feature file has no records")
        assignment = self.folds([r.subject for r in records])
        return split_folds(records, assignment, self.cfg["protocol.test_fold"])

    def learn_embedding(self, train_records, probe_kind: str, cell: str):
        """Affine map (matrix, mean) from raw features to the embedded space, or None.

        Features are l2-normalised, reduced by PCA and passed through the learned
        low-rank transform. With fewer than two training subjects the transform
        degenerates to the identity and None (no embedding at all) is returned.
        """
        use = [r for r in train_records if r.kind in ("vis", probe_kind)]
        labels = np.array([r.subject for r in use])
        if len(np.unique(labels)) < 2:
            log.info("%s: fewer than two training subjects, identity embedding", cell)
            return None
        X = _l2_columns(np.stack([r.vector for r in use], axis=1))
        key = digest(file_digest(self.features()), probe_kind, self.cfg.subtree("embed", "ccp", "protocol"))

        def build(tmp):
            pca = fit_pca(X, working_dim(X.shape[0], X.shape[1], self.cfg["embed.pca_dim"]))
            Y = pca.projection @ (X - pca.mean[:, None])
            T = learn_lowrank_transform(LabeledFeatureMatrix(Y, labels), self.ccp_config())
            matrix, mean = merge_pca_lowrank(pca, T)
            with open(tmp, "wb") as fh:
                np.savez(fh, matrix=matrix, mean=mean, transform=T.matrix,
                         objective=np.asarray(T.objective_trace))

        with stage("learn-embedding"):
            path = self._cached(f"embedding_{probe_kind}", key, ".npz", build)
            with np.load(path) as z:
                return z["matrix"], z["mean"]

    def _gallery_and_probes(self, test_records, probe_kind: str):
        per = self.cfg["protocol.gallery_per_subject"]
        vis = sorted((r for r in test_records if r.kind == "vis"), key=lambda r: (r.subject, r.image_id))
        gallery, seen = [], {}
        for r in vis:
            seen[r.subject] = seen.get(r.subject, 0) + 1
            if per == 0 or seen[r.subject] <= per:
                gallery.append(r)
        probes = sorted((r for r in test_records if r.kind == probe_kind),
                        key=lambda r: (r.subject, r.image_id))
        if not gallery or not probes:
            raise ValueError(f"test fold has no gallery or no {probe_kind} probes")
        return gallery, probes

    def evaluate(self, cells=None, write: bool = True) -> list[CellResult]:
        cells = self.cells() if cells is None else cells
        with stage("evaluate"):
            train_records, test_records = self._split()
        results = []
        for name, halluc, lowrank in cells:
            probe_kind = "hallucinated" if halluc else "raw_nir"
            with stage("evaluate"):
                gallery, probes = self._gallery_and_probes(test_records, probe_kind)
            G = np.stack([r.vector for r in gallery], axis=1)
            P = np.stack([r.vector for r in probes], axis=1)
            if lowrank:
                emb = self.learn_embedding(train_records, probe_kind, name)
                if emb is not None:
                    matrix, mean = emb
                    G = apply_merged(matrix, mean, _l2_columns(G))
                    P = apply_merged(matrix, mean, _l2_columns(P))
            with stage("evaluate"):
                report = identify(
                    GallerySet(G, np.array([r.subject for r in gallery]), ids=[r.image_id for r in gallery]),
                    ProbeSet(P, np.array([r.subject for r in probes]), ids=[r.image_id for r in probes]))
            results.append(CellResult(name, halluc, lowrank, report))
        if write:
            self.write_reports(results)
        return results

    def write_reports(self, results: list[CellResult]) -> None:
        reports = self.out / "reports"
        reports.mkdir(parents=True, exist_ok=True)
        for res in results:
            res.report.write_rank_csv(reports / f"{res.name}_rank.csv")
            res.report.write_decisions_csv(reports / f"{res.name}_decisions.csv")
        with open(reports / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "hallucination", "lowrank", "rank1"])
            for res in results:
                w.writerow([res.name, int(res.hallucination), int(res.lowrank), repr(res.report.rank1)])
        (reports / "summary.md").write_text(summary_table(results))
        self.write_artifacts()


def summary_table(results) -> str:
    lines = ["| Method | Rank-1 (%) |", "|---|---|"]
    for res in results:
        lines.append(f"| {CELL_TITLES[res.name]} | {100.0 * res.report.rank1:.2f} |")
    return "\n".join(lines) + "\n"


def run_experiment(config: Config) -> dict:
    """Run every enabled ablation cell; returns {cell name: MatchReport}."""
    exp = Experiment(config)
    return {res.name: res.report for res in exp.evaluate()}


def alpha_sweep(config: Config, alphas) -> list[tuple[float, float]]:
    """Rank-1 of the hallucination cell (with low-rank when enabled) for each alpha.

    Nets and raw network outputs are cached, so only blending, features and the
    embedding are redone per alpha. Writes ``alpha_sweep.csv`` in the out dir.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alpha list is empty")
    if not config["ablation.hallucination"]:
        raise ConfigError("alpha sweep needs ablation.hallucination enabled")
    if config["data.manifest"] is None:
        raise ConfigError("alpha sweep needs data.manifest (image mode)")
    lowrank = config["ablation.lowrank"]
    cell = next(c for c in CELLS if c[1] and c[2] == lowrank)
    rows = []
    for a in alphas:
        exp = Experiment(config.with_overrides(**{"halluc.alpha": a}))
        res = exp.evaluate([cell], write=False)[0]
        rows.append((a, res.report.rank1))
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "alpha_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "rank1"])
        for a, r in rows:
            w.writerow([repr(a), repr(r)])
    return rows
