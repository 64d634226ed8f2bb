import csv
import json
import warnings

import numpy as np
import pytest
import yaml

from nirvis.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from nirvis.config import Config, ConfigError
from nirvis.features import FeatureRecord, save_features
from nirvis.hallucination import CHANNELS, build_net
from nirvis.hallucination.network import Architecture
from nirvis.matcher import GallerySet, ProbeSet, identify
from nirvis.pipeline import CELLS, Experiment, StageError, alpha_sweep, run_experiment
from nirvis.synthetic import spectral_shift_features, synthetic_faces

TINY = Architecture(kernel=3, outer=2, inner=2, n_layers=3, skip=False)


def write_feature_fixture(path, data):
    recs = []
    for j in range(data.features.shape[1]):
        sp = data.spectrum[j]
        recs.append(FeatureRecord(int(data.labels[j]), f"{sp.lower()}{data.labels[j]:03d}_{data.sample[j]}", sp,
                                  "vis" if sp == "VIS" else "raw_nir", data.features[:, j]))
    save_features(path, recs, provider="synthetic")
    return recs


@pytest.fixture(scope="module")
def shift_features(tmp_path_factory):
    path = tmp_path_factory.mktemp("feat") / "shift.bin"
    data = spectral_shift_features(np.random.default_rng(0))
    return path, write_feature_fixture(path, data)


@pytest.fixture(scope="module")
def faces(tmp_path_factory):
    return synthetic_faces(np.random.default_rng(5), tmp_path_factory.mktemp("faces"), n_subjects=4,
                           vis_per_subject=2, nir_per_subject=1)


def zero_nets(directory, seed=None):
    """Y net with skip and all-zero weights (output = input); tiny Cb/Cr nets."""
    directory.mkdir(parents=True, exist_ok=True)
    for c in CHANNELS:
        arch = Architecture(3, 2, 2, 3, skip=(c == "Y"))
        net = build_net(c, seed=0 if seed is None else seed, arch=arch, dtype=np.float64)
        if seed is None:
            for p in net.parameters():
                p[...] = 0
        net.save(directory / f"{c}.npz")
    return directory


def feature_config(path, out, **extra):
    values = {"data.features": str(path), "out_dir": str(out), "protocol.folds": 2}
    values.update(extra)
    return Config(values)


def quiet(fn, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args, **kwargs)


# -- configuration -----------------------------------------------------------------------

def test_config_flattens_nested_yaml_and_resolves_paths(tmp_path):
    (tmp_path / "f.bin").write_bytes(b"")
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"data": {"features": "f.bin"}, "mining.stride": "24",
                                                     "out_dir": "run"}))
    cfg = Config.from_file(tmp_path / "c.yaml", {"seed": 7})
    assert cfg["mining.stride"] == 24 and cfg["seed"] == 7
    assert cfg["data.features"] == str(tmp_path / "f.bin")
    assert cfg["out_dir"] == str(tmp_path / "run")
    cfg.validate()


@pytest.mark.parametrize("values", [{"mining.strid": 3}, {"halluc.epochs": 1.5},
                                    {"ablation.lowrank": "maybe"}])
def test_config_rejects_bad_values(values):
    with pytest.raises(ConfigError):
        Config(values)


@pytest.mark.parametrize("values", [{}, {"protocol.test_fold": 9}, {"halluc.alpha": 1.5},
                                    {"data.features": "/nonexistent/f.bin"}])
def test_config_validation(tmp_path, values):
    (tmp_path / "f.bin").write_bytes(b"")
    base = {"data.features": str(tmp_path / "f.bin")} if values else {}
    base.update(values)
    with pytest.raises(ConfigError):
        Config(base).validate()


# -- cells -------------------------------------------------------------------------------

def test_switches_off_equals_direct_identify(shift_features, tmp_path):
    path, recs = shift_features
    cfg = feature_config(path, tmp_path, **{"ablation.hallucination": False, "ablation.lowrank": False})
    reports = run_experiment(cfg)
    assert list(reports) == ["baseline"]
    test = [r for r in recs if r.subject < 20]     # fold 1 = first half in numeric order
    gallery = sorted([r for r in test if r.kind == "vis" and r.image_id.endswith("_0")],
                     key=lambda r: (r.subject, r.image_id))
    probes = sorted([r for r in test if r.kind == "raw_nir"], key=lambda r: (r.subject, r.image_id))
    direct = identify(GallerySet(np.stack([r.vector for r in gallery], 1), np.array([r.subject for r in gallery])),
                      ProbeSet(np.stack([r.vector for r in probes], 1), np.array([r.subject for r in probes])))
    np.testing.assert_array_equal(reports["baseline"].cmc, direct.cmc)
    np.testing.assert_array_equal(reports["baseline"].pred_labels, direct.pred_labels)


def test_single_training_subject_gives_baseline(tmp_path, rng):
    data = spectral_shift_features(rng, n_subjects=2, per_spectrum=3)
    write_feature_fixture(tmp_path / "f.bin", data)
    cfg = feature_config(tmp_path / "f.bin", tmp_path / "out", **{"ablation.hallucination": False})
    reports = run_experiment(cfg)
    np.testing.assert_array_equal(reports["lowrank"].cmc, reports["baseline"].cmc)
    np.testing.assert_array_equal(reports["lowrank"].scores, reports["baseline"].scores)


def test_lowrank_beats_baseline_on_synthetic_fixture(shift_features, tmp_path):
    path, _ = shift_features
    cfg = feature_config(path, tmp_path, **{"ablation.hallucination": False})
    reports = quiet(run_experiment, cfg)
    assert reports["lowrank"].rank1 - reports["baseline"].rank1 >= 0.20


def test_reports_and_artifacts_written(shift_features, tmp_path):
    path, _ = shift_features
    cfg = feature_config(path, tmp_path, **{"ablation.hallucination": False})
    quiet(run_experiment, cfg)
    rows = list(csv.DictReader(open(tmp_path / "reports" / "summary.csv")))
    assert [r["cell"] for r in rows] == ["baseline", "lowrank"]
    art = json.loads((tmp_path / "artifacts.json").read_text())
    assert set(art) == {"features", "embedding_raw_nir"}
    assert "| Low-rank |" in (tmp_path / "reports" / "summary.md").read_text()


def test_hallucination_cells_need_hallucinated_records(shift_features, tmp_path):
    path, _ = shift_features
    with pytest.raises(StageError, match="evaluate"):
        run_experiment(feature_config(path, tmp_path, **{"ablation.lowrank": False}))


# -- image mode, alpha sweep -------------------------------------------------------------

def image_config(manifest, out, weights, **extra):
    values = {"data.manifest": str(manifest), "out_dir": str(out), "protocol.folds": 2,
              "halluc.weights_dir": str(weights), "ablation.lowrank": False}
    values.update(extra)
    return Config(values)


def test_alpha_sweep_noop_when_prediction_equals_input(faces, tmp_path):
    cfg = image_config(faces, tmp_path / "out", zero_nets(tmp_path / "zero"))
    rows = alpha_sweep(cfg, [0.0, 0.5, 1.0])
    assert [a for a, _ in rows] == [0.0, 0.5, 1.0]
    assert len({r for _, r in rows}) == 1
    lines = (tmp_path / "out" / "alpha_sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,rank1" and len(lines) == 4


def test_alpha_sweep_grid_and_shared_artifacts(faces, tmp_path):
    weights = zero_nets(tmp_path / "rand", seed=3)
    cfg = image_config(faces, tmp_path / "out", weights)
    assert len(alpha_sweep(cfg, [0.6])) == 1
    rows = alpha_sweep(cfg, np.linspace(0, 1, 11))
    assert len(rows) == 11 and all(0 <= r <= 1 for _, r in rows)
    cached = sorted(p.name for p in (tmp_path / "out" / "cache").glob("hallucinated-*"))
    assert len(cached) == 1          # the networks ran once for the whole sweep
    a = Experiment(cfg.with_overrides(**{"halluc.alpha": 0.2}))
    b = Experiment(cfg.with_overrides(**{"halluc.alpha": 0.8}))
    a.evaluate(write=False)
    b.evaluate(write=False)
    assert a.artifacts["hallucinated"] == b.artifacts["hallucinated"]
    assert a.artifacts["net_Y"] == b.artifacts["net_Y"]
    assert a.artifacts["features"] != b.artifacts["features"]


def test_cells_share_feature_artifact(faces, tmp_path):
    weights = zero_nets(tmp_path / "rand", seed=3)
    exp = Experiment(image_config(faces, tmp_path / "out", weights))
    results = exp.evaluate()
    assert [r.name for r in results] == ["baseline", "hallucination"]
    first = dict(exp.artifacts)
    exp2 = Experiment(image_config(faces, tmp_path / "out", weights, **{"ablation.hallucination": True}))
    exp2.evaluate(cells=[CELLS[1]])
    assert exp2.artifacts["features"] == first["features"]


def test_alpha_sweep_errors(faces, shift_features, tmp_path):
    cfg = image_config(faces, tmp_path / "out", zero_nets(tmp_path / "zero"))
    with pytest.raises(ValueError):
        alpha_sweep(cfg, [])
    with pytest.raises(ConfigError):
        alpha_sweep(cfg.with_overrides(**{"ablation.hallucination": False}), [0.5])
    with pytest.raises(ConfigError):
        alpha_sweep(feature_config(shift_features[0], tmp_path / "f"), [0.5])


# -- command line ------------------------------------------------------------------------

def test_cli_feature_mode(shift_features, tmp_path, capsys):
    path, _ = shift_features
    args = ["--features", str(path), "--folds", "2", "--no-hallucination", "--out-dir", str(tmp_path)]
    assert main(["report"] + args) == EXIT_STAGE
    assert quiet(main, ["evaluate"] + args) == EXIT_OK
    out = capsys.readouterr().out
    assert "| Raw NIR probes |" in out
    assert main(["report"] + args) == EXIT_OK
    assert capsys.readouterr().out == out
    assert quiet(main, ["learn-embedding"] + args) == EXIT_OK
    assert "lowrank: " in capsys.readouterr().out


def test_cli_config_file_and_exit_codes(shift_features, tmp_path, capsys):
    path, _ = shift_features
    (tmp_path / "c.yaml").write_text(f"data.features: {path}\nprotocol.folds: 2\nablation.lowrank: false\n"
                                     "ablation.hallucination: false\n")
    assert main(["evaluate", "--config", str(tmp_path / "c.yaml"), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    (tmp_path / "bad.yaml").write_text("mining.nonsense: 1\n")
    assert main(["evaluate", "--config", str(tmp_path / "bad.yaml")]) == EXIT_CONFIG
    assert main(["evaluate", "--features", str(tmp_path / "missing.bin")]) == EXIT_CONFIG
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["evaluate", "--features", str(tmp_path / "junk.bin"), "--out-dir", str(tmp_path / "j")]) == EXIT_STAGE
    assert "stage 'evaluate'" in capsys.readouterr().err
    assert main(["alpha-sweep", "--features", str(path), "--alphas", "", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_cli_hallucinate_writes_pngs(faces, tmp_path):
    weights = zero_nets(tmp_path / "zero")
    assert main(["hallucinate", "--manifest", str(faces), "--folds", "2", "--weights-dir", str(weights),
                 "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert len(list((tmp_path / "o" / "hallucinated").glob("*.png"))) == 4
