"""Command-line entry point: ``nirvis <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

# CLI flag destination -> config key
FLAG_KEYS = {
    "seed": "seed", "out_dir": "out_dir", "jobs": "jobs",
    "manifest": "data.manifest", "features": "data.features",
    "folds": "protocol.folds", "test_fold": "protocol.test_fold",
    "window": "mining.window", "stride": "mining.stride", "crop": "mining.crop",
    "sum_threshold": "mining.sum_threshold", "min_threshold": "mining.min_threshold",
    "target_total": "mining.target_total",
    "epochs": "halluc.epochs", "batch": "halluc.batch", "max_iters": "halluc.max_iters",
    "weights_dir": "halluc.weights_dir", "alpha": "halluc.alpha", "sigma": "halluc.sigma",
    "blend_passes": "halluc.blend_passes",
}


def _options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("global")
    g.add_argument("--config", default=S, help="YAML file of dotted config keys")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--out-dir", dest="out_dir", default=S)
    g.add_argument("--jobs", type=int, default=S)
    d = p.add_argument_group("data")
    d.add_argument("--manifest", default=S, help="image manifest CSV")
    d.add_argument("--features", default=S, help="precomputed feature file")
    d.add_argument("--folds", type=int, default=S)
    d.add_argument("--test-fold", dest="test_fold", type=int, default=S)
    m = p.add_argument_group("mining")
    m.add_argument("--window", type=int, default=S)
    m.add_argument("--stride", type=int, default=S)
    m.add_argument("--crop", type=int, default=S)
    m.add_argument("--sum-threshold", dest="sum_threshold", type=float, default=S)
    m.add_argument("--min-threshold", dest="min_threshold", type=float, default=S)
    m.add_argument("--target-total", dest="target_total", type=int, default=S)
    h = p.add_argument_group("hallucinator")
    h.add_argument("--epochs", type=int, default=S)
    h.add_argument("--batch", type=int, default=S)
    h.add_argument("--max-iters", dest="max_iters", type=int, default=S)
    h.add_argument("--weights-dir", dest="weights_dir", default=S)
    h.add_argument("--alpha", type=float, default=S)
    h.add_argument("--sigma", type=float, default=S)
    h.add_argument("--blend-passes", dest="blend_passes", type=int, choices=(1, 2), default=S)
    a = p.add_argument_group("ablation")
    a.add_argument("--no-hallucination", dest="no_hallucination", action="store_true", default=S)
    a.add_argument("--no-lowrank", dest="no_lowrank", action="store_true", default=S)
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _options()
    parser = argparse.ArgumentParser(prog="nirvis", parents=[common],
                                     description="NIR-VIS face matching experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mine-patches", parents=[common], help="mine gated NIR/VIS patch pairs")
    t = sub.add_parser("train-hallucinator", parents=[common], help="train the channel networks")
    t.add_argument("--channel", choices=("Y", "Cb", "Cr"), help="train only this channel")
    sub.add_parser("hallucinate", parents=[common], help="write hallucinated VIS faces as PNG")
    sub.add_parser("learn-embedding", parents=[common], help="fit PCA + low-rank transforms")
    sub.add_parser("evaluate", parents=[common], help="run the ablation and write reports")
    s = sub.add_parser("alpha-sweep", parents=[common], help="rank-1 versus blending alpha")
    s.add_argument("--alphas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
                   help="comma-separated alpha values")
    sub.add_parser("report", parents=[common], help="print the summary table of a finished run")
    return parser


def load_config(args):
    from .config import Config
    overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if hasattr(args, dest)}
    if getattr(args, "no_hallucination", False):
        overrides["ablation.hallucination"] = False
    if getattr(args, "no_lowrank", False):
        overrides["ablation.lowrank"] = False
    if hasattr(args, "config"):
        return Config.from_file(args.config, overrides)
    # relative paths given on the command line resolve against the working directory
    return Config(overrides, base_dir=Path.cwd())


def _run(args) -> None:
    from PIL import Image

    from .hallucination import CHANNELS, ycbcr_to_rgb
    from .pipeline import Experiment, StageError, alpha_sweep, stage, summary_table

    cfg = load_config(args)
    if args.command == "alpha-sweep":
        from .config import ConfigError
        try:
            alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
        except ValueError as exc:
            raise ConfigError(f"--alphas: {exc}") from exc
        if not alphas:
            raise ConfigError("--alphas: empty list")
        for a, r in alpha_sweep(cfg, alphas):
            print(f"alpha={a:g}\trank1={r:.4f}")
        return
    exp = Experiment(cfg)
    if args.command == "mine-patches":
        print(exp.patches())
    elif args.command == "train-hallucinator":
        nets_dir = exp.out / "nets"
        nets_dir.mkdir(parents=True, exist_ok=True)
        for channel in ([args.channel] if args.channel else CHANNELS):
            path = exp.net_path(channel)
            shutil.copyfile(path, nets_dir / f"{channel}.npz")
            print(nets_dir / f"{channel}.npz")
    elif args.command == "hallucinate":
        target = exp.out / "hallucinated"
        target.mkdir(parents=True, exist_ok=True)
        for image_id, ycc in exp.hallucinated_images():
            rgb = np.round(ycbcr_to_rgb(ycc) * 255).astype(np.uint8)
            Image.fromarray(rgb, "RGB").save(target / f"{image_id}.png")
        print(target)
    elif args.command == "learn-embedding":
        with stage("learn-embedding"):
            train_records, _ = exp._split()
        for name, halluc, lowrank in exp.cells():
            if lowrank:
                kind = "hallucinated" if halluc else "raw_nir"
                emb = exp.learn_embedding(train_records, kind, name)
                shape = "identity" if emb is None else f"{emb[0].shape[0]}x{emb[0].shape[1]}"
                print(f"{name}: {shape}")
        exp.write_artifacts()
    elif args.command == "evaluate":
        print(summary_table(exp.evaluate()), end="")
    elif args.command == "report":
        path = exp.out / "reports" / "summary.md"
        if not path.exists():
            raise StageError("report", FileNotFoundError(f"{path} (run 'evaluate' first)"))
        print(path.read_text(), end="")


def main(argv=None) -> int:
    from .config import ConfigError
    from .pipeline import StageError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
