"""Command-line entry point: ``socialvae <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, parse_pairs

log = logging.getLogger("socialvae")


def _common(p: argparse.ArgumentParser, checkpoint: bool = False):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", default="out", help="output directory")
    if checkpoint:
        p.add_argument("--checkpoint", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="socialvae", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p = sub.add_parser("eval", help="best-of-K ADE/FDE with and without FPC, plus KDE NLL")
    _common(p, checkpoint=True)
    p = sub.add_parser("predict", help="export samples, heatmaps and attention weights")
    _common(p, checkpoint=True)
    p.add_argument("--input", help="trajectory file (default: test_files)")
    p = sub.add_parser("fpc-sweep", help="ADE/FDE against the FPC sampling rate")
    _common(p, checkpoint=True)
    p = sub.add_parser("latent-dump", help="prior samples of the first latent for synthetic walks")
    _common(p, checkpoint=True)
    p = sub.add_parser("baseline", help="constant-velocity baseline metrics")
    _common(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = cfg.update(parse_pairs(args.set))
    if args.seed is not None:
        cfg = cfg.update({"seed": args.seed})
    if args.threads is not None:
        cfg = cfg.update({"threads": args.threads})
    return cfg


def _test_windows(cfg: RunConfig) -> dict:
    scenes = pipeline.load_scene_windows(cfg, "test_files")
    if not any(scenes.values()):
        raise ConfigError("no test windows: set test_files")
    return scenes


def run(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command

    if cmd == "train":
        scenes = pipeline.load_scene_windows(cfg, "train_files")
        windows = [w for _, ws in sorted(scenes.items()) for w in ws]
        if not windows:
            raise ConfigError("training set is empty: set train_files")
        (out / "config.txt").write_text(cfg.to_text())
        res = pipeline.train(cfg, windows, out, resume=args.resume)
        if res.history:
            log.info("step %d loss %.5f", *res.history[-1][:2])
        return 0

    if cmd == "baseline":
        report = pipeline.baseline(cfg, _test_windows(cfg))
        pipeline.write_report(report, out, "baseline")
        print(report.to_json())
        return 0

    ck = load_checkpoint(args.checkpoint, cfg)
    model = ck.model

    if cmd == "eval":
        reports = pipeline.evaluate(cfg, model, _test_windows(cfg))
        for name, rep in reports.items():
            pipeline.write_report(rep, out, f"metrics_{name}")
            print(rep.to_json())
    elif cmd == "predict":
        if args.input:
            cfg = cfg.update({"test_files": args.input})
        windows = [w for _, ws in sorted(_test_windows(cfg).items()) for w in ws]
        pipeline.export_predictions(cfg, model, windows, out)
    elif cmd == "fpc-sweep":
        windows = [w for _, ws in sorted(_test_windows(cfg).items()) for w in ws]
        rows = pipeline.fpc_sweep(cfg, model, windows)
        with open(out / "fpc_sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["rate", "ade", "fde", "ade_norm", "fde_norm"])
            w.writeheader()
            w.writerows(rows)
    elif cmd == "latent-dump":
        n = pipeline.latent_dump(cfg, model, out / "latents.csv")
        log.info("wrote %d latent samples", n)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads
        with threadpool_limits(limits=threads if threads else None):
            return run(args)
    except (ConfigError, CheckpointError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
