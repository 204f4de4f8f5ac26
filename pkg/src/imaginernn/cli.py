"""Command-line entry point: ``imaginernn <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import gradcheck
from .config import parse_floats
from .errors import ConfigError, ImagineError
from .harness import Checkpoint, ablate, evaluate_checkpoints, read_run_config, train
from .world import gen_dataset, load_dataset, world_config_from_text


def _cmd_gen_data(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    cfg = world_config_from_text(text, args.config or "<defaults>", seed=args.seed)
    manifest = gen_dataset(cfg, args.out)
    print(f"wrote {len(manifest.videos())} videos, {len(manifest.segments)} segments to {args.out}")
    return 0


def log_path_for(ckpt: str | Path) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.stem + ".log.csv")


def _cmd_train(args) -> int:
    cfg = read_run_config(args.config, data=args.data, modality=args.modality)
    ckpt = train(cfg, log_path=log_path_for(args.out))
    ckpt.save(args.out)
    print(f"best epoch {ckpt.epoch}: val top-5 action @ {cfg.selection_time:g}s = {ckpt.val_top5:.4f}")
    return 0


def _cmd_eval(args) -> int:
    checkpoints = [Checkpoint.load(p) for p in args.ckpt.split(",") if p]
    weights = parse_floats(args.fuse_weights) if args.fuse_weights else None
    if weights is not None and len(weights) != len(checkpoints):
        raise ConfigError(f"{len(checkpoints)} checkpoint(s) but {len(weights)} fusion weight(s)")
    dataset = load_dataset(args.data, window=checkpoints[0].config.window)
    report = evaluate_checkpoints(checkpoints, dataset, args.split, weights)
    report.write_csv(args.out)
    t = checkpoints[0].config.selection_time
    row = report.get(t, "action")
    print(f"{args.split}: action top-1 {row.top1:.4f}, top-5 {row.top5:.4f} at T={t:g}s")
    return 0


def _cmd_ablate(args) -> int:
    cfg = read_run_config(args.config, data=args.data)
    lines = ablate(cfg, args.out, jobs=args.jobs)
    print("\n".join(lines))
    return 0 if all(line.endswith(",ok") for line in lines[1:]) else 1


def _cmd_gradcheck(args) -> int:
    return gradcheck.main()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imaginernn",
                                     description="Action anticipation by imagining future features.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--config", help="world config file (key = value)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one modality and write the best checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--modality")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate (and late-fuse) checkpoints on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="comma-separated checkpoint files")
    p.add_argument("--fuse-weights", help="comma-separated weights, one per checkpoint")
    p.add_argument("--split", choices=("val", "test"), default="val")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train every variant of the ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="variants trained in parallel processes")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ImagineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
