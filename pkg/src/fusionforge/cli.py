"""Command-line entry points: train, grid, fuse, eval, synth.

Exit codes: 0 on success, 1 on input/configuration/dataset errors,
2 on numeric failure (non-finite loss abort).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .data import (
    DatasetError,
    ImagePair,
    build_manifest,
    load_grayscale,
    save_grayscale,
    synthesize_dataset,
)
from .tensor import ConfigError, ShapeError
from .training import (
    GridSpec,
    NumericsError,
    TrainConfig,
    evaluate_report,
    fuse_pair,
    grid_search,
    load_generator,
    train,
)

__all__ = ["main"]


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    return TrainConfig.from_text(Path(path).read_text(encoding="utf-8"))


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    manifest = build_manifest(args.data)
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    result = train(config, manifest, args.out)
    last = result.reports[-1]
    print(f"trained {config.steps} steps; final generator loss "
          f"{last.generator_total:.6f} (content {last.content:.6f})")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.log_path}")
    return 0


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _cmd_grid(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    manifest = build_manifest(args.data)
    grid = GridSpec(alphas=_parse_floats(args.alphas), betas=_parse_floats(args.betas))
    best, cells = grid_search(grid, config, manifest, args.out)
    for cell in cells:
        print(f"alpha={cell.alpha:g} beta={cell.beta:g} "
              f"holdout_content={cell.holdout_content:.6f}")
    print(f"best: alpha={best.alpha:g} beta={best.beta:g}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    generator, _ = load_generator(args.checkpoint)
    pair = ImagePair(
        visible=load_grayscale(args.vis),
        infrared=load_grayscale(args.ir),
        id=Path(args.out).stem,
    )
    fused = fuse_pair(generator, pair)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_grayscale(args.out, fused)
    print(f"fused image written to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    manifest = build_manifest(args.data)
    rows, missing = evaluate_report(args.fused, manifest, args.report)
    for row in rows:
        print(f"{row.image_id}: VIF={row.vif:.4f} Q^AB/F={row.qabf:.4f} "
              f"SSIM={row.ssim:.4f} MI={row.mi:.4f} EN={row.en:.4f}")
    print(f"report written to {args.report}.csv / .md")
    if missing:
        print(f"missing fused images for: {', '.join(missing)}", file=sys.stderr)
        return 1
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    manifest = synthesize_dataset(args.out, count=args.count, size=args.size,
                                  seed=args.seed)
    print(f"wrote {len(manifest)} synthetic pairs under {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionforge",
        description="Visible/infrared image fusion: train, search, fuse, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the adversarial training loop")
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument("--data", required=True, help="dataset root directory")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=_cmd_train)

    p_grid = sub.add_parser("grid", help="grid-search the loss weights")
    p_grid.add_argument("--config", help="key = value config file")
    p_grid.add_argument("--data", required=True)
    p_grid.add_argument("--out", required=True)
    p_grid.add_argument("--alphas", default="0.1,1,10", help="comma-separated")
    p_grid.add_argument("--betas", default="0.3,0.5,0.7", help="comma-separated")
    p_grid.set_defaults(func=_cmd_grid)

    p_fuse = sub.add_parser("fuse", help="fuse one registered pair")
    p_fuse.add_argument("--checkpoint", required=True)
    p_fuse.add_argument("--vis", required=True)
    p_fuse.add_argument("--ir", required=True)
    p_fuse.add_argument("--out", required=True, help="output image path")
    p_fuse.set_defaults(func=_cmd_fuse)

    p_eval = sub.add_parser("eval", help="score fused images against a dataset")
    p_eval.add_argument("--fused", required=True, help="directory of <id>.png images")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--report", required=True, help="report path prefix")
    p_eval.set_defaults(func=_cmd_eval)

    p_synth = sub.add_parser("synth", help="write synthetic fixture pairs")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--size", type=int, default=64)
    p_synth.add_argument("--count", type=int, default=8)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ShapeError, DatasetError, CheckpointError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
