"""Command-line interface.

Subcommands: ``train``, ``eval``, ``infer``, ``bench``, ``plot`` and
``make-toy``. Every run-level default lives in the key = value config files;
flags here only locate inputs and outputs or toggle evaluation protocols.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np


def _parse_res(value: str) -> tuple[int, int]:
    h, w = value.lower().split("x")
    return int(h), int(w)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tribranch",
        description="joint semantic, instance and depth estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, type=Path)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--split", required=True)
    p.add_argument("--dataset", type=Path,
                   help="dataset config; defaults to the one recorded in the checkpoint")
    p.add_argument("--out", type=Path, help="report directory (default: next to ckpt)")
    p.add_argument("--bandwidth", type=float, default=None,
                   help="clustering bandwidth override (default: delta_v)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--gt-mask-depth", action="store_true", default=None,
                       help="pool per-car depth over ground-truth masks (default)")
    group.add_argument("--pred-mask-depth", action="store_true",
                       help="pool per-car depth over matched predicted masks")

    p = sub.add_parser("infer", help="run one image and write prediction files")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dataset", type=Path,
                   help="dataset config supplying class palette and thing ids")
    p.add_argument("--resize", action="store_true",
                   help="snap images to a multiple-of-8 size")

    p = sub.add_parser("bench", help="compare joint vs single-task forward speed")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--single-ckpts", default=None,
                   help="comma-separated checkpoints for the three single-task models")
    p.add_argument("--res", type=_parse_res, default=(256, 512), metavar="HxW")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)

    p = sub.add_parser("plot", help="scatter ground-truth vs predicted car depth")
    p.add_argument("--csv", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("make-toy", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-n", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--depth-range", type=str, default="2,10", metavar="MIN,MAX")
    return parser


def _cmd_train(args) -> int:
    from .harness import train
    from .harness.runconfig import RunConfig
    result = train(RunConfig.from_file(args.config))
    print(f"final checkpoint: {result.final_checkpoint}")
    if result.best_checkpoint:
        print(f"best checkpoint:  {result.best_checkpoint}")
    print(f"loss log:         {result.log_path}")
    print(f"last step losses: {result.last_breakdown}")
    return 0


def _dataset_for_checkpoint(ckpt: Path, dataset_arg: Path | None):
    from .data import DatasetConfig
    if dataset_arg is not None:
        return DatasetConfig.from_file(dataset_arg)
    import torch
    payload = torch.load(ckpt, map_location="cpu", weights_only=False)
    recorded = payload.get("dataset")
    if recorded and Path(recorded).is_file():
        return DatasetConfig.from_file(recorded)
    raise SystemExit("no --dataset given and the checkpoint records none")


def _cmd_eval(args) -> int:
    from .harness import evaluate, format_report, write_report
    from .postprocess import ClusteringParams
    ds = _dataset_for_checkpoint(args.ckpt, args.dataset)
    clustering = None
    if args.bandwidth is not None:
        clustering = ClusteringParams(bandwidth=args.bandwidth)
    report = evaluate(args.ckpt, ds, args.split, clustering=clustering,
                      pred_mask_depth=bool(args.pred_mask_depth))
    out_dir = args.out or args.ckpt.parent / f"eval_{args.split}"
    paths = write_report(report, out_dir)
    print(format_report(report))
    print("report files:")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return 0


def _cmd_infer(args) -> int:
    from .harness import infer
    things = palette = None
    if args.dataset is not None:
        from .data import DatasetConfig
        mapping = DatasetConfig.from_file(args.dataset).mapping
        things = mapping.thing_ids
        palette = np.array(mapping.palette, dtype=np.uint8)
    paths = infer(args.ckpt, args.image, args.out, resize=args.resize,
                  thing_class_ids=things, palette=palette)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _cmd_bench(args) -> int:
    from .harness import benchmark_speed
    from .network import load_checkpoint
    joint, _ = load_checkpoint(args.ckpt)
    singles = None
    if args.single_ckpts:
        singles = {}
        for item in args.single_ckpts.split(","):
            model, _ = load_checkpoint(item.strip())
            singles[getattr(model, "task", f"model{len(singles)}")] = model
    report = benchmark_speed(joint, singles, args.res, args.iters, args.warmup)
    print(report.summary())
    return 0


def _cmd_plot(args) -> int:
    from .harness import emit_scatter
    out = emit_scatter(args.csv, args.out)
    print(f"wrote {out}")
    return 0


def _cmd_make_toy(args) -> int:
    from .data import SyntheticSceneConfig, export_synthetic_dataset
    lo, hi = (float(v) for v in args.depth_range.split(","))
    config = SyntheticSceneConfig(size=args.size, num_objects=args.objects,
                                  num_classes=args.classes,
                                  depth_range=(lo, hi), rng_seed=args.seed)
    cfg_path = export_synthetic_dataset(args.out, args.n, args.seed, config)
    if args.val_n:
        export_synthetic_dataset(args.out, args.val_n, args.seed + args.n,
                                 config, split="val")
    print(f"dataset config: {cfg_path}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "bench": _cmd_bench,
    "plot": _cmd_plot,
    "make-toy": _cmd_make_toy,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
