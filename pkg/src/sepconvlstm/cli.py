"""Command-line entry point.

    sepconvlstm flops     --variant sep --kx 3 --ky 3 --in 128 --out 128
    sepconvlstm gradcheck --variant all --seed 0
    sepconvlstm bench     --variant all --in 64 --out 64 --dx 64 --dy 64
    sepconvlstm metrics   mfip --pred pred.segq
    sepconvlstm gen       --out data/ --sequences 8
    sepconvlstm train     --data data/ --variant sep --out model.toym
    sepconvlstm eval      --data data/ --model model.toym --dump preds/

Every command prints its resolved configuration first.  ``--format``
selects aligned text (default), CSV or JSON lines.  Exit status is 0 on
success, 1 when a requested check fails and 2 on usage or input errors.
Set ``SEPCONVLSTM_LOG_LEVEL`` (e.g. ``DEBUG``) to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, cells, dataset, flops, gradcheck, metrics, trainer
from .cells import CellConfig, CellVariant
from .errors import DimensionError, SpecError, TrainingDivergedError, UsageError

VARIANT_CHOICES = ["standard", "std", "spatial", "depthwise", "depth", "separable", "sep", "all"]


class Emitter:
    """Writes the config banner and result records in the chosen format."""

    def __init__(self, fmt: str, out=None) -> None:
        self.fmt = fmt
        self.out = out or sys.stdout
        self._csv_header: list[str] | None = None

    def config(self, cfg: dict) -> None:
        if self.fmt == "jsonl":
            self._print(json.dumps({"config": cfg}, default=str))
        else:
            self._print("# config: " + " ".join(f"{k}={v}" for k, v in cfg.items()))

    def record(self, row: dict, header: list[str] | None = None, inline: bool = False) -> None:
        if self.fmt == "jsonl":
            self._print(json.dumps(row, default=str))
        elif self.fmt == "csv":
            keys = header or list(row)
            if self._csv_header != keys:
                self._print(",".join(keys))
                self._csv_header = keys
            self._print(",".join(_fmt(row[k]) for k in keys))
        elif inline:
            self._print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
        else:
            width = max(len(k) for k in row)
            for k, v in row.items():
                self._print(f"{k:<{width}}  {_fmt(v)}")
            self._print("")

    def _print(self, text: str) -> None:
        print(text, file=self.out)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _variants(name: str) -> list[CellVariant]:
    return list(CellVariant) if name == "all" else [CellVariant.parse(name)]


def _resolved(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "format", "csv")}


# --- commands ---------------------------------------------------------------

def cmd_flops(args: argparse.Namespace, out: Emitter) -> int:
    for variant in _variants(args.variant):
        cfg = CellConfig(variant, args.in_channels, args.out_channels, args.kx, args.ky)
        report = flops.analytic_flops(cfg, args.dx, args.dy)
        if out.fmt == "csv":
            out.record(report.as_row(), flops.CSV_HEADER.split(","))
            continue
        row = dict(report.as_row(), params=cells.param_count(cfg),
                   ratio_vs_standard=round(flops.ratio_vs_standard(cfg, args.dx, args.dy), 4))
        out.record(row)
    return 0


def cmd_gradcheck(args: argparse.Namespace, out: Emitter) -> int:
    worst = None
    for variant in _variants(args.variant):
        cfg = CellConfig(variant, args.in_channels, args.out_channels, args.kx, args.ky)
        for g in gradcheck.check_cell_gradients(cfg, seed=args.seed, eps=args.eps, tol=args.tol,
                                                height=args.dx, width=args.dy):
            out.record({"variant": variant.value, "group": g.name, "rel_error": g.rel_error,
                        "status": "pass" if g.passed else "FAIL"}, inline=True)
            if not g.passed and (worst is None or g.rel_error > worst[2]):
                worst = (variant.value, g.name, g.rel_error)
    if worst is not None:
        print(f"gradcheck failed: worst offender {worst[0]}/{worst[1]} rel_error={worst[2]:.3e} "
              f"(tol {args.tol:g})", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args: argparse.Namespace, out: Emitter) -> int:
    dtype = np.float32 if args.dtype == "float32" else np.float64
    for variant in _variants(args.variant):
        cfg = CellConfig(variant, args.in_channels, args.out_channels, args.kx, args.ky)
        stats = bench.time_forward(cfg, args.dx, args.dy, repeat=args.repeat, warmup=args.warmup,
                                   seed=args.seed, dtype=dtype, threads=args.threads or None)
        out.record({"variant": variant.value, "median_ms": stats.median_ms, "p10_ms": stats.p10_ms,
                    "p90_ms": stats.p90_ms, "repeat": stats.repeat, "flops": stats.flops,
                    "gflops_per_s": stats.gflops_per_s}, inline=True)
    return 0


def cmd_metrics(args: argparse.Namespace, out: Emitter) -> int:
    pred = metrics.load_segq(args.pred)
    gt = metrics.load_segq(args.gt) if args.gt else None
    if args.sub == "mfip":
        value = metrics.mfip(pred, args.reduction)
    elif args.sub == "mfp":
        value = metrics.mfp(pred, gt, args.reduction)
    elif args.sub == "acc":
        value = float(np.mean([metrics.pixel_accuracy(p, g) for p, g in zip(pred.frames, gt.frames)]))
    else:
        value = metrics.miou(list(pred.frames), list(gt.frames), max(pred.num_classes, gt.num_classes))
    out.record({"metric": args.sub, "value": value})
    return 0


def cmd_gen(args: argparse.Namespace, out: Emitter) -> int:
    seeds = np.random.SeedSequence(args.seed).generate_state(args.sequences)
    scenes = [
        dataset.generate(dataset.random_scene_spec(
            int(s), args.height, args.width, args.frames, args.classes, args.shapes,
            args.max_speed, args.noise, args.noisy_frames))
        for s in seeds
    ]
    for path, scene in zip(dataset.save_dataset(args.out, scenes), scenes):
        out.record({"sequence": str(path), "frames": scene.spec.frames,
                    "mfip_labels": metrics.mfip(scene.labels),
                    "mfip_noisy": metrics.mfip(scene.noisy_labels)}, inline=True)
    return 0


def cmd_train(args: argparse.Namespace, out: Emitter) -> int:
    scenes = dataset.load_dataset(args.data)
    variant = None if args.variant == "none" else CellVariant.parse(args.variant)
    model = trainer.ToyModel.init(scenes[0].frames.shape[1], scenes[0].labels.num_classes,
                                  args.features, variant, seed=args.seed, kernel=args.kernel)
    config = trainer.TrainConfig(steps=args.steps, base_lr=args.lr, seed=args.seed)
    result = trainer.train(model, scenes, config)
    trainer.save_model(args.out, result.model)
    if args.curve:
        trainer.write_curve(args.curve, result.curve)
    losses = result.losses
    out.record({"model": str(args.out), "steps": args.steps,
                "first_loss": losses[0] if losses else float("nan"),
                "final_loss": float(np.mean(losses[-20:])) if losses else float("nan")})
    return 0


def cmd_eval(args: argparse.Namespace, out: Emitter) -> int:
    scenes = dataset.load_dataset(args.data)
    model = trainer.load_model(args.model)
    scores, preds = trainer.evaluate(model, scenes, window=args.window)
    if args.dump:
        dump = Path(args.dump)
        dump.mkdir(parents=True, exist_ok=True)
        for k, (pred, scene) in enumerate(zip(preds, scenes)):
            metrics.save_segq(dump / f"pred_{k:03d}.segq", pred)
            metrics.save_segq(dump / f"gt_{k:03d}.segq", scene.labels)
    out.record(dict(scores, variant="none" if model.variant is None else model.variant.value))
    return 0


# --- parser -----------------------------------------------------------------

def _add_cell_dims(p: argparse.ArgumentParser, *, channels: int, size: int, variant: str = "all") -> None:
    p.add_argument("--variant", default=variant, choices=VARIANT_CHOICES)
    p.add_argument("--kx", type=int, default=3, help="kernel height")
    p.add_argument("--ky", type=int, default=3, help="kernel width")
    p.add_argument("--in", dest="in_channels", type=int, default=channels)
    p.add_argument("--out", dest="out_channels", type=int, default=channels)
    p.add_argument("--dx", type=int, default=size, help="feature map height")
    p.add_argument("--dy", type=int, default=size, help="feature map width")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["text", "csv", "jsonl"], default="text")
    common.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="sepconvlstm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flops", parents=[common], help="analytic FLOPs, params and ratio vs standard")
    _add_cell_dims(p, channels=128, size=1)
    p.add_argument("--csv", action="store_true", help="shorthand for --format csv")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of backward")
    _add_cell_dims(p, channels=2, size=4)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="forward wall-clock statistics")
    _add_cell_dims(p, channels=64, size=64)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (0 = library default)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", parents=[common], help="flicker / accuracy metrics of SEGQ files")
    p.add_argument("sub", choices=["mfp", "mfip", "acc", "miou"])
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", type=Path)
    p.add_argument("--reduction", choices=["sum", "mean"], default="sum",
                   help="sum over frame pairs (default) or per-pair mean")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic moving-shapes sequences")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--sequences", type=int, default=8)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--shapes", type=int, default=2)
    p.add_argument("--max-speed", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--noisy-frames", action=argparse.BooleanOptionalAction, default=True,
                   help="render images from the noisy label stream")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train the toy segmentation model")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--variant", default="none", choices=["none", *VARIANT_CHOICES[:-1]])
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--curve", type=Path, help="write the loss curve as CSV step,loss,lr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained toy model")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--dump", type=Path, help="directory for pred_/gt_ SEGQ files")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("SEPCONVLSTM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "csv", False):
        args.format = "csv"
    if args.command == "metrics" and args.sub in ("mfp", "acc", "miou") and args.gt is None:
        parser.error(f"metrics {args.sub} requires --gt (only mfip is ground-truth free)")
    out = Emitter(args.format)
    out.config(_resolved(args))
    try:
        return args.func(args, out)
    except (SpecError, DimensionError, UsageError, TrainingDivergedError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
