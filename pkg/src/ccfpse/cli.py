"""Command-line driver: ``ccfpse <subcommand> [--config PATH] [--out DIR] [--seed N] [--set KEY=VALUE ...]``.

Exit codes: 0 success, 1 verification failure (gradcheck, metric
threshold, diverged training), 2 usage, config or input-path error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import bench, gradcheck, trainer
from .config import Config, load_config
from .data import (compute_miou, confusion_matrix, generate_dataset, image_grid, load_dataset, metrics_from_confusion,
                   read_label_pgm, read_manifest, segment_by_palette, write_dataset, write_image_ppm)
from .errors import ArgumentError, DataError, DimensionError, FormatError, TrainingDivergedError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "CCFPSE_THREADS"

log = logging.getLogger("ccfpse")


class VerificationFailure(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON config; keys mirror the config dataclasses")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, help="seed for this subcommand (overrides the config seed)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override such as train.lr_g=2e-4 (repeatable)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ccfpse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", parents=[common], help="write a synthetic PGM/PPM dataset with a manifest")
    p.add_argument("--count", type=int, help="number of samples (default: dataset.train_count)")

    p = sub.add_parser("train", parents=[common], help="run the alternating GAN training loop")
    p.add_argument("--data", metavar="MANIFEST", help="training manifest (default: synthesize from config)")
    p.add_argument("--eval-data", metavar="MANIFEST", help="held-out manifest evaluated after training")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    p.add_argument("--min-miou", type=float, help="exit 1 if held-out mIoU ends below this value")

    p = sub.add_parser("generate", parents=[common], help="synthesize images for label maps from a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("labels", nargs="+", metavar="LABELS", help="PGM label maps or a JSON manifest")

    p = sub.add_parser("eval", parents=[common], help="segment images by palette and score them against labels")
    p.add_argument("manifest", metavar="MANIFEST", help="JSON list of [label, image] pairs")
    p.add_argument("--min-miou", type=float, help="exit 1 if mIoU is below this value")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites (64-bit)")
    p.add_argument("--scope", choices=gradcheck.SCOPES + ("all",), default="all")

    p = sub.add_parser("bench", parents=[common], help="MAC/parameter accounting and wall-clock comparison")
    p.add_argument("--shape", action="append", metavar="C,D,k,H,W",
                   help="layer shape to report (repeatable; default 8,8,3,16,16 and 64,64,3,32,32)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-timing", action="store_true", help="closed-form counts only")
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None and args.command == "train":
        cfg = cfg.with_overrides([f"train.seed={args.seed}"])
    return cfg


def _out_dir(args, default: Optional[str] = None) -> Optional[Path]:
    out = args.out or default
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(text: str, out: Optional[Path], name: str) -> None:
    print(text)
    if out is not None:
        (out / name).write_text(text if text.endswith("\n") else text + "\n")


# -- subcommands --------------------------------------------------------------------------

def cmd_make_data(args) -> int:
    cfg = _config(args)
    count = cfg.dataset.train_count if args.count is None else args.count
    if count <= 0:
        raise ArgumentError(f"count must be positive, got {count}")
    seed = cfg.dataset.train_seed if args.seed is None else args.seed
    samples = generate_dataset(cfg.task, count, seed)
    manifest = write_dataset(samples, _out_dir(args, "data"))
    print(manifest)
    return EXIT_OK


def _datasets(args, cfg: Config):
    if args.data:
        train = load_dataset(args.data, cfg.task.num_labels)
    else:
        train = generate_dataset(cfg.task, cfg.dataset.train_count, cfg.dataset.train_seed)
    if args.eval_data:
        held_out = load_dataset(args.eval_data, cfg.task.num_labels)
    else:
        held_out = generate_dataset(cfg.task, cfg.dataset.eval_count, cfg.dataset.eval_seed)
    return train, held_out


def cmd_train(args) -> int:
    cfg = _config(args)
    state = None
    if args.resume:
        state = trainer.load_checkpoint(args.resume)
        cfg = state.config.with_overrides(args.overrides)
        state.config = cfg
    train, held_out = _datasets(args, cfg)
    out = _out_dir(args, "run")
    summary = trainer.run_training(cfg, train, out, eval_set=held_out, state=state)
    report = {k: v for k, v in summary.items() if k not in ("log", "state")}
    _emit(json.dumps(report, indent=2, sort_keys=True, default=float), out, "summary.json")
    if args.min_miou is not None and not report["eval"]["miou"] >= args.min_miou:
        raise VerificationFailure(f"held-out mIoU {report['eval']['miou']:.4f} < {args.min_miou}")
    return EXIT_OK


def _label_inputs(paths: Sequence[str], num_labels: int) -> List[np.ndarray]:
    if len(paths) == 1 and paths[0].endswith(".json"):
        return [read_label_pgm(a, num_labels) for a, _ in read_manifest(paths[0])]
    return [read_label_pgm(p, num_labels) for p in paths]


def cmd_generate(args) -> int:
    state = trainer.load_checkpoint(args.checkpoint)
    labels = _label_inputs(args.labels, state.config.task.num_labels)
    shapes = {lab.shape for lab in labels}
    if len(shapes) != 1:
        raise DimensionError(f"label maps must share one size, got {sorted(shapes)}")
    fakes = trainer.generate_images(state, np.stack(labels), seed=0 if args.seed is None else args.seed)
    out = _out_dir(args, "generated")
    for i, img in enumerate(fakes):
        write_image_ppm(out / f"fake_{i:05d}.ppm", img)
    write_image_ppm(out / "contact_sheet.ppm", image_grid(list(fakes), cols=min(8, len(fakes))))
    print(f"wrote {len(fakes)} images to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    pairs = load_dataset(args.manifest, cfg.task.num_labels)
    if not pairs:
        raise ArgumentError(f"{args.manifest}: manifest is empty")
    L = cfg.task.num_labels
    conf = np.zeros((L, L), dtype=np.int64)
    for s in pairs:
        conf += confusion_matrix(segment_by_palette(s.image, cfg.task), s.label, L)
    m = metrics_from_confusion(conf)
    lines = ["metric,value", f"miou,{m.miou!r}", f"accuracy,{m.accuracy!r}"]
    lines += [f"iou_{c},{v!r}" for c, v in enumerate(m.per_class_iou)]
    _emit("\n".join(lines), _out_dir(args), "metrics.csv")
    if args.min_miou is not None and not m.miou >= args.min_miou:
        raise VerificationFailure(f"mIoU {m.miou:.4f} < {args.min_miou}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = gradcheck.SCOPES if args.scope == "all" else (args.scope,)
    results = []
    for scope in scopes:
        results += gradcheck.run_suite(scope, seed=0 if args.seed is None else args.seed)
    _emit(gradcheck.format_report(results), _out_dir(args), "gradcheck.csv")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationFailure(f"gradient check failed for: {', '.join(failed)}")
    return EXIT_OK


def _parse_shape(text: str):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ArgumentError(f"bad shape {text!r}: {exc}") from exc
    if len(vals) != 5:
        raise ArgumentError(f"shape must be C,D,k,H,W, got {text!r}")
    return vals


def cmd_bench(args) -> int:
    shapes = [_parse_shape(s) for s in (args.shape or ["8,8,3,16,16", "64,64,3,32,32"])]
    reports = [bench.bench_ops(*s, repeats=args.repeats, timed=not args.no_timing,
                               seed=0 if args.seed is None else args.seed) for s in shapes]
    _emit(bench.reports_to_csv(reports), _out_dir(args), "bench.csv")
    return EXIT_OK


COMMANDS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ArgumentError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n <= 0:
        raise ArgumentError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ArgumentError, DataError, DimensionError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
