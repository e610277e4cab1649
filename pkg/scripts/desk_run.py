"""Train the default configuration and report held-out segmentation scores.

    python scripts/desk_run.py --out runs/desk [--steps 3000] [--set train.seed=1]
"""

import argparse
import json
import logging
import time
from pathlib import Path

from ccfpse import trainer
from ccfpse.config import load_config
from ccfpse.data import generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--steps", type=int)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = args.overrides + ([f"train.steps={args.steps}"] if args.steps is not None else [])
    cfg = load_config(args.config, overrides)
    train = generate_dataset(cfg.task, cfg.dataset.train_count, cfg.dataset.train_seed)
    held_out = generate_dataset(cfg.task, cfg.dataset.eval_count, cfg.dataset.eval_seed)
    t0 = time.perf_counter()
    summary = trainer.run_training(cfg, train, args.out, eval_set=held_out)
    report = {"steps": summary["steps"], "minutes": (time.perf_counter() - t0) / 60, **summary["eval"]}
    Path(args.out, "desk_report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
