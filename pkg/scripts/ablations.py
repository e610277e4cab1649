"""Run the generator / predictor / discriminator ablation arms and tabulate mIoU.

Every arm is reached through config overrides only.  Arms share data,
seed and step budget, so rows differ in exactly the listed switches.

    python scripts/ablations.py --steps 3000 --out runs/ablations
"""

import argparse
import csv
import logging
import time
from pathlib import Path

from ccfpse import trainer
from ccfpse.config import Config
from ccfpse.data import generate_dataset

ARMS = {
    "cc+fp+se": [],
    "cc, local predictor": ["train.predictor=local"],
    "cc+fp, no embeddings": ["train.embeddings=off"],
    "cc+fp, ms-patch D": ["train.discriminator=ms-patch"],
    "spade-style G": ["train.generator=spade"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--arm", action="append", choices=sorted(ARMS), help="subset of arms (repeatable)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = Config()
    train = generate_dataset(base.task, base.dataset.train_count, base.dataset.train_seed)
    held_out = generate_dataset(base.task, base.dataset.eval_count, base.dataset.eval_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.arm or ARMS:
        cfg = base.with_overrides(ARMS[name] + [f"train.steps={args.steps}"])
        t0 = time.perf_counter()
        s = trainer.run_training(cfg, train, out / name.replace(" ", "_").replace(",", ""), eval_set=held_out)
        rows.append({"arm": name, "steps": s["steps"], "miou": s["eval"]["miou"],
                     "accuracy": s["eval"]["accuracy"], "minutes": (time.perf_counter() - t0) / 60})
        print(rows[-1], flush=True)
    with open(out / "ablations.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


if __name__ == "__main__":
    main()
