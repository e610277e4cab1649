"""Print parameter and MAC accounting for the default models and a few layer shapes."""

import argparse

from ccfpse import bench
from ccfpse.config import Config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--timing", action="store_true", help="also time factorized vs naive layers")
    args = ap.parse_args()
    cfg = Config()
    L = cfg.task.num_labels
    print("model,params,macs_per_sample")
    for kind in ("cc", "spade"):
        print(f"generator[{kind}],{bench.generator_param_count(cfg.generator, kind)},"
              f"{bench.generator_macs(cfg.generator, kind)}")
    for pred in ("fp", "local"):
        n = bench.weightnet_param_count(cfg.generator, L, cfg.weightnet, pred)
        print(f"weightnet[{pred}],{n},")
    print()
    shapes = [(16, 16, 3, 32, 32), (64, 64, 3, 16, 16), (64, 64, 3, 32, 32)]
    reports = [bench.bench_ops(*s, timed=args.timing) for s in shapes]
    print(bench.reports_to_csv(reports), end="")


if __name__ == "__main__":
    main()
