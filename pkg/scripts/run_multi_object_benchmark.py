#!/usr/bin/env python3
"""Multi-object localization: the detector against the single-box regression
baseline on clean 2-3-object scenes. The baseline can match at most one
object per image by construction; the detector is not so limited."""

import argparse
from pathlib import Path

from weakloc.config import RunConfig, apply_override
from weakloc.harness import cmd_gen_data, cmd_train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/multi_object")
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--train-images", type=int, default=800)
    parser.add_argument("--test-images", type=int, default=500)
    parser.add_argument("--epochs", type=int, default=10)
    args = parser.parse_args()

    out = Path(args.out)
    gaps = []
    for seed in [int(s) for s in args.seeds.split(",")]:
        cfg = RunConfig()
        cfg.seed = seed
        cfg.data.dir = str(out / f"data_seed{seed}")
        cfg.data.count_train = args.train_images
        cfg.data.count_test = args.test_images
        apply_override(cfg, "data.min_objects", "2")
        apply_override(cfg, "data.max_objects", "3")
        apply_override(cfg, "optim.epochs", str(args.epochs))
        cmd_gen_data(cfg, cfg.data.dir)
        bcd = cmd_train(cfg, "bcd", out / f"bcd_seed{seed}")
        scr = cmd_train(cfg, "scr", out / f"scr_seed{seed}")
        gap = bcd.final_report.gtknown_multi - scr.final_report.gtknown_single
        gaps.append(gap)
        print(f"seed {seed}: detector multi-box {bcd.final_report.gtknown_multi:.2f}  "
              f"regression {scr.final_report.gtknown_single:.2f}  gap {gap:+.2f}")
    print(f"mean gap over {len(gaps)} seeds: {sum(gaps) / len(gaps):+.2f}")


if __name__ == "__main__":
    main()
