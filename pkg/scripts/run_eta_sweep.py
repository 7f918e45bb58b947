#!/usr/bin/env python3
"""Sweep the supervised/unsupervised balance eta over its ablation grid and
aggregate final metrics per value."""

import argparse
from pathlib import Path

from weakloc.config import RunConfig, apply_override
from weakloc.harness import cmd_gen_data, cmd_sweep

ETA_GRID = "4,2,1,0.5,0.25,0.125,0.0625"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/eta_sweep")
    parser.add_argument("--values", default=ETA_GRID)
    parser.add_argument("--seeds", default="0")
    parser.add_argument("--train-images", type=int, default=300)
    parser.add_argument("--test-images", type=int, default=150)
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()

    out = Path(args.out)
    cfg = RunConfig()
    cfg.data.dir = str(out / "data")
    cfg.data.count_train = args.train_images
    cfg.data.count_test = args.test_images
    apply_override(cfg, "optim.epochs", str(args.epochs))
    cmd_gen_data(cfg, cfg.data.dir)
    csv = cmd_sweep(cfg, "eta", args.values.split(","),
                    [int(s) for s in args.seeds.split(",")],
                    out / "sweep", parallel=args.parallel)
    print(csv.read_text())


if __name__ == "__main__":
    main()
