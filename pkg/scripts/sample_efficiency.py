"""Packing sample efficiency eta^t = W^t/S^t against t/n, averaged over reps."""
import argparse

import numpy as np

from ballsim.analysis import run_reps
from ballsim.processes import ProcessConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--process", default="packing")
    ap.add_argument("--bins", type=int, nargs="+", default=[1000, 10_000])
    ap.add_argument("--balls-per-bin", type=int, default=1000)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = ProcessConfig.from_name(args.process, seed=args.seed)
    print("n,t_over_n,eta_mean,eta_min,eta_max")
    for n in args.bins:
        m = args.balls_per_bin * n
        marks = sorted({max(1, m * k // args.points) for k in range(1, args.points + 1)})
        runs = run_reps(cfg, n, m, args.reps, marks)
        for k, t in enumerate(marks):
            eta = np.array([r.checkpoints[k].W / r.checkpoints[k].S for r in runs])
            print(f"{n},{t / n:g},{eta.mean():.5f},{eta.min():.5f},{eta.max():.5f}")


if __name__ == "__main__":
    main()
