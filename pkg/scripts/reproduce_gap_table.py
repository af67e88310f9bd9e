"""Final-gap distributions for the experiment table (n, m = K*n rounds, seeded reps)."""
import argparse

from ballsim.analysis import gap_distribution_experiment
from ballsim.processes import Kind, ProcessConfig

COLUMNS = {
    "one_plus_beta": ProcessConfig(Kind.ONE_PLUS_BETA),
    "packing": ProcessConfig(Kind.PACKING),
    "tight_packing": ProcessConfig(Kind.TIGHT_PACKING),
    "quantile": ProcessConfig(Kind.QUANTILE),
    "memory": ProcessConfig(Kind.MEMORY),
    "two_choice": ProcessConfig(Kind.D_CHOICE, d=2),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bins", type=int, default=1000)
    ap.add_argument("--balls-per-bin", type=int, default=1000, help="rounds m = K*n")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--processes", nargs="+", choices=sorted(COLUMNS), default=list(COLUMNS))
    args = ap.parse_args()

    n, m = args.bins, args.balls_per_bin * args.bins
    print(f"n={n} m={m} reps={args.reps} seed={args.seed}")
    for name in args.processes:
        cfg = ProcessConfig(**{**COLUMNS[name].__dict__, "seed": args.seed})
        res = gap_distribution_experiment(cfg, n, m, args.reps, workers=args.threads)
        cells = "  ".join(f"{k}:{share:.0%}" for k, _, share in res.histogram.rows())
        print(f"{name:>14}  mode={res.histogram.mode:<3} {cells}   ({res.wall_clock:.1f}s)")


if __name__ == "__main__":
    main()
