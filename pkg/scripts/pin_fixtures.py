"""Pin the boundedness bands used by the acceptance suite from pilot runs.

Pilot seeds are disjoint from the seeds the acceptance suite uses, so the
bands are not fitted to the runs they judge.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from ballsim.analysis import delta_boundedness_experiment, geometric_checkpoints
from ballsim.processes import Kind, ProcessConfig

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "pilot_bands.json"

PROCESSES = {
    "packing": ProcessConfig(Kind.PACKING),
    "biased_packing": ProcessConfig(Kind.BIASED_PACKING, bias_a=2, bias_b=2, bias="max"),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bins", type=int, default=1000)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1001, 1002, 1003])
    ap.add_argument("--band", type=float, default=0.2)
    ap.add_argument("--out", type=Path, default=FIXTURE)
    args = ap.parse_args()

    n = args.bins
    marks = geometric_checkpoints(100 * n, 1000 * n)
    out = {"n": n, "reps": args.reps, "alpha": args.alpha, "checkpoints": marks,
           "pilot_seeds": args.seeds, "band": args.band, "processes": {}}
    for name, base in PROCESSES.items():
        deltas, phis = [], []
        for seed in args.seeds:
            cfg = ProcessConfig(**{**base.__dict__, "seed": seed})
            res = delta_boundedness_experiment(cfg, n, marks, args.reps, args.alpha)
            deltas.append(res.mean_delta_over_n)
            phis.append(res.max_log_phi_over_n)
            print(f"{name} seed={seed} delta/n={np.round(res.mean_delta_over_n, 4).tolist()} "
                  f"max_log_phi/n={np.round(res.max_log_phi_over_n, 5).tolist()}")
        out["processes"][name] = {
            "config": cfg.params(),
            "mean_delta_over_n": float(np.mean(deltas)),
            "max_log_phi_over_n": float(np.mean(phis)),
            "pilot_delta_over_n": deltas,
            "pilot_max_log_phi_over_n": phis,
        }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
