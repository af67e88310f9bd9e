"""ballsim command line: gap tables, efficiency series, verification, potentials, traces."""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from typing import Optional, Sequence

from . import __version__
from .analysis import (
    counterexample_check,
    gap_distribution_experiment,
    sample_efficiency_series,
    throughput_series,
    worker_count,
)
from .conditions import ConditionVerifier, Mode
from .core import LoadState
from .fast import simulate
from .output import FORMATS, RunManifest, outcome_record, read_trace, render, write, write_trace
from .potentials import GoodEventTracker, PotentialRecorder, good_event_density, min_window_density, snapshot
from .processes import PROCESS_NAMES, Kind, ProcessConfig, run
from .unfolding import AtomicTrace, audit_memory_folding, fold_memory_trace

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # one-line diagnostic, exit 2
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _fraction(s: str) -> Fraction:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_process(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("process")
    g.add_argument("--process", required=required, help=f"one of: {', '.join(PROCESS_NAMES)}")
    g.add_argument("--d", type=int, default=2, help="samples per ball for d_choice (default 2)")
    g.add_argument("--beta", type=_fraction, default=Fraction(1, 2), help="two-choice probability of one_plus_beta")
    g.add_argument("--quantile", type=_fraction, default=Fraction(1, 2), help="quantile delta (default 1/2)")
    g.add_argument("--bias", choices=("max", "min", "uniform"), default="max", help="biased_packing vector")
    g.add_argument("--bias-a", type=_fraction, default=Fraction(2), help="lower bias bound 1/(a n)")
    g.add_argument("--bias-b", type=_fraction, default=Fraction(2), help="upper bias bound b/n")
    g.add_argument("--seed", type=int, default=0)


def _add_size(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bins", "-n", type=_positive_int, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rounds", "-m", type=_positive_int, help="number of rounds m")
    g.add_argument(
        "--balls-per-bin",
        type=_positive_int,
        metavar="K",
        help="shorthand for m = K*n rounds (rounds, not balls: Filling processes place >= 1 ball per round)",
    )


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--out", "-o", default="-", help="output file (default stdout)")


def _config(args) -> ProcessConfig:
    try:
        return ProcessConfig.from_name(
            args.process,
            d=args.d,
            beta=args.beta,
            quantile=args.quantile,
            bias=args.bias,
            bias_a=args.bias_a,
            bias_b=args.bias_b,
            seed=args.seed,
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None


def _rounds(args) -> int:
    return args.rounds if args.rounds is not None else args.balls_per_bin * args.bins


def _emit(args, rows, columns, manifest: RunManifest, summary: Optional[dict] = None) -> None:
    meta = {"manifest": manifest.finish().to_dict()}
    if summary is not None:
        meta["summary"] = summary
    write(render(rows, columns, meta, args.format), args.out)


# --- subcommands ------------------------------------------------------------

def cmd_gap(args) -> int:
    cfg = _config(args)
    n, m = args.bins, _rounds(args)
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    res = gap_distribution_experiment(cfg, n, m, args.reps, workers=worker_count(args.threads))
    manifest = RunManifest.for_config("gap", cfg, n=n, m=m, reps=args.reps)
    rows = [{"gap": k, "count": c, "share": s} for k, c, s in res.histogram.rows()]
    summary = {**res.summary, "gaps": [str(g) for g in res.gaps], "wall_clock": res.wall_clock}
    _emit(args, rows, ["gap", "count", "share"], manifest, summary)
    return EXIT_OK


def cmd_efficiency(args) -> int:
    cfg = _config(args)
    n, m = args.bins, _rounds(args)
    stride = args.stride or n
    marks = list(range(stride, m + 1, stride))
    if not marks or marks[-1] != m:
        marks.append(m)
    fr = simulate(cfg, n, m, rep=args.rep, checkpoints=marks)
    rows = []
    for (t, eta), (_t, mu), cp in zip(sample_efficiency_series(fr), throughput_series(fr), fr.checkpoints):
        rows.append({
            "t": t, "t_over_n": t / n, "balls": cp.W, "samples": cp.S,
            "eta": float(eta), "eta_exact": str(eta), "mu": float(mu),
        })
    manifest = RunManifest.for_config("efficiency", cfg, n=n, m=m, reps=1, stride=stride, extra={"rep": args.rep})
    _emit(args, rows, ["t", "t_over_n", "balls", "samples", "eta", "eta_exact", "mu"], manifest)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    n, m = args.bins, _rounds(args)
    mode = Mode(args.mode)
    row: dict = {"process": cfg.label, "n": n, "m": m}
    if cfg.kind is Kind.MEMORY:
        _state, trace = run(cfg, n, m, record=True, rep=args.rep)
        audit = audit_memory_folding(AtomicTrace.from_outcomes(n, trace.records))
        summary, flags = audit.w, audit.good_flags
        row.update(folded_rounds=audit.rounds, partial_steps=audit.partial_steps,
                   coupling_violations=audit.coupling_violations)
    else:
        verifier, tracker = ConditionVerifier(Mode.AUDIT), GoodEventTracker()
        run(cfg, n, m, [verifier, tracker], rep=args.rep)
        summary, flags = verifier.summary, tracker.flags
    dens = min_window_density(flags, n, first_round=1)
    row.update(
        rounds_checked=summary.rounds,
        p_checked=summary.p_checked,
        p_violations=summary.p_violations,
        w_violations=summary.w_violations,
        w_rules=";".join(f"{k}={v}" for k, v in sorted(summary.w_rules.items())),
        min_good_window=dens,
    )
    columns = list(row)
    failure = summary.first_failure.describe() if summary.first_failure else None
    manifest = RunManifest.for_config("verify", cfg, n=n, m=m, reps=1, extra={"mode": mode.value, "rep": args.rep})
    _emit(args, [row], columns, manifest, {"first_failure": failure})
    if mode is Mode.STRICT and not summary.passed:
        print(f"verify: {failure}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_counterexample(args) -> int:
    rows = []
    ok = True
    for alpha in args.alpha:
        if not alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {alpha}")
        try:
            res = counterexample_check(args.bins, alpha, args.threshold)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        ok &= res.passed
        rows.append({
            "n": res.n, "alpha": alpha, "threshold": res.threshold, "log_ratio": res.log_ratio,
            "ratio": res.ratio, "bound": res.bound, "result": "PASS" if res.passed else "FAIL",
        })
    manifest = RunManifest("counterexample", n=args.bins, extra={"alphas": list(args.alpha), "threshold": args.threshold})
    _emit(args, rows, ["n", "alpha", "threshold", "log_ratio", "ratio", "bound", "result"], manifest)
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_potential(args) -> int:
    cfg = _config(args)
    n, m = args.bins, _rounds(args)
    if not args.alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {args.alpha}")
    stride = args.stride or n
    # the series starts at the empty configuration and always ends at round m
    rec, tracker = PotentialRecorder(args.alpha, stride, windows=[(m, m)]), GoodEventTracker()
    run(cfg, n, m, [rec, tracker], rep=args.rep)
    flags = tracker.flags
    rows = []
    for s in [snapshot(LoadState(n), args.alpha)] + rec.snapshots:
        row = s.as_row()
        row["delta_exact"] = str(s.delta)
        row["window_density"] = (
            good_event_density(flags, s.t, n, first_round=1) if 1 <= s.t and s.t + n <= m else None
        )
        rows.append(row)
    dens = min_window_density(flags, n, first_round=1)
    summary = {"min_window_density": dens, "bound": n / 40, "passed": None if dens is None else dens >= n / 40}
    manifest = RunManifest.for_config("potential", cfg, n=n, m=m, reps=1, alpha=args.alpha, stride=stride,
                                      extra={"rep": args.rep})
    columns = ["t", "gap", "delta", "delta_exact", "log_phi", "alpha", "underloaded", "good_event", "window_density"]
    _emit(args, rows, columns, manifest, summary)
    return EXIT_OK


def cmd_record(args) -> int:
    cfg = _config(args)
    n, m = args.bins, _rounds(args)
    _state, trace = run(cfg, n, m, record=True, rep=args.rep)
    manifest = RunManifest.for_config("record", cfg, n=n, m=m, reps=1, extra={"rep": args.rep}).finish()
    records = (outcome_record(k, o) for k, o in enumerate(trace.records, start=1))
    if args.trace in (None, "-"):
        write_trace(sys.stdout, manifest.to_dict(), records)
    else:
        with open(args.trace, "w") as fh:
            write_trace(fh, manifest.to_dict(), records)
    return EXIT_OK


def cmd_fold_memory(args) -> int:
    try:
        with open(args.input) as fh:
            head, outcomes = read_trace(fh)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read trace: {e}") from None
    if head.get("process") != Kind.MEMORY.value:
        raise ConfigError(f"fold-memory needs a memory trace, got {head.get('process')!r}")
    n = head["n"]
    try:
        trace = AtomicTrace.from_outcomes(n, outcomes)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    audit = audit_memory_folding(trace)
    if args.rounds_out:
        folded = fold_memory_trace(AtomicTrace(n, trace.sampled, trace.bins, trace.cache_before))
        manifest = RunManifest("fold-memory", process="memory", n=n, m=len(outcomes),
                               extra={"source": head}).finish()
        recs = (
            {"round": k, "atomic_start": f.start + 1, "receivers": list(f.receivers), **f.outcome.to_record()}
            for k, f in enumerate(folded.rounds, start=1)
        )
        with open(args.rounds_out, "w") as fh:
            write_trace(fh, manifest.to_dict(), recs)
    row = {"n": n, "atomic_steps": len(outcomes), **audit.as_dict(),
           "min_good_window": audit.min_density(n)}
    row["w_rules"] = ";".join(f"{k}={v}" for k, v in sorted(row["w_rules"].items()))
    manifest = RunManifest("fold-memory", process="memory", n=n, m=len(outcomes), extra={"mode": args.mode})
    _emit(args, [row], list(row), manifest)
    if Mode(args.mode) is Mode.STRICT and not audit.w.passed:
        return EXIT_VIOLATION
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ballsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"ballsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gap", help="final-gap histogram over seeded repetitions")
    _add_process(g)
    _add_size(g)
    g.add_argument("--reps", type=int, default=1)
    g.add_argument("--threads", type=int, default=None, help="worker threads (default $BALLSIM_THREADS or 1)")
    _add_output(g)
    g.set_defaults(func=cmd_gap)

    e = sub.add_parser("efficiency", help="sample-efficiency series (t/n, W/S)")
    _add_process(e)
    _add_size(e)
    e.add_argument("--stride", type=_positive_int, default=None, help="rounds between points (default n)")
    e.add_argument("--rep", type=int, default=0)
    _add_output(e)
    e.set_defaults(func=cmd_efficiency)

    v = sub.add_parser("verify", help="run with per-round checks of conditions P and W")
    _add_process(v)
    _add_size(v)
    v.add_argument("--mode", choices=[x.value for x in Mode], default="strict")
    v.add_argument("--rep", type=int, default=0)
    _add_output(v)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("counterexample", help="exact one-step potential ratio on the sqrt(n) configuration")
    c.add_argument("--bins", "-n", type=_positive_int, default=10_000)
    c.add_argument("--alpha", type=float, nargs="+", required=True)
    c.add_argument("--threshold", type=int, default=2, help="potential counts bins with y >= threshold")
    _add_output(c)
    c.set_defaults(func=cmd_counterexample)

    pt = sub.add_parser("potential", help="potential snapshots and good-event window densities")
    _add_process(pt)
    _add_size(pt)
    pt.add_argument("--alpha", type=float, required=True)
    pt.add_argument("--stride", type=_positive_int, default=None)
    pt.add_argument("--rep", type=int, default=0)
    _add_output(pt)
    pt.set_defaults(func=cmd_potential)

    r = sub.add_parser("record", help="write a per-round NDJSON trace")
    _add_process(r)
    _add_size(r)
    r.add_argument("--rep", type=int, default=0)
    r.add_argument("--out", "-o", dest="trace", default="-")
    r.set_defaults(func=cmd_record)

    f = sub.add_parser("fold-memory", help="fold a recorded memory trace into rounds and audit them")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", dest="rounds_out", default=None, help="write folded rounds as NDJSON")
    f.add_argument("--mode", choices=[x.value for x in Mode], default="audit")
    f.add_argument("--format", choices=FORMATS, default="csv")
    f.set_defaults(func=cmd_fold_memory, out="-")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"ballsim {args.command}: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
