"""Command-line entry point: ``powlu {curves,verify,train,sweep,stats}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import instrumentation as inst
from .activations import DEFAULT_M, ActivationKind, eval_self
from .properties import verification_report
from .trainer import (
    COMPARISON_HEADER,
    TrainConfig,
    TrainingAborted,
    compare_runs,
    load_run,
    save_run,
    sweep_configs,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VERIFY = 3
EXIT_TRAIN = 4
EXIT_IO = 5

logger = logging.getLogger("powlu")


class UsageError(ValueError):
    pass


def _float_list(text: str) -> list:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise UsageError("expected a non-empty comma-separated list of numbers")
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _parse_range(text: str) -> tuple:
    try:
        lo, hi = (float(s) for s in text.split(":"))
    except ValueError:
        raise UsageError(f"--range expects LO:HI, got {text!r}") from None
    if not lo < hi:
        raise UsageError(f"--range needs LO < HI, got {text!r}")
    return lo, hi


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def curves_rows(kinds, x_lo: float, x_hi: float, n: int):
    if not x_lo < x_hi:
        raise UsageError(f"need x_lo < x_hi, got {x_lo} and {x_hi}")
    if n < 2:
        raise UsageError(f"need at least 2 points, got {n}")
    span = x_hi - x_lo
    xs = [x_lo + span * i / (n - 1) for i in range(n)]
    for kind in kinds:
        m = kind.m if kind.uses_m else ""
        for x in xs:
            ev = eval_self(kind, x)
            yield (kind.variant.value, m, x, ev.value, ev.derivative)


def cmd_curves(args) -> int:
    m = _float_list(args.m)[0] if args.m else DEFAULT_M
    kinds = [ActivationKind.parse(k, m=m) for k in args.kinds.split(",") if k.strip()]
    if not kinds:
        raise UsageError("--kinds must name at least one activation")
    lo, hi = _parse_range(args.range)
    rows = list(curves_rows(kinds, lo, hi, args.points))
    os.makedirs(args.out, exist_ok=True)
    inst._write_csv(os.path.join(args.out, "curves.csv"), ("kind", "m", "x", "value", "derivative"), rows)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verification_report(_float_list(args.m), n_points=args.points)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "verify.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    c = report["constants"]
    print(f"t0={c['t0']:.6f} t*={c['t_star']:.6f} m_upper={c['m_upper']:.6f}")
    for entry in report["per_m"]:
        mono = entry["monotonicity"]
        status = "monotone" if mono["certified_monotone"] else f"violation at x={mono['first_violation_x']:.6g}"
        print(f"m={entry['m']:g}: {status} ({'PASS' if entry['passed'] else 'FAIL'})")
    if not report["passed"]:
        for name in report["failed"]:
            print(f"FAILED: {name}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _load_config(args) -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    run = train(config)
    save_run(run, args.out)
    print(f"{config.activation().label}: loss {run.initial_loss:.6g} -> {run.final_loss:.6g}")
    return EXIT_OK


def _run_dirname(i: int, config: TrainConfig) -> str:
    kind = config.activation()
    suffix = f"_m{kind.m:g}" if kind.uses_m else ""
    return f"{i}_{kind.variant.value}{suffix}"


def cmd_sweep(args) -> int:
    base = _load_config(args)
    m_values = _float_list(args.m) if args.m else [2.0, 3.0, 4.0]
    runs = []
    for i, config in enumerate(sweep_configs(base, m_values)):
        run = train(config)
        save_run(run, os.path.join(args.out, _run_dirname(i, config)))
        runs.append(run)
    rows = compare_runs(runs)
    inst._write_csv(os.path.join(args.out, "comparison.csv"), COMPARISON_HEADER,
                    ([r[k] for k in COMPARISON_HEADER] for r in rows))
    for r in rows:
        print(f"{r['label']:<16} final={r['final_loss']:.6g} delta={r['loss_delta']:+.6g} "
              f"peak|act|={r['peak_abs_activation']:.4g} e4m3_sat={r['peak_e4m3_saturation']:.4g}")
    return EXIT_OK


def cmd_stats(args) -> int:
    run = load_run(args.run_dir)
    fmt = args.format.upper()
    os.makedirs(args.out, exist_ok=True)
    sat = [s for s in run.log.saturation if s.format == fmt]
    inst.export_bands(run.log.bands, os.path.join(args.out, "bands.csv"))
    inst.export_channels(run.log.channels, os.path.join(args.out, "channels.csv"))
    inst.export_saturation(sat, os.path.join(args.out, "saturation.csv"))
    per_tag = {}
    for b in run.log.bands:
        entry = per_tag.setdefault(b.tag, {"peak_max": b.max, "lowest_min": b.min, "peak_p99": b.p99})
        entry["peak_max"] = max(entry["peak_max"], b.max)
        entry["lowest_min"] = min(entry["lowest_min"], b.min)
        entry["peak_p99"] = max(entry["peak_p99"], b.p99)
    for s in sat:
        entry = per_tag.setdefault(s.tag, {})
        entry["peak_saturated_fraction"] = max(entry.get("peak_saturated_fraction", 0.0), s.saturated_fraction)
    summary = {"format": fmt, "final_loss": run.final_loss, "initial_loss": run.initial_loss, "tags": per_tag}
    with open(os.path.join(args.out, "stats.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powlu", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curves", help="export activation/derivative curves as CSV")
    p.add_argument("--kinds", default="powlu,swiglu,swiglu_clip")
    p.add_argument("--m", default=None, help="exponent hyperparameter (default 3)")
    p.add_argument("--range", default="-6:8", help="LO:HI")
    p.add_argument("--points", type=int, default=1401)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("verify", help="certify continuity, monotonicity and growth properties")
    p.add_argument("--m", required=True, help="comma-separated m values")
    p.add_argument("--points", type=int, default=100_000, help="grid size of the monotonicity scan")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    for name, func, helptext in (("train", cmd_train, "run one instrumented training job"),
                                 ("sweep", cmd_sweep, "SwiGLU vs PowLU at several m")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None)
        if name == "sweep":
            p.add_argument("--m", default=None, help="comma-separated m values (default 2,3,4)")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("stats", help="re-export the logs of a saved run")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("e4m3", "e5m2"), default="e4m3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def _glue_negative_values(argv):
    # let "--range -6:8" through; argparse would read "-6:8" as an option
    out = []
    it = iter(argv)
    for tok in it:
        if tok in ("--range", "--m"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative_values(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"powlu {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"powlu {args.command}: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except OSError as exc:
        print(f"powlu {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
