"""Command-line entry point ``pascal-sim``."""
from __future__ import annotations

import argparse
import math
import sys

import yaml

from . import kernels
from .harness import (ExperimentConfig, config_from_dict, crlb_std, run_point, run_sweep, run_trajectory,
                      write_csv)
from .ser_analytic import ErrorModel, ScenarioSpec, average_ser_mpsk
from .validation import run_all


def _load(args) -> ExperimentConfig:
    with open(args.config, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise SystemExit(f"{args.config}: top level must be a mapping")
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        raw["out"] = args.out
    return config_from_dict(raw)


def _emit(rows, args, cfg, include_timing=False):
    target = args.out if args.out is not None else cfg.out
    if target:
        write_csv(rows, target, include_timing)
    else:
        write_csv(rows, sys.stdout, include_timing)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rows = run_point(cfg, threads=args.threads)
    _emit(rows, args, cfg, args.include_timing)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = run_sweep(cfg, threads=args.threads, out="", include_timing=args.include_timing)
    _emit(rows, args, cfg, args.include_timing)
    return 0


def cmd_trajectory(args) -> int:
    cfg = _load(args)
    rows = run_trajectory(cfg, args.frames, threads=args.threads, out="")
    _emit(rows, args, cfg)
    return 0


def cmd_crlb(args) -> int:
    cfg = _load(args)
    print("pilots,drone,crlb_theta_deg,crlb_range_m,crlb_doppler_hz")
    for l in range(1, cfg.frame.subframes_per_frame + 1):
        s = crlb_std(cfg, l)
        for k, row in enumerate(s, start=1):
            print(f"{l},{k},{math.degrees(row[0]):.12e},{row[1]:.12e},{row[2]:.12e}")
    return 0


def cmd_ser_analytic(args) -> int:
    cfg = _load(args)
    n, kk = cfg.geometry.num_antennas, len(cfg.drones)
    m, r = cfg.frame.modulation_order, cfg.taylor.order
    per_call = m ** kk * sum((q1 + 1) * kernels.term_count(q1, kk, n) for q1 in range(r + 1))
    print("drone,subframe,sigma_theta_deg,sigma_doppler_hz,ser_analytic,taylor_order,terms")
    for k in range(1, kk + 1):
        for l in range(1, cfg.frame.subframes_per_frame + 1):
            s = crlb_std(cfg, l)[k - 1]
            sc = ScenarioSpec(cfg.geometry, cfg.drones, cfg.frame, k, l)
            val = average_ser_mpsk(sc, ErrorModel(s[0], s[2]), cfg.taylor)
            print(f"{k},{l},{math.degrees(s[0]):.12e},{s[2]:.12e},{val:.12e},{r},{per_call}")
    return 0


def cmd_validate(args) -> int:
    results = run_all(quick=args.quick)
    for res in results:
        print(res.line())
    print(f"kernel backend: {kernels.BACKEND}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pascal-sim",
                                description="Pilot-aided communication and localisation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="YAML experiment file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed (u64)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for Monte-Carlo chunks")
        sp.add_argument("--out", default=None, help="CSV output path (stdout when omitted)")
        sp.add_argument("--format", choices=["csv"], default="csv")

    for name, fn, help_ in (("simulate", cmd_simulate, "run a single configuration"),
                            ("sweep", cmd_sweep, "run the configured sweep"),
                            ("trajectory", cmd_trajectory, "track drones over frames"),
                            ("crlb", cmd_crlb, "print square-root CRLBs only"),
                            ("ser-analytic", cmd_ser_analytic, "closed-form SER only")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.set_defaults(func=fn)
        if name in ("simulate", "sweep"):
            sp.add_argument("--include-timing", action="store_true",
                            help="add the wall-time column (breaks byte-identical reruns)")
        if name == "trajectory":
            sp.add_argument("--frames", type=int, default=None, help="number of frames (default frame.frames)")
    sp = sub.add_parser("validate", help="run the oracle-agreement suite")
    common(sp, needs_config=False)
    sp.add_argument("--quick", action="store_true", help="fewer random cases")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        raise SystemExit("--threads must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise SystemExit("--seed must be an unsigned 64-bit integer")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
