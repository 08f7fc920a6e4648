"""Command-line entry point: ``irs-noma --config exp.yaml [overrides]``."""
from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .ao import SCHEMES
from .experiment import ConfigError, config_from_dict, prepare_output, run_experiment


def build_parser():
    p = argparse.ArgumentParser(
        prog="irs-noma",
        description="Monte-Carlo sweeps of robust secure beamforming for IRS-assisted NOMA.")
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", nargs="+", choices=SCHEMES, help="one or more schemes")
    p.add_argument("--nt", type=int, nargs="+", help="BS antennas (sweep list allowed)")
    p.add_argument("--m", type=int, nargs="+", help="IRS elements (sweep list allowed)")
    p.add_argument("--ne", type=int, nargs="+", help="eavesdropper antennas (sweep list allowed)")
    p.add_argument("--rq", type=float, nargs="+", help="QoS rate target R_Q in bps/Hz")
    p.add_argument("--rm", type=float, nargs="+", help="eavesdropping cap R_M in bps/Hz")
    p.add_argument("--xi", type=float, nargs="+", help="normalized CSI error")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trace", action="store_true", help="write per-trial iteration traces")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def merged_config(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a mapping")
    dims = dict(data.get("dims") or {})
    for key in ("nt", "m", "ne"):
        if getattr(args, key) is not None:
            dims[key] = getattr(args, key)
    if dims or "dims" in data:
        data["dims"] = dims
    overrides = {"trials": args.trials, "seed": args.seed, "schemes": args.scheme, "R_Q": args.rq,
                 "R_M": args.rm, "xi_n": args.xi, "out": args.out, "workers": args.workers}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.trace:
        data["trace"] = True
    return config_from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = merged_config(args)
    except (ConfigError, OSError, yaml.YAMLError) as e:
        print(f"irs-noma: config error: {e}", file=sys.stderr)
        return 2
    try:
        prepare_output(cfg.out, cfg.trace)
    except OSError as e:
        print(f"irs-noma: cannot write output: {e}", file=sys.stderr)
        return 3
    out = run_experiment(cfg)
    for a in out.aggregates:
        point = " ".join(f"{k}={a[k]}" for k in ("nt", "m", "ne", "R_Q", "R_M", "xi_n"))
        print(f"{point} {a['scheme']}: feasible {a['n_feasible']}/{a['n_trials']}, "
              f"mean power {a['mean_power_db']:.2f} dB")
    print(f"raw: {out.raw_path}\naggregate: {out.aggregate_path}")
    return 0 if out.all_points_feasible else 1


if __name__ == "__main__":
    sys.exit(main())
