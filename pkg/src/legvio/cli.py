"""Command line: simulate, estimate, evaluate, jacobian-check.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import checks
from .evaluation import evaluate, plot_report
from .io import (
    DataFormatError,
    load_json,
    pipeline_config_from_dict,
    read_bias_trace,
    read_dataset,
    read_trajectory,
    sim_config_from_dict,
    sim_config_to_dict,
    write_dataset,
    write_run,
)
from .pipeline import MODES, run
from .simulator import generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("legvio")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_simulate(args):
    cfg = sim_config_from_dict(load_json(args.config) if args.config else {})
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        ds = generate(cfg)
    except ValueError as exc:
        raise DataFormatError(f"{args.config}: {exc}") from exc
    write_dataset(ds, args.out)
    with open(os.path.join(args.out, "sim_config.json"), "w") as fh:
        json.dump(sim_config_to_dict(cfg), fh, indent=1)
    print(f"wrote {len(ds.imu_stamps)} imu, {len(ds.twist_stamps)} twist, "
          f"{len(ds.stereo)} stereo records to {args.out}")
    return EXIT_OK


def cmd_estimate(args):
    d = load_json(args.config) if args.config else {}
    d = dict(d)
    d["mode"] = args.mode
    cfg = pipeline_config_from_dict(d)
    ds = read_dataset(args.dataset)
    result = run(ds, cfg, threaded=args.threaded)
    write_run(result, args.out)
    print(f"{args.mode}: {len(result.optimized)} keyframes, "
          f"mean solve {1e3 * result.solve_times.mean():.1f} ms -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    try:
        summary = evaluate(est, gt, args.rpe_distance)
    except ValueError as exc:
        raise DataFormatError(f"{args.est}: {exc}") from exc
    bias_stamps = biases = None
    if args.bias:
        bias_stamps, biases = read_bias_trace(args.bias)
    elif est.biases is not None:
        bias_stamps, biases = est.stamps, est.biases
    out_dir = os.path.dirname(os.path.abspath(args.out))
    summary["plots"] = plot_report(est, gt, out_dir, bias_stamps, biases)
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=1)
    r = summary["rpe"]
    print(f"RPE {r['distance']:g} m: mean {r['mean']:.4f} std {r['std']:.4f} over {r['count']} windows; "
          f"ATE {summary['ate']}")
    return EXIT_OK


def cmd_jacobian_check(args):
    ok = True
    for res in checks.run_all(args.trials, args.seed, args.tol):
        print(f"{res.name:14s} trials={res.trials} max_rel_err={res.max_rel_error:.2e} "
              f"{'PASS' if res.passed else 'FAIL'}")
        ok &= res.passed
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    p = _Parser(prog="legvio", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config", help="simulation config (JSON)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run the estimator on a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--config", help="pipeline config (JSON)")
    e.add_argument("--mode", choices=MODES, default="vvb")
    e.add_argument("--out", required=True)
    e.add_argument("--threaded", action="store_true", help="run the producer lanes as threads")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="RPE/ATE/drift metrics and SVG plots")
    v.add_argument("--est", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--bias", help="bias trace file (defaults to the estimate's bias columns)")
    v.add_argument("--rpe-distance", type=float, default=10.0)
    v.add_argument("--out", required=True, help="report JSON path; plots go next to it")
    v.set_defaults(func=cmd_evaluate)

    j = sub.add_parser("jacobian-check", help="finite-difference check of all factor Jacobians")
    j.add_argument("--trials", type=int, default=100)
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--tol", type=float, default=1e-4)
    j.set_defaults(func=cmd_jacobian_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
