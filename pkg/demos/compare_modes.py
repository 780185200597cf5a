"""Run every estimator mode on one biased-twist dataset and print RPE and altitude drift.

    python3 demos/compare_modes.py --duration 30
"""

import argparse

from legvio import PipelineConfig, generate, run
from legvio.evaluation import altitude_error, fit_linear_drift, rpe
from legvio.scenarios import biased_twist


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--rpe-distance", type=float, default=10.0)
    args = ap.parse_args()

    ds = generate(biased_twist(duration=args.duration))
    print(f"{'mode':11s} {'RPE mean':>9s} {'RPE std':>8s} {'dz/dt':>9s} {'solve ms':>9s}")
    for mode in ("deadreckon", "vrp", "vvi", "vvb"):
        res = run(ds, PipelineConfig(mode=mode))
        rep = rpe(res.optimized, ds.gt, args.rpe_distance)
        t, dz = altitude_error(res.optimized, ds.gt)
        slope = fit_linear_drift(t, dz).slope
        print(f"{mode:11s} {rep.mean:9.4f} {rep.std:8.4f} {slope:9.5f} {1e3 * res.solve_times.mean():9.1f}")


if __name__ == "__main__":
    main()
