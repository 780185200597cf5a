"""Ramping twist bias with noisier legs, and a span without vision: RPE per mode.

    python3 demos/slippery_terrain.py
"""

import argparse

from legvio import PipelineConfig, generate, run
from legvio.evaluation import rpe
from legvio.scenarios import puddle, slippery


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--rpe-distance", type=float, default=10.0)
    args = ap.parse_args()

    cases = {
        "slippery": generate(slippery(duration=args.duration)),
        "puddle": generate(puddle(duration=args.duration, window=(args.duration / 3, 2 * args.duration / 3))),
    }
    for name, ds in cases.items():
        line = [f"{name:9s}"]
        for mode in ("vrp", "vvi", "vvb"):
            res = run(ds, PipelineConfig(mode=mode))
            line.append(f"{mode} {rpe(res.optimized, ds.gt, args.rpe_distance).mean:.4f}")
        print("  ".join(line))


if __name__ == "__main__":
    main()
