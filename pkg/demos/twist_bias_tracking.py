"""Watch the twist bias estimate converge to an injected constant leg-odometry bias.

    python3 demos/twist_bias_tracking.py --bias 0 0 0.03 --plot out/
"""

import argparse

import numpy as np

from legvio import generate, run
from legvio.evaluation import plot_report
from legvio.scenarios import biased_twist


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bias", type=float, nargs=3, default=(0.0, 0.0, 0.03))
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--plot", help="directory for SVG plots")
    args = ap.parse_args()

    ds = generate(biased_twist(bias=args.bias, duration=args.duration))
    res = run(ds)
    bv = res.bias_trace[:, 9:12]
    for t in np.arange(0.0, args.duration + 1e-9, max(args.duration / 10, 1.0)):
        k = min(np.searchsorted(res.bias_stamps, t), len(bv) - 1)
        print(f"t={res.bias_stamps[k]:6.1f}s  b_v = [{bv[k, 0]:+.4f} {bv[k, 1]:+.4f} {bv[k, 2]:+.4f}]")
    print(f"injected    b_v = [{args.bias[0]:+.4f} {args.bias[1]:+.4f} {args.bias[2]:+.4f}]")
    if args.plot:
        for p in plot_report(res.optimized, ds.gt, args.plot, res.bias_stamps, res.bias_trace):
            print("wrote", p)


if __name__ == "__main__":
    main()
