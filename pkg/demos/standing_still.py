"""Walk, stand, walk: show the zero-velocity vote and the velocity estimate while standing.

    python3 demos/standing_still.py
"""

import argparse

import numpy as np

from legvio import PipelineConfig, generate, run
from legvio.scenarios import standing


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=12.0)
    ap.add_argument("--stand", type=float, nargs=2, default=(4.0, 8.0))
    args = ap.parse_args()

    ds = generate(standing(duration=args.duration, span=tuple(args.stand)))
    res = run(ds, PipelineConfig(zv_sigma=1e-4))
    t = res.optimized.stamps
    speed = np.linalg.norm(res.optimized.velocities, axis=1)
    a, b = args.stand
    inside = (t >= a) & (t <= b)
    print(f"keyframes voted still inside the stand: {res.zero_velocity[inside].sum()}/{inside.sum()}")
    print(f"keyframes voted still outside:          {res.zero_velocity[~inside].sum()}/{(~inside).sum()}")
    print(f"largest |v| while standing:             {speed[inside].max():.2e} m/s")
    p = res.optimized.positions[inside]
    print(f"position spread while standing:         {np.ptp(p, axis=0).max():.2e} m")
    bq = res.optimized.biases[res.zero_velocity][:, 6:12]
    print(f"twist bias spread over still keyframes: {np.ptp(bq, axis=0).max():.2e}")


if __name__ == "__main__":
    main()
