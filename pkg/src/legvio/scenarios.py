"""Named simulation setups used by the acceptance tests and the demos."""

from __future__ import annotations

from .preint_velocity import TwistNoiseSpec
from .simulator import BiasSchedule, SimConfig, TrajectorySpec


def noise_free(duration=60.0, camera_rate=30.0, kind="figure_eight", seed=0):
    """Exact measurements, no biases: every factor is zero on ground truth."""
    return SimConfig(
        trajectory=TrajectorySpec(kind=kind, duration=duration),
        camera_rate=camera_rate,
        noise_free=True,
        seed=seed,
    )


def biased_twist(bias=(0.0, 0.0, 0.03), duration=60.0, camera_rate=10.0, seed=1):
    """Constant linear-velocity bias on the leg odometry."""
    return SimConfig(
        trajectory=TrajectorySpec(kind="figure_eight", duration=duration),
        camera_rate=camera_rate,
        biases={"lin_vel": BiasSchedule(value=tuple(bias))},
        seed=seed,
    )


def slippery(duration=30.0, camera_rate=10.0, seed=7, noise_scale=3.0):
    """Twist bias ramping over time and every twist noise density scaled up."""
    base = TwistNoiseSpec()
    noise = TwistNoiseSpec(
        ang_sigma=noise_scale * base.ang_sigma,
        lin_sigma=noise_scale * base.lin_sigma,
        ang_walk=noise_scale * base.ang_walk,
        lin_walk=noise_scale * base.lin_walk,
    )
    return SimConfig(
        trajectory=TrajectorySpec(kind="figure_eight", duration=duration),
        camera_rate=camera_rate,
        twist_noise=noise,
        biases={"lin_vel": BiasSchedule(kind="ramp", value=(0.01, 0.0, 0.0), rate=(0.001, 0.0, 0.001))},
        seed=seed,
    )


def puddle(duration=30.0, window=(10.0, 20.0), camera_rate=10.0, seed=6):
    """Biased twist plus a span with no landmark observations."""
    return SimConfig(
        trajectory=TrajectorySpec(kind="figure_eight", duration=duration),
        camera_rate=camera_rate,
        biases={"lin_vel": BiasSchedule(value=(0.02, 0.0, 0.03))},
        puddle=tuple(window),
        seed=seed,
    )


def standing(duration=20.0, span=(5.0, 15.0), camera_rate=30.0, seed=2, lin_sigma=2e-3):
    """Walk, stand still for ``span``, walk again; quieter legs so the vote can fire."""
    return SimConfig(
        trajectory=TrajectorySpec(kind="figure_eight", duration=duration, ramp_time=1.0),
        camera_rate=camera_rate,
        stationary=[tuple(span)],
        twist_noise=TwistNoiseSpec(lin_sigma=lin_sigma),
        biases={"lin_vel": BiasSchedule(value=(0.0, 0.0, 0.03))},
        seed=seed,
    )
