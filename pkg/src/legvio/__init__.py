"""Sliding-window factor-graph odometry for legged robots.

Fuses preintegrated IMU, preintegrated leg-odometry twist (with an estimated
twist bias), stereo landmark and zero-velocity factors. Also ships a
deterministic simulator and trajectory metrics.
"""

from .pipeline import PipelineConfig, RunResult, run
from .simulator import BiasSchedule, SimConfig, SimDataset, TrajectorySpec, dead_reckon, generate
from .solver import FactorGraph, SolverConfig, optimize
from .states import BiasBlock, State
from .trajectory import Trajectory

__all__ = [
    "BiasBlock",
    "BiasSchedule",
    "FactorGraph",
    "PipelineConfig",
    "RunResult",
    "SimConfig",
    "SimDataset",
    "SolverConfig",
    "State",
    "Trajectory",
    "TrajectorySpec",
    "dead_reckon",
    "generate",
    "optimize",
    "run",
]

__version__ = "0.1.0"
