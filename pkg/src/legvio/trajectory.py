"""Time-stamped pose/velocity/bias sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .states import BiasBlock, State


@dataclass
class Trajectory:
    stamps: np.ndarray  # (n,)
    rotations: np.ndarray  # (n, 3, 3) world <- base
    positions: np.ndarray  # (n, 3)
    velocities: np.ndarray | None = None  # (n, 3) world frame
    biases: np.ndarray | None = None  # (n, 12)

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        if self.biases is not None:
            self.biases = np.asarray(self.biases, dtype=float).reshape(-1, 12)
        n = len(self.stamps)
        if len(self.rotations) != n or len(self.positions) != n:
            raise ValueError("trajectory arrays have inconsistent lengths")

    def __len__(self):
        return len(self.stamps)

    @classmethod
    def from_states(cls, states):
        states = list(states)
        return cls(
            stamps=np.array([s.stamp for s in states]),
            rotations=np.array([s.rotation for s in states]),
            positions=np.array([s.position for s in states]),
            velocities=np.array([s.velocity for s in states]),
            biases=np.array([s.biases.vector() for s in states]),
        )

    def state(self, i):
        return State(
            rotation=self.rotations[i],
            position=self.positions[i],
            velocity=np.zeros(3) if self.velocities is None else self.velocities[i],
            biases=BiasBlock() if self.biases is None else BiasBlock.from_vector(self.biases[i]),
            stamp=float(self.stamps[i]),
        )

    def subset(self, idx):
        idx = np.asarray(idx)
        return Trajectory(
            self.stamps[idx],
            self.rotations[idx],
            self.positions[idx],
            None if self.velocities is None else self.velocities[idx],
            None if self.biases is None else self.biases[idx],
        )

    def index_of(self, stamps, tol=1e-9):
        """Indices of exactly matching stamps (raises if any is missing)."""
        stamps = np.atleast_1d(np.asarray(stamps, dtype=float))
        idx = np.searchsorted(self.stamps, stamps - tol)
        idx = np.clip(idx, 0, len(self.stamps) - 1)
        if np.any(np.abs(self.stamps[idx] - stamps) > tol):
            raise KeyError("stamp not found in trajectory")
        return idx

    def interpolate(self, stamps):
        """Linear in position/velocity/bias, spherical-linear in orientation."""
        stamps = np.asarray(stamps, dtype=float)
        if stamps.min() < self.stamps[0] - 1e-9 or stamps.max() > self.stamps[-1] + 1e-9:
            raise ValueError("interpolation stamps outside trajectory span")
        stamps = np.clip(stamps, self.stamps[0], self.stamps[-1])
        lin = lambda a: np.stack([np.interp(stamps, self.stamps, a[:, c]) for c in range(a.shape[1])], 1)  # noqa: E731
        slerp = Slerp(self.stamps, Rotation.from_matrix(self.rotations))
        return Trajectory(
            stamps,
            slerp(stamps).as_matrix(),
            lin(self.positions),
            None if self.velocities is None else lin(self.velocities),
            None if self.biases is None else lin(self.biases),
        )

    def path_length(self):
        """Cumulative travelled distance at each sample."""
        steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])
