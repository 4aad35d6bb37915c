"""Demonstration trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DomainError


def finite_differences(t, x):
    """Velocity and acceleration of sampled positions.

    Central differences in the interior, one-sided at the two endpoints,
    evaluated on the (possibly non-uniform) sample times ``t``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise DomainError("need at least two timestamps")
    xd = np.gradient(x, t, axis=0, edge_order=1)
    xdd = np.gradient(xd, t, axis=0, edge_order=1)
    return xd, xdd


@dataclass(frozen=True, eq=False)
class Demonstration:
    """A time-stamped 3-D trajectory, optionally tied to an obstacle setting.

    Attributes
    ----------
    t : ndarray, shape (T,)
        Sample times in seconds, strictly increasing, starting at 0.
    x, xd, xdd : ndarray, shape (T, 3)
        Position (m), velocity (m/s) and acceleration (m/s^2).
    tau : float
        Movement duration in seconds.
    start, goal : ndarray, shape (3,)
        Start and goal markers. Default to the first and last sample.
    setting : ObstacleSetting or None
        The scene the demonstration was recorded in; ``None`` for baselines.
    demo_id : str
    """

    t: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    xdd: np.ndarray
    tau: float
    start: np.ndarray = None
    goal: np.ndarray = None
    setting: Optional[object] = None
    demo_id: str = "demo"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        arrays = {k: np.asarray(getattr(self, k), dtype=float) for k in ("x", "xd", "xdd")}
        for name, a in arrays.items():
            if a.shape != (len(t), 3):
                raise DomainError(f"{self.demo_id}: {name} must have shape ({len(t)}, 3), got {a.shape}")
        object.__setattr__(self, "t", t)
        for name, a in arrays.items():
            object.__setattr__(self, name, a)
        start = arrays["x"][0] if self.start is None else np.asarray(self.start, dtype=float)
        goal = arrays["x"][-1] if self.goal is None else np.asarray(self.goal, dtype=float)
        object.__setattr__(self, "start", start.copy())
        object.__setattr__(self, "goal", goal.copy())
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def from_positions(cls, t, x, tau=None, **kwargs):
        """Build a demonstration from positions only, differentiating numerically."""
        t = np.asarray(t, dtype=float)
        xd, xdd = finite_differences(t, x)
        if tau is None:
            tau = t[-1] - t[0]
        return cls(t=t, x=x, xd=xd, xdd=xdd, tau=tau, **kwargs)

    def __len__(self):
        return len(self.t)

    def transformed(self, rotation, offset):
        """Rigidly move the whole demonstration: ``p -> rotation @ p + offset``."""
        R = np.asarray(rotation, dtype=float)
        d = np.asarray(offset, dtype=float)
        setting = self.setting.transformed(R, d) if self.setting is not None else None
        return replace(
            self,
            x=self.x @ R.T + d,
            xd=self.xd @ R.T,
            xdd=self.xdd @ R.T,
            start=R @ self.start + d,
            goal=R @ self.goal + d,
            setting=setting,
        )

    def in_frame(self, frame):
        """Express positions, velocities and accelerations in a local frame."""
        return replace(
            self,
            x=frame.to_local(self.x),
            xd=frame.vec_to_local(self.xd),
            xdd=frame.vec_to_local(self.xdd),
            start=frame.to_local(self.start),
            goal=frame.to_local(self.goal),
        )
