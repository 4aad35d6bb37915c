"""Post-processing guards applied to network coupling predictions.

Everything here works in the local frame, where the goal sits on the
positive x-axis. Rules run in a fixed order:

* obstacle beyond the goal -> no coupling at all;
* x-component forced to zero;
* once the end-effector is past the obstacle, the remaining components
  decay as ``exp(-width * (x_obs - x_ee)^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class GuardContext:
    x_ee: float
    x_obs: float
    x_goal: float


@dataclass(frozen=True)
class GuardConfig:
    """Guard switches and the decay width (1/m^2) of the passing rule."""

    beyond_goal: bool = True
    zero_x: bool = True
    passing_decay: bool = True
    width: float = 1.0

    @classmethod
    def off(cls):
        return cls(False, False, False)

    @property
    def enabled(self):
        return self.beyond_goal and self.zero_x and self.passing_decay

    def to_dict(self):
        return {"beyond_goal": self.beyond_goal, "zero_x": self.zero_x,
                "passing_decay": self.passing_decay, "width": self.width}


def apply_guards(ct, ctx, config=GuardConfig()):
    """Guarded copy of the coupling term ``ct`` (shape (3,)).

    No component ever grows in magnitude.
    """
    out = np.array(ct, dtype=float)
    if config.beyond_goal and ctx.x_obs > ctx.x_goal:
        return np.zeros(3)
    if config.zero_x:
        out[0] = 0.0
    if config.passing_decay and ctx.x_obs < ctx.x_ee:
        out *= math.exp(-config.width * (ctx.x_obs - ctx.x_ee) ** 2)
    return out


def obstacle_extent(frame, setting):
    """Largest local x over the obstacle cloud (its far side along the movement)."""
    if setting.cloud is None or len(setting.cloud) == 0:
        raise DomainError("empty obstacle cloud")
    return float(np.max(frame.to_local(setting.cloud)[:, 0]))


def guard_context(frame, setting, ee_pos, goal):
    return GuardContext(
        x_ee=float(frame.to_local(ee_pos)[0]),
        x_obs=obstacle_extent(frame, setting),
        x_goal=float(frame.to_local(goal)[0]),
    )
