"""Synthetic demonstrations: minimum-jerk baselines and obstacle avoidance
produced by an analytic repulsive coupling term.

The avoidance coupling is ``gamma * exp(-beta * d) * u`` where ``d`` is the
signed distance to the obstacle. ``u`` lies in the local lateral (y, z)
plane: the offset from the obstacle center to the end-effector is taken with
its center shifted ``bias`` meters along local -y (so an obstacle dead on the
path is passed on the +y side), its along-track component dropped and its
component along the current velocity removed. Dividing by
``sqrt(|offset|^2 + soften^2)`` gives a unit push away from the obstacle that
fades continuously as the end-effector comes level with its center. Obstacles
lying beyond the goal along the local x-axis produce no coupling at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demos import Demonstration, finite_differences
from .dmp import unroll
from .errors import GenerationError, IntegrationError, TargetError
from .frame import GRAVITY, build_frame
from .obstacles import make_setting, signed_distance

DEMO_RATE = 25.0


@dataclass(frozen=True)
class OracleParams:
    gamma: float = 100.0  # coupling magnitude at the surface, tau^2 * m/s^2
    beta: float = 20.0    # decay rate, 1/m
    bias: float = 0.015   # shift of the repulsion center along local -y, m
    soften: float = 0.01  # lateral offset scale below which the push fades, m
    workspace: float = 10.0  # divergence bound, multiples of the path length


def _samples(tau, rate):
    if rate < 10:
        raise GenerationError(f"sampling rate {rate} Hz below 10 Hz")
    return np.linspace(0.0, tau, int(round(tau * rate)) + 1)


def min_jerk(start, goal, tau, t):
    """Minimum-jerk position, velocity and acceleration at times ``t``."""
    start = np.asarray(start, float)
    span = np.asarray(goal, float) - start
    u = np.clip(np.asarray(t, float) / tau, 0.0, 1.0)[:, None]
    pos = 10 * u**3 - 15 * u**4 + 6 * u**5
    vel = (30 * u**2 - 60 * u**3 + 30 * u**4) / tau
    acc = (60 * u - 180 * u**2 + 120 * u**3) / tau**2
    return start + span * pos, span * vel, span * acc


def gen_baseline(start, goal, tau, rate=DEMO_RATE, jitter_seed=None, sigma=0.0, demo_id="baseline"):
    """Minimum-jerk point-to-point demonstration, optionally with seeded position noise."""
    t = _samples(tau, rate)
    x, xd, xdd = min_jerk(start, goal, tau, t)
    if sigma > 0:
        rng = np.random.default_rng(jitter_seed)
        noise = sigma * rng.standard_normal(x.shape)
        noise[0] = noise[-1] = 0.0
        x = x + noise
        xd, xdd = finite_differences(t, x)
    return Demonstration(t=t, x=x, xd=xd, xdd=xdd, tau=tau, start=start, goal=goal, demo_id=demo_id)


def repulsion(x, v, local_setting, params):
    """Oracle coupling at local position ``x`` with scaled velocity ``v``."""
    d = float(signed_distance(local_setting, x))
    r = x - local_setting.center
    r[1] += params.bias
    # lateral only: a guarded network drops any push along the movement axis.
    # Zeroing x before orthogonalizing keeps the large along-track offset
    # from turning into a push along the current lateral velocity.
    r[0] = 0.0
    speed = np.linalg.norm(v)
    if speed > 1e-12:
        vhat = v / speed
        r = r - (r @ vhat) * vhat
    # The soft norm keeps the field continuous where the lateral offset
    # vanishes while still committing to a side well ahead of the obstacle.
    lateral = r[1:]
    direction = np.zeros(3)
    direction[1:] = lateral / math.sqrt(lateral @ lateral + params.soften**2)
    return params.gamma * math.exp(-params.beta * d) * direction


def placement_offset(setting, sigma, seed, gravity=GRAVITY):
    """Seeded lateral displacement of an obstacle, as a hand-placed object would vary.

    Normal with standard deviation ``sigma`` (m) along the local y and z axes
    of the setting's frame, returned in world coordinates.
    """
    if sigma <= 0:
        return np.zeros(3)
    frame = build_frame(setting.start, setting.goal, gravity)
    dy, dz = np.random.default_rng(seed).normal(0.0, sigma, 2)
    return frame.to_world(np.array([0.0, dy, dz])) - frame.to_world(np.zeros(3))


def gen_avoidance(baseline, setting, params=OracleParams(), tau=None, rate=DEMO_RATE,
                  gravity=GRAVITY, demo_id=None):
    """Avoidance demonstration of ``setting`` by the baseline primitive plus the oracle coupling.

    The primitive is integrated in the local frame at its default step,
    resampled to ``rate`` and returned in world coordinates.
    """
    tau = baseline.tau_demo if tau is None else float(tau)
    demo_id = demo_id or f"{setting.setting_id}"
    frame = build_frame(setting.start, setting.goal, gravity)
    local = setting.in_frame(frame)
    goal_local = frame.to_local(setting.goal)
    if np.linalg.norm(goal_local - baseline.g_demo) > 1e-3:
        raise TargetError(f"{demo_id}: setting start/goal do not match the baseline primitive")
    if np.max(local.cloud[:, 0]) > goal_local[0]:
        coupling = None
    else:
        coupling = lambda st: repulsion(st.x, st.v, local, params)
    try:
        res = unroll(baseline, np.zeros(3), goal_local, tau, coupling_fn=coupling)
    except IntegrationError as exc:
        raise GenerationError(f"{demo_id}: oracle unroll failed at step {exc.step}") from exc
    bound = params.workspace * max(np.linalg.norm(goal_local), 1e-6)
    if np.max(np.linalg.norm(res.x, axis=1)) > bound:
        raise GenerationError(f"{demo_id}: oracle trajectory left the workspace")
    t = _samples(tau, rate)
    # the fine grid may stop a hair short of tau
    t = np.minimum(t, res.t[-1])
    interp = lambda arr: np.column_stack([np.interp(t, res.t, arr[:, k]) for k in range(3)])
    return Demonstration(
        t=t,
        x=frame.to_world(interp(res.x)),
        xd=frame.vec_to_world(interp(res.xd)),
        xdd=frame.vec_to_world(interp(res.xdd)),
        tau=tau, start=setting.start, goal=setting.goal, setting=setting, demo_id=demo_id,
        meta={"gamma": params.gamma, "beta": params.beta, "bias": params.bias},
    )


@dataclass(frozen=True)
class Scene:
    """Start, goal and duration shared by every demonstration."""

    start: tuple = (0.40, -0.30, 0.20)
    goal: tuple = (0.55, 0.25, 0.30)
    tau: float = 1.5
    gravity: tuple = GRAVITY

    @property
    def frame(self):
        return build_frame(self.start, self.goal, self.gravity)

    @property
    def length(self):
        return float(np.linalg.norm(np.subtract(self.goal, self.start)))


#: obstacle sizes per kind (sphere radius, cube half-extent, cylinder radius/half-height)
OBSTACLE_DIMS = {"sphere": (0.05,), "cube": (0.045,), "cylinder": (0.04, 0.06)}

TRAIN_X_FRACTIONS = (0.3, 0.42, 0.54, 0.66)
# (radius m, angle deg) of lateral offsets in the local y-z plane
TRAIN_OFFSETS = (
    (0.0, 0.0),
    (0.035, 45.0), (0.035, 135.0), (0.035, 225.0), (0.035, 315.0),
    (0.08, 90.0), (0.08, 210.0), (0.08, 330.0),
    (0.16, 0.0), (0.16, 180.0),
)
UNSEEN_X_FRACTIONS = tuple(np.linspace(0.25, 0.65, 7))
#: lateral grid spacing of the unseen grid as a fraction of the obstacle's radial size
UNSEEN_SPACING = 0.8


def _setting_at(scene, kind, local_center, setting_id, density, seed):
    frame = scene.frame
    return make_setting(kind, frame.to_world(local_center), OBSTACLE_DIMS[kind], scene.start,
                        scene.goal, density=density, seed=seed, setting_id=setting_id)


def training_settings(kind, scene=Scene(), density=100.0, seed=0):
    """The 40 training obstacle placements for one obstacle kind."""
    L = scene.length
    out = []
    for i, fx in enumerate(TRAIN_X_FRACTIONS):
        for j, (rad, deg) in enumerate(TRAIN_OFFSETS):
            th = math.radians(deg)
            c = np.array([fx * L, rad * math.cos(th), rad * math.sin(th)])
            out.append(_setting_at(scene, kind, c, f"{kind}-{i * len(TRAIN_OFFSETS) + j:02d}", density, seed))
    return out


def unseen_offsets(kind):
    """Lateral offsets (local y and z) of the unseen grid for one obstacle kind."""
    step = UNSEEN_SPACING * OBSTACLE_DIMS[kind][0]
    return (-step, 0.0, step)


def unseen_grid(kind="sphere", scene=Scene(), density=100.0, seed=0):
    """The 7 x 3 x 3 grid of obstacle placements hugging the baseline path."""
    L = scene.length
    offsets = unseen_offsets(kind)
    out = []
    for i, fx in enumerate(UNSEEN_X_FRACTIONS):
        for dy in offsets:
            for dz in offsets:
                c = np.array([fx * L, dy, dz])
                out.append(_setting_at(scene, kind, c, f"unseen-{kind}-{len(out):02d}", density, seed))
    return out


def demo_durations(tau, count, spread=0.2):
    """Durations of repeated demonstrations of one setting, evenly spread over ``tau * (1 +- spread)``."""
    if count == 1:
        return np.array([tau])
    return tau * np.linspace(1.0 - spread, 1.0 + spread, count)
