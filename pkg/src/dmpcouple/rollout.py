"""Unrolling a baseline primitive in the local frame of a scene, optionally
driven by a trained coupling network and the safety guards.

The hot loop runs in the compiled ``_kernels`` extension when it is
importable and in ``_kernels_py`` otherwise; ``BACKEND`` names the one in
use and ``set_backend`` switches explicitly.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from . import _kernels_py
from .dmp import UnrollResult, n_samples, scale_factor, unroll
from .errors import ConfigError, IntegrationError
from .frame import GRAVITY, build_frame
from .guards import GuardConfig, obstacle_extent
from .network import SIG_EPS, unpack
from .obstacles import signed_distance

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None and os.environ.get("DMPCOUPLE_BACKEND") != "python" else "python"

#: unrolls run this much past tau so convergence can be judged after the nominal end
DEFAULT_HORIZON = 1.05


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    global BACKEND
    if name not in _BACKENDS:
        raise ConfigError(f"backend {name!r} not available; have {available_backends()}")
    BACKEND = name


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def kernel_args(dmp, local_setting, model, tau, dt, n, a, goal_local, guards, x_obs):
    """Positional arguments of ``rollout_mlp`` for a scene already in the local frame."""
    from ._kernels_py import KIND_CODES

    (W1, b1), (W2, b2), (W3, b3) = unpack(model.theta)
    dims = np.zeros(3)
    dims[:len(local_setting.dims)] = local_setting.dims
    p = dmp.params
    return (
        _c(dmp.weights), _c(p.centers), _c(p.widths), (p.alpha_v, p.beta_v, p.alpha_s),
        _c(a), _c(goal_local), float(tau), float(dt), int(n),
        _c(local_setting.cloud), _c(local_setting.center), _c(local_setting.orientation),
        KIND_CODES[local_setting.kind], dims,
        _c(W1), _c(b1), _c(W2), _c(b2), _c(W3), _c(b3),
        _c(model.in_mean), _c(model.in_std), _c(model.out_lo), _c(model.out_hi),
        (int(guards.beyond_goal), int(guards.zero_x), int(guards.passing_decay)), float(guards.width),
        float(x_obs), float(goal_local[0]), SIG_EPS,
    )


def rollout(dmp, setting, model=None, tau=None, start=None, goal=None, guards=GuardConfig(),
            horizon=DEFAULT_HORIZON, dt=None, gravity=GRAVITY, backend=None):
    """Unroll ``dmp`` through ``setting``.

    Parameters
    ----------
    dmp : Dmp
        Baseline primitive fitted in local coordinates (start at the origin,
        goal on +x).
    setting : ObstacleSetting
        World scene; its ``start``/``goal`` are used unless overridden.
    model : CouplingModel, optional
        Coupling network. Without it the baseline is unrolled uncoupled.
    tau : float, optional
        Movement duration; defaults to the primitive's demonstration duration.
    guards : GuardConfig
        Output guards. A run with any guard disabled is stamped ``unsafe``.
    horizon : float
        Integrate until ``horizon * tau``.

    Returns
    -------
    UnrollResult
        Positions, velocities and accelerations in world coordinates; coupling
        terms in the local frame; signed obstacle distance per step.
    """
    tau = dmp.tau_demo if tau is None else float(tau)
    start = setting.start if start is None else np.asarray(start, float)
    goal = setting.goal if goal is None else np.asarray(goal, float)
    frame = build_frame(start, goal, gravity)
    local = setting.in_frame(frame)
    goal_local = frame.to_local(goal)
    dt = dmp.params.default_dt(tau) if dt is None else dt
    n = n_samples(horizon * tau, dt)

    if model is None:
        res = unroll(dmp, np.zeros(3), goal_local, tau, dt=dt, duration=horizon * tau)
        res.x = frame.to_world(res.x)
        res.xd = frame.vec_to_world(res.xd)
        res.xdd = frame.vec_to_world(res.xdd)
        res.goal = goal
        res.frame = frame
        res.sdist = signed_distance(setting, res.x)
        res.meta["backend"] = "none"
        return res

    a = scale_factor(dmp, np.zeros(3), goal_local)
    if a.shape != (3,):
        raise ConfigError("scale factor must be 3-D")
    x_obs = obstacle_extent(frame, setting)
    name = backend or BACKEND
    kernel = _BACKENDS[name]
    args = kernel_args(dmp, local, model, tau, dt, n, a, goal_local, guards, x_obs)
    X, V, VD, S, RAW, CT, SD = kernel.rollout_mlp(*args)
    if len(X) < n:
        raise IntegrationError(f"non-finite state at step {len(X) - 1}", step=len(X) - 1)
    t = np.arange(n) * dt
    return UnrollResult(
        t=t, s=np.asarray(S), a=a, tau=tau, goal=goal,
        x=frame.to_world(X), xd=frame.vec_to_world(V / tau), xdd=frame.vec_to_world(VD / tau),
        ct=np.asarray(CT), ct_raw=np.asarray(RAW), sdist=np.asarray(SD), frame=frame,
        unsafe=not guards.enabled, meta={"backend": name},
    )


def fit_baseline(demos, params=None, gravity=GRAVITY, ridge=1e-8):
    """Fit a baseline primitive in the local frame of its demonstrations.

    Each demonstration is rotated into the frame spanned by its own start
    and goal, so the primitive starts at the origin and ends on +x.
    """
    from .dmp import fit_forcing_weights

    local = [d.in_frame(build_frame(d.start, d.goal, gravity)) for d in demos]
    return fit_forcing_weights(local, params, ridge=ridge)
