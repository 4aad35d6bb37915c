"""Discrete movement primitives: canonical system, transformation system,
Gaussian-basis forcing term and imitation fitting.

All three degrees of freedom share one canonical system. The transformation
system is written in terms of the scaled velocity ``v = tau * xdot``::

    tau * vdot = alpha_v * (beta_v * (g - x) - v) + a * f(s) + C
    tau * xdot = v
    tau * sdot = -alpha_s * s

and integrated with explicit Euler (velocity first, then position with the
updated velocity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, FitError, IntegrationError

#: Default number of integration samples over one movement duration.
DEFAULT_STEPS = 1000

SUM_UNDERFLOW = 1e-10
DEGENERATE_SPAN = 1e-6


def _basis_layout(n_basis, alpha_s):
    if n_basis < 1:
        raise ConfigError("n_basis must be >= 1")
    if n_basis == 1:
        return np.array([1.0]), np.array([1.0])
    centers = np.exp(-alpha_s * np.arange(n_basis) / (n_basis - 1))
    widths = np.empty(n_basis)
    widths[:-1] = 1.0 / np.diff(centers) ** 2
    widths[-1] = widths[-2]
    return centers, widths


@dataclass(frozen=True, eq=False)
class DmpParams:
    """Gains and basis layout shared by every DOF of a primitive.

    ``centers`` and ``widths`` default to an even covering of the exponential
    phase decay: ``c_i = exp(-alpha_s * i / (N - 1))`` and
    ``h_i = 1 / (c_{i+1} - c_i)^2``.
    """

    alpha_v: float = 25.0
    beta_v: float = 6.25
    alpha_s: float = 25.0 / 3.0
    n_basis: int = 25
    centers: Optional[np.ndarray] = None
    widths: Optional[np.ndarray] = None
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        for name in ("alpha_v", "beta_v", "alpha_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive and finite, got {value}")
        if self.n_steps < 2:
            raise ConfigError("n_steps must be >= 2")
        centers, widths = _basis_layout(int(self.n_basis), self.alpha_s)
        if self.centers is not None:
            centers = np.asarray(self.centers, dtype=float)
        if self.widths is not None:
            widths = np.asarray(self.widths, dtype=float)
        if centers.shape != (self.n_basis,) or widths.shape != (self.n_basis,):
            raise ConfigError("centers and widths must both have n_basis entries")
        if np.any(widths <= 0) or np.any(np.diff(centers) >= 0):
            raise ConfigError("widths must be positive and centers strictly decreasing")
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "n_basis", int(self.n_basis))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)

    def default_dt(self, tau):
        return tau / (self.n_steps - 1)

    def to_dict(self):
        return {
            "alpha_v": self.alpha_v,
            "beta_v": self.beta_v,
            "alpha_s": self.alpha_s,
            "n_basis": self.n_basis,
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "n_steps": self.n_steps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Dmp:
    """A fitted three-DOF primitive.

    Attributes
    ----------
    params : DmpParams
    weights : ndarray, shape (3, n_basis)
    x0_demo, g_demo : ndarray, shape (3,)
        Start and goal of the demonstrations the weights were fitted on.
    tau_demo : float
        Duration of the (first) demonstration, seconds.
    fit_nmse : ndarray or None
        Per-DOF residual NMSE of the forcing-term regression.
    """

    params: DmpParams
    weights: np.ndarray
    x0_demo: np.ndarray
    g_demo: np.ndarray
    tau_demo: float
    fit_nmse: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (3, self.params.n_basis):
            raise DomainError(f"weights must have shape (3, {self.params.n_basis}), got {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "x0_demo", np.array(self.x0_demo, dtype=float).reshape(3))
        object.__setattr__(self, "g_demo", np.array(self.g_demo, dtype=float).reshape(3))
        object.__setattr__(self, "tau_demo", float(self.tau_demo))

    @classmethod
    def zeros(cls, params=None, x0=(0, 0, 0), g=(1, 0, 0), tau=1.0):
        params = params or DmpParams()
        return cls(params, np.zeros((3, params.n_basis)), x0, g, tau)


@dataclass(frozen=True)
class PhaseState:
    s: float = 1.0
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class TransformState:
    """Position ``x``, scaled velocity ``v = tau * xdot`` and phase."""

    x: np.ndarray
    v: np.ndarray
    phase: PhaseState = field(default_factory=PhaseState)


@dataclass(eq=False)
class UnrollResult:
    """An integrated trajectory with per-step diagnostics.

    ``xd`` is the physical velocity (m/s), not the scaled one. ``ct`` holds the
    coupling term actually applied at each step; ``ct_raw`` (when a guarded
    model drove the unroll) holds the network output before the guards.
    Coupling terms are expressed in the coordinates the primitive was
    integrated in, which for :mod:`dmpcouple.rollout` is the local frame.
    """

    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    xdd: np.ndarray
    ct: np.ndarray
    a: np.ndarray
    tau: float
    goal: np.ndarray
    ct_raw: Optional[np.ndarray] = None
    sdist: Optional[np.ndarray] = None
    frame: Optional[object] = None
    unsafe: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


def _check_phase(s):
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise DomainError("phase must be finite")
    return s


def basis_activations(s, params):
    """Gaussian basis activations ``exp(-h_i (s - c_i)^2)``.

    ``s`` may be a scalar or an array; the basis index is the last axis.
    """
    s = _check_phase(s)
    return np.exp(-params.widths * (s[..., None] - params.centers) ** 2)


def normalized_basis(s, params):
    """Phase-gated normalized basis ``s * psi_i / sum(psi)``; zero where the sum underflows."""
    psi = basis_activations(s, params)
    total = psi.sum(axis=-1, keepdims=True)
    safe = np.where(total < SUM_UNDERFLOW, 1.0, total)
    out = psi / safe * np.asarray(s, dtype=float)[..., None]
    return np.where(total < SUM_UNDERFLOW, 0.0, out)


def forcing_term(s, dmp):
    """Forcing term per DOF; shape ``(3,)`` for scalar ``s`` or ``(..., 3)``."""
    return normalized_basis(s, dmp.params) @ dmp.weights.T


def _check_steps(tau, dt, params):
    if not (tau > 0 and dt > 0 and math.isfinite(tau) and math.isfinite(dt)):
        raise ConfigError(f"tau and dt must be positive, got tau={tau}, dt={dt}")
    if dt >= tau:
        raise ConfigError(f"dt ({dt}) must be smaller than tau ({tau})")
    if params.alpha_s * dt / tau >= 1.0:
        raise ConfigError("alpha_s * dt / tau must be < 1 to keep the phase positive")


def canonical_step(state, tau, dt, params):
    _check_steps(tau, dt, params)
    s = state.s + dt * (-params.alpha_s * state.s / tau)
    return PhaseState(s=s, t=state.t + dt)


def phase_at(t, tau, params, dt=None):
    """Phase of the Euler-discretized canonical system at time ``t``.

    Closed form of the recursion used by :func:`canonical_step`:
    ``s(t) = (1 - alpha_s dt / tau) ** (t / dt)``. On the integration grid it
    reproduces the iterated phase; as ``dt -> 0`` it tends to
    ``exp(-alpha_s t / tau)``.
    """
    if dt is None:
        dt = params.default_dt(tau)
    _check_steps(tau, dt, params)
    t = np.asarray(t, dtype=float)
    return np.exp((t / dt) * math.log1p(-params.alpha_s * dt / tau))


def scale_factor(dmp, start, goal):
    """Per-DOF amplitude ratio ``(g - x0) / (g_demo - x0_demo)``, 1 where the demo span is degenerate."""
    span_demo = dmp.g_demo - dmp.x0_demo
    span = np.asarray(goal, dtype=float) - np.asarray(start, dtype=float)
    degenerate = np.abs(span_demo) < DEGENERATE_SPAN
    return np.where(degenerate, 1.0, span / np.where(degenerate, 1.0, span_demo))


def scaled_acceleration(x, v, s, dmp, goal, a, coupling):
    """Right-hand side ``tau * vdot`` of the transformation system."""
    p = dmp.params
    return p.alpha_v * (p.beta_v * (goal - x) - v) + a * forcing_term(s, dmp) + coupling


def transformation_step(state, dmp, goal, a, coupling, tau, dt):
    coupling = np.asarray(coupling, dtype=float)
    if not np.all(np.isfinite(coupling)):
        raise IntegrationError("non-finite coupling term")
    phase = canonical_step(state.phase, tau, dt, dmp.params)
    vdot = scaled_acceleration(state.x, state.v, state.phase.s, dmp, np.asarray(goal, float), a, coupling) / tau
    v = state.v + dt * vdot
    x = state.x + dt * v / tau
    return TransformState(x=x, v=v, phase=phase)


def n_samples(duration, dt):
    """Number of states covering ``[0, duration]`` at step ``dt`` (``ceil(duration/dt) + 1``)."""
    return int(math.ceil(duration / dt - 1e-9)) + 1


def unroll(dmp, start, goal, tau, dt=None, coupling_fn: Optional[Callable] = None, duration=None):
    """Integrate the primitive from ``start`` towards ``goal``.

    Parameters
    ----------
    coupling_fn : callable, optional
        ``coupling_fn(state) -> (3,)`` evaluated at every step; no coupling
        when omitted.
    duration : float, optional
        Integration horizon; defaults to ``tau``.

    Returns
    -------
    UnrollResult
    """
    dt = dmp.params.default_dt(tau) if dt is None else dt
    _check_steps(tau, dt, dmp.params)
    duration = tau if duration is None else duration
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    a = scale_factor(dmp, start, goal)
    n = n_samples(duration, dt)

    out = {k: np.empty((n, 3)) for k in ("x", "xd", "xdd", "ct")}
    s_hist = np.empty(n)
    t_hist = np.empty(n)
    state = TransformState(x=start.copy(), v=np.zeros(3), phase=PhaseState())
    zero = np.zeros(3)
    for k in range(n):
        ct = zero if coupling_fn is None else np.asarray(coupling_fn(state), dtype=float)
        if not (np.all(np.isfinite(ct)) and np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v))):
            raise IntegrationError(f"non-finite state at step {k}", step=k)
        vdot = scaled_acceleration(state.x, state.v, state.phase.s, dmp, goal, a, ct) / tau
        out["x"][k] = state.x
        out["xd"][k] = state.v / tau
        out["xdd"][k] = vdot / tau
        out["ct"][k] = ct
        s_hist[k] = state.phase.s
        t_hist[k] = state.phase.t
        if k + 1 < n:
            v = state.v + dt * vdot
            state = TransformState(
                x=state.x + dt * v / tau,
                v=v,
                phase=canonical_step(state.phase, tau, dt, dmp.params),
            )
    return UnrollResult(
        t=t_hist, s=s_hist, a=a, tau=float(tau), goal=goal, **out,
    )


def _validate_demo(demo, params):
    name = getattr(demo, "demo_id", "demo")
    if len(demo.t) < params.n_basis + 2:
        raise FitError(f"{name}: {len(demo.t)} samples, need at least {params.n_basis + 2}")
    if not (demo.tau > 0 and demo.t[-1] - demo.t[0] > 0):
        raise FitError(f"{name}: zero duration")
    if np.any(np.diff(demo.t) <= 0):
        raise FitError(f"{name}: timestamps not strictly increasing")
    for arr in (demo.x, demo.xd, demo.xdd):
        if not np.all(np.isfinite(arr)):
            raise FitError(f"{name}: non-finite samples")


def forcing_targets(demo, params, x0_ref=None, g_ref=None):
    """Resample a demonstration onto the phase grid and return ``(s, f_target)``.

    ``f_target`` is divided by the demo's amplitude ratio relative to the
    reference start/goal, so several demonstrations can be stacked.
    """
    _validate_demo(demo, params)
    n = params.n_steps
    t_grid = np.linspace(0.0, demo.tau, n)
    cols = lambda arr: np.column_stack([np.interp(t_grid, demo.t, arr[:, d]) for d in range(3)])
    x, xd, xdd = cols(demo.x), cols(demo.xd), cols(demo.xdd)
    s = phase_at(t_grid, demo.tau, params)
    tau = demo.tau
    f = tau**2 * xdd - params.alpha_v * (params.beta_v * (demo.goal - x) - tau * xd)
    if x0_ref is not None:
        span_ref = np.asarray(g_ref) - np.asarray(x0_ref)
        span = demo.goal - demo.start
        ok = np.abs(span_ref) >= DEGENERATE_SPAN
        a = np.where(ok & (np.abs(span) >= DEGENERATE_SPAN), span / np.where(ok, span_ref, 1.0), 1.0)
        f = f / a
    return s, f


def fit_forcing_weights(demos, params=None, ridge=1e-8):
    """Fit forcing weights to one or more demonstrations by ridge regression.

    Every demonstration is resampled onto the phase grid of ``params.n_steps``
    points, its forcing target ``tau^2 xdd - alpha_v (beta_v (g - x) - tau xd)``
    computed, and all demonstrations are stacked into one regularized
    least-squares problem per DOF. The first demonstration fixes
    ``x0_demo``, ``g_demo`` and ``tau_demo``.
    """
    params = params or DmpParams()
    demos = list(demos)
    if not demos:
        raise FitError("no demonstrations")
    ref = demos[0]
    phis, targets = [], []
    for demo in demos:
        s, f = forcing_targets(demo, params, ref.start, ref.goal)
        phis.append(normalized_basis(s, params))
        targets.append(f)
    phi = np.vstack(phis)
    F = np.vstack(targets)
    A = phi.T @ phi + ridge * np.eye(params.n_basis)
    W = np.linalg.solve(A, phi.T @ F)
    resid = F - phi @ W
    var = F.var(axis=0)
    # DOFs without motion (round-off variance only) report 0
    live = var > 1e-12 * max(float(var.max()), 1e-300)
    fit_nmse = np.where(live, (resid**2).mean(axis=0) / np.where(live, var, 1.0), 0.0)
    return Dmp(params=params, weights=W.T, x0_demo=ref.start, g_demo=ref.goal, tau_demo=ref.tau,
               fit_nmse=fit_nmse)
