import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmpcouple.demos import Demonstration
from dmpcouple.dmp import (
    Dmp,
    DmpParams,
    PhaseState,
    TransformState,
    basis_activations,
    canonical_step,
    fit_forcing_weights,
    forcing_term,
    n_samples,
    phase_at,
    scale_factor,
    transformation_step,
    unroll,
)
from dmpcouple.errors import ConfigError, DomainError, FitError, IntegrationError
from dmpcouple.oracle import gen_baseline


def random_dmp(rng, scale=200.0, params=None):
    params = params or DmpParams()
    return Dmp(params, rng.uniform(-scale, scale, (3, params.n_basis)), np.zeros(3), np.ones(3), 1.0)


# -- params and basis ----------------------------------------------------------

def test_default_params_are_critically_damped():
    p = DmpParams()
    assert p.beta_v == p.alpha_v / 4
    assert p.n_basis == 25
    assert np.all(np.diff(p.centers) < 0)
    assert p.centers[0] == 1.0
    assert np.all(p.widths > 0)
    assert p.widths[-1] == p.widths[-2]
    np.testing.assert_allclose(p.widths[:-1], 1.0 / np.diff(p.centers) ** 2)


@pytest.mark.parametrize("kwargs", [
    {"alpha_v": 0.0}, {"beta_v": -1.0}, {"alpha_s": float("nan")}, {"n_steps": 1},
    {"n_basis": 3, "centers": [0.1, 0.5, 1.0]}, {"n_basis": 2, "widths": [1.0, -1.0]},
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ConfigError):
        DmpParams(**kwargs)


def test_activation_is_one_at_center():
    p = DmpParams()
    psi = basis_activations(p.centers[4], p)
    assert psi[4] == 1.0
    assert np.all((psi >= 0) & (psi <= 1))


def test_activation_value_one_width_away():
    p = DmpParams(n_basis=1, centers=[0.5], widths=[25.0])
    assert basis_activations(0.7, p)[0] == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert basis_activations(0.7, p)[0] == pytest.approx(0.367879, abs=1e-6)


def test_activation_far_from_all_centers():
    p = DmpParams(n_basis=2, centers=[0.9, 0.5], widths=[25.0, 30.0])
    assert np.all(basis_activations(1.9, p) <= math.exp(-25.0) * (1 + 1e-12))


def test_activation_rejects_non_finite_phase():
    with pytest.raises(DomainError):
        basis_activations(float("nan"), DmpParams())


def test_forcing_term_trivial_cases():
    dmp = Dmp.zeros()
    assert np.all(forcing_term(0.7, dmp) == 0)
    rng = np.random.default_rng(0)
    assert np.all(forcing_term(0.0, random_dmp(rng)) == 0)


def test_forcing_term_single_basis_collapses_to_weight_times_phase():
    p = DmpParams(n_basis=1, centers=[1.0], widths=[1.0])
    dmp = Dmp(p, [[2.0], [0.0], [-4.0]], np.zeros(3), np.ones(3), 1.0)
    np.testing.assert_allclose(forcing_term(0.5, dmp), [1.0, 0.0, -2.0], atol=1e-15)


def test_forcing_term_underflow_guard_returns_exact_zero():
    p = DmpParams(n_basis=2, centers=[1.0, 0.9], widths=[1e6, 1e6])
    dmp = Dmp(p, np.ones((3, 2)), np.zeros(3), np.ones(3), 1.0)
    assert np.all(forcing_term(0.1, dmp) == 0.0)


@given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_forcing_bounded_by_phase_times_max_weight(s, seed):
    dmp = random_dmp(np.random.default_rng(seed))
    f = forcing_term(s, dmp)
    assert np.all(np.abs(f) <= s * np.abs(dmp.weights).max() * (1 + 1e-12) + 1e-300)


# -- canonical system ---------------------------------------------------------------

def test_canonical_step_one_euler_step():
    p = DmpParams()
    st1 = canonical_step(PhaseState(), tau=1.0, dt=0.001, params=p)
    assert st1.s == pytest.approx(1 - 25 / 3000, abs=1e-15)
    assert st1.s == pytest.approx(0.991667, abs=1e-6)
    assert st1.t == 0.001


def test_phase_at_tau_matches_exponential_within_euler_error():
    p = DmpParams()
    tau = 1.0
    dt = p.default_dt(tau)
    s = phase_at(tau, tau, p)
    # first-order Euler error of log s after tau/dt steps
    bound = p.alpha_s**2 * dt / tau
    assert abs(math.log(s) + p.alpha_s) < bound


def test_phase_at_reproduces_iterated_steps():
    p = DmpParams()
    tau, dt = 1.3, 1.3 / 999
    state = PhaseState()
    for k in range(1, 1000):
        state = canonical_step(state, tau, dt, p)
        assert phase_at(k * dt, tau, p, dt) == pytest.approx(state.s, rel=1e-12)


def test_canonical_step_rejects_large_dt():
    with pytest.raises(ConfigError):
        canonical_step(PhaseState(), tau=1.0, dt=1.0, params=DmpParams())
    with pytest.raises(ConfigError):
        canonical_step(PhaseState(), tau=1.0, dt=0.5, params=DmpParams())


def test_joint_scaling_of_tau_and_dt_keeps_phase_sequence():
    p = DmpParams()
    a, b = PhaseState(), PhaseState()
    for _ in range(500):
        a = canonical_step(a, 1.0, 0.002, p)
        b = canonical_step(b, 2.0, 0.004, p)
        assert a.s == b.s


@given(st.floats(0.1, 10.0), st.integers(10, 5000))
@settings(max_examples=50)
def test_phase_positive_and_strictly_decreasing(tau, steps):
    p = DmpParams()
    dt = tau / steps
    if p.alpha_s * dt / tau >= 1:
        return
    s = phase_at(np.arange(steps + 1) * dt, tau, p, dt)
    assert s[0] == 1.0
    assert np.all(s > 0)
    assert np.all(np.diff(s) < 0)


# -- transformation system -------------------------------------------------------------

def test_fixed_point_at_goal():
    dmp = Dmp.zeros()
    g = np.array([1.0, 0.0, 0.0])
    state = TransformState(g.copy(), np.zeros(3), PhaseState(s=1e-9))
    nxt = transformation_step(state, dmp, g, np.ones(3), np.zeros(3), 1.0, 0.001)
    np.testing.assert_array_equal(nxt.x, g)
    np.testing.assert_array_equal(nxt.v, 0)


def test_coupling_enters_as_acceleration_over_tau_squared():
    dmp = Dmp.zeros()
    g = np.array([1.0, 0.0, 0.0])
    tau, dt = 2.0, 0.001
    state = TransformState(g.copy(), np.zeros(3), PhaseState())
    nxt = transformation_step(state, dmp, g, np.ones(3), [0.0, 10.0, 0.0], tau, dt)
    # v = tau * xdot, so the physical acceleration is (v' - v) / (dt * tau)
    np.testing.assert_allclose(nxt.v / (dt * tau), [0.0, 10.0 / tau**2, 0.0], rtol=1e-12)


def test_non_finite_coupling_rejected():
    state = TransformState(np.zeros(3), np.zeros(3), PhaseState())
    with pytest.raises(IntegrationError):
        transformation_step(state, Dmp.zeros(), np.ones(3), np.ones(3), [np.nan, 0, 0], 1.0, 0.01)


def test_unforced_unroll_converges_without_overshoot():
    dmp = Dmp.zeros()
    start, goal = np.array([0.2, -0.1, 0.4]), np.array([1.0, 0.5, -0.2])
    res = unroll(dmp, start, goal, tau=1.0, duration=2.0)
    proj = (res.x - start) @ (goal - start) / np.sum((goal - start) ** 2)
    # critically damped linear dynamics: monotone approach, no overshoot beyond integration error
    assert proj.max() <= 1 + 1e-3
    assert np.linalg.norm(res.x[-1] - goal) < 1e-4


def test_unroll_sample_count_and_step_error():
    dmp = Dmp.zeros()
    res = unroll(dmp, np.zeros(3), np.ones(3), tau=1.0, dt=0.01)
    assert len(res) == n_samples(1.0, 0.01) == 101
    assert res.s[0] == 1.0 and res.t[0] == 0.0
    calls = []

    def bad(state):
        calls.append(state)
        return np.array([0.0, np.inf if len(calls) == 7 else 0.0, 0.0])

    with pytest.raises(IntegrationError) as err:
        unroll(dmp, np.zeros(3), np.ones(3), tau=1.0, dt=0.01, coupling_fn=bad)
    assert err.value.step == 6


def test_scale_factor_guard_for_degenerate_demo_span():
    dmp = Dmp(DmpParams(), np.zeros((3, 25)), [0, 0, 0], [2.0, 1e-9, 0.0], 1.0)
    np.testing.assert_allclose(scale_factor(dmp, [0, 0, 0], [1.0, 5.0, 3.0]), [0.5, 1.0, 1.0])


_MIN_JERK_DMP = fit_forcing_weights([gen_baseline(np.zeros(3), [0.5, 0.2, 0.1], 1.5)])


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_goal_convergence_for_random_start_goal(coords, seed):
    start, goal = np.array(coords[:3]), np.array(coords[3:])
    L = np.linalg.norm(goal - start)
    if L < 1e-3:
        return
    dmp = _MIN_JERK_DMP
    res = unroll(dmp, start, goal, tau=1.0, duration=1.05)
    assert np.linalg.norm(res.x[-1] - goal) < 1e-3 * L


@pytest.mark.parametrize("k", [0.5, 2.0, 4.0])
def test_temporal_scaling_gives_identical_positions(k):
    dmp = random_dmp(np.random.default_rng(4))
    a = unroll(dmp, np.zeros(3), np.array([0.3, 0.1, -0.2]), tau=1.0, dt=0.002)
    b = unroll(dmp, np.zeros(3), np.array([0.3, 0.1, -0.2]), tau=k, dt=k * 0.002)
    assert len(a) == len(b)
    np.testing.assert_allclose(a.x, b.x, rtol=0, atol=1e-9)


# -- imitation ------------------------------------------------------------------

def test_fit_reproduces_min_jerk_demo():
    start, goal, tau = np.array([0.1, 0.2, 0.3]), np.array([0.6, -0.1, 0.5]), 1.2
    demo = gen_baseline(start, goal, tau)
    dmp = fit_forcing_weights([demo])
    res = unroll(dmp, start, goal, tau)
    # compare at the demo timestamps
    idx = np.round(demo.t / (tau / 999)).astype(int)
    err = np.linalg.norm(res.x[idx] - demo.x, axis=1).max()
    assert err < 1e-2 * np.linalg.norm(goal - start)


def test_fit_round_trip_on_unrolled_primitive():
    rng = np.random.default_rng(11)
    src = random_dmp(rng)
    ref = unroll(src, src.x0_demo, src.g_demo, 1.0)
    demo = Demonstration(t=ref.t, x=ref.x, xd=ref.xd, xdd=ref.xdd, tau=1.0,
                         start=src.x0_demo, goal=src.g_demo)
    fit = fit_forcing_weights([demo])
    again = unroll(fit, src.x0_demo, src.g_demo, 1.0)
    nmse = ((again.x - ref.x) ** 2).mean(0) / ref.x.var(0)
    assert np.all(nmse < 1e-3)


def test_zero_motion_demo_gives_zero_weights():
    t = np.linspace(0, 1, 40)
    x = np.tile([0.3, 0.3, 0.3], (40, 1))
    demo = Demonstration.from_positions(t, x)
    dmp = fit_forcing_weights([demo])
    # interpolation round-off is the only forcing signal
    np.testing.assert_allclose(dmp.weights, 0.0, atol=1e-9)


def test_degenerate_demos_raise_fit_error_naming_the_demo():
    t = np.linspace(0, 1, 10)
    short = Demonstration.from_positions(t, np.random.default_rng(0).random((10, 3)), demo_id="short")
    with pytest.raises(FitError, match="short"):
        fit_forcing_weights([short])
    t = np.linspace(0, 1, 40)
    zero = Demonstration(t=t, x=np.zeros((40, 3)), xd=np.zeros((40, 3)), xdd=np.zeros((40, 3)),
                         tau=0.0, demo_id="instant")
    with pytest.raises(FitError, match="instant"):
        fit_forcing_weights([zero])
    with pytest.raises(FitError):
        fit_forcing_weights([])


def test_fit_stacks_several_demos_of_different_duration():
    start, goal = np.zeros(3), np.array([0.4, 0.1, 0.0])
    demos = [gen_baseline(start, goal, tau) for tau in (1.2, 1.5, 1.8)]
    single = fit_forcing_weights(demos[1:2])
    stacked = fit_forcing_weights(demos)
    # minimum-jerk profiles are duration-invariant in phase, so both fits replay the same path
    a = unroll(single, start, goal, 1.5).x
    b = unroll(stacked, start, goal, 1.5).x
    assert np.abs(a - b).max() < 1e-3 * np.linalg.norm(goal - start)
