import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmpcouple.dmp import unroll
from dmpcouple.errors import DomainError
from dmpcouple.features import (
    FEATURE_NAMES,
    N_FEATURES,
    FeatureVector,
    extract_features,
    feature_matrix,
    nearest_indices,
)
from dmpcouple.frame import build_frame, rotation_about
from dmpcouple.obstacles import (
    CLOUD_SLACK,
    ObstacleSetting,
    augment_cloud,
    make_setting,
    normalize_dims,
    signed_distance,
)

from conftest import random_rotation

START, GOAL = np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])


def _setting(kind, dims, center=(0.5, 0.0, 0.0), orientation=None, **kw):
    return make_setting(kind, center, dims, START, GOAL, orientation=orientation, **kw)


# -- clouds ------------------------------------------------------------------

def test_unit_sphere_cloud_on_surface():
    cloud = augment_cloud("sphere", np.zeros(3), None, (1.0,), density=10)
    assert len(cloud) >= 8
    np.testing.assert_allclose(np.linalg.norm(cloud, axis=1), 1.0, atol=1e-9)


def test_cube_cloud_on_surface():
    cloud = augment_cloud("cube", np.zeros(3), None, (0.5,), density=20)
    np.testing.assert_allclose(np.abs(cloud).max(axis=1), 0.5, atol=1e-9)


def test_cylinder_cloud_on_surface():
    cloud = augment_cloud("cylinder", np.zeros(3), None, (0.3, 0.6), density=20)
    radial = np.linalg.norm(cloud[:, :2], axis=1)
    on_side = np.isclose(radial, 0.3, atol=1e-9) & (np.abs(cloud[:, 2]) <= 0.6 + 1e-9)
    on_cap = np.isclose(np.abs(cloud[:, 2]), 0.6, atol=1e-9) & (radial <= 0.3 + 1e-9)
    assert np.all(on_side | on_cap)


@pytest.mark.parametrize("kind,dims", [("sphere", (0.05,)), ("cube", (0.045,)), ("cylinder", (0.04, 0.06))])
def test_point_count_grows_with_density(kind, dims):
    counts = [len(augment_cloud(kind, np.zeros(3), None, dims, density=d)) for d in (50, 100, 200, 400)]
    assert all(b > a for a, b in zip(counts, counts[1:]))
    assert counts[0] >= 8


def test_cloud_is_seed_deterministic():
    a = augment_cloud("sphere", np.zeros(3), None, (0.1,), seed=3)
    b = augment_cloud("sphere", np.zeros(3), None, (0.1,), seed=3)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind,dims", [("sphere", (0,)), ("cube", (-1,)), ("cylinder", (0.1,)), ("torus", (1,))])
def test_invalid_geometry_rejected(kind, dims):
    with pytest.raises(DomainError):
        normalize_dims(kind, dims)


def test_tiny_explicit_cloud_rejected():
    with pytest.raises(DomainError):
        ObstacleSetting("sphere", np.zeros(3), (1.0,), START, GOAL, cloud=np.zeros((2, 3)))


@given(st.sampled_from([("sphere", (0.05,)), ("cube", (0.03, 0.04, 0.05)), ("cylinder", (0.04, 0.06))]),
       st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_cloud_points_inside_analytic_geometry(kind_dims, seed):
    kind, dims = kind_dims
    s = _setting(kind, dims, orientation=random_rotation(np.random.default_rng(seed)), seed=seed % 1000)
    assert s.check_cloud() <= CLOUD_SLACK


# -- signed distance ------------------------------------------------------------

def test_sphere_distance_example():
    s = make_setting("sphere", np.zeros(3), (1.0,), START, GOAL, density=5)
    assert signed_distance(s, [2.0, 0, 0]) == pytest.approx(1.0)
    assert signed_distance(s, [0, 0, 0]) == pytest.approx(-1.0)


@pytest.mark.parametrize("kind,dims,inr", [("sphere", (0.3,), 0.3), ("cube", (0.2, 0.1, 0.3), 0.1),
                                           ("cylinder", (0.2, 0.15), 0.15)])
def test_center_distance_is_minus_inradius(kind, dims, inr):
    s = _setting(kind, dims, density=20)
    assert signed_distance(s, s.center) == pytest.approx(-inr)
    assert s.inradius == pytest.approx(inr)


def test_cube_and_cylinder_distance_examples():
    cube = make_setting("cube", np.zeros(3), (1.0,), START, GOAL, density=5)
    assert signed_distance(cube, [2, 2, 1]) == pytest.approx(math.sqrt(2))
    assert signed_distance(cube, [0.5, 0, 0]) == pytest.approx(-0.5)
    cyl = make_setting("cylinder", np.zeros(3), (1.0, 2.0), START, GOAL, density=5)
    assert signed_distance(cyl, [3, 0, 0]) == pytest.approx(2.0)
    assert signed_distance(cyl, [0, 0, 5]) == pytest.approx(3.0)
    assert signed_distance(cyl, [4, 0, 6]) == pytest.approx(5.0)


@given(st.sampled_from([("sphere", (0.2,)), ("cube", (0.15, 0.2, 0.25)), ("cylinder", (0.15, 0.25))]),
       st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_outside_distance_matches_dense_cloud(kind_dims, seed):
    kind, dims = kind_dims
    rng = np.random.default_rng(seed)
    s = make_setting(kind, np.zeros(3), dims, START, GOAL, orientation=random_rotation(rng), density=400)
    p = rng.normal(size=3)
    p *= rng.uniform(0.35, 1.0) / np.linalg.norm(p)
    d = float(signed_distance(s, p))
    brute = np.linalg.norm(s.cloud - p, axis=1).min()
    # surface samples sit at most a couple of grid cells apart
    resolution = 3.0 / s.density
    assert d > 0
    assert abs(d - brute) <= resolution


@given(st.integers(0, 2**32 - 1))
def test_signed_distance_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    s = _setting("cylinder", (0.1, 0.2), orientation=random_rotation(rng), density=20)
    Q, d = random_rotation(rng), rng.normal(size=3)
    p = rng.normal(size=(10, 3))
    moved = s.transformed(Q, d)
    np.testing.assert_allclose(signed_distance(moved, p @ Q.T + d), signed_distance(s, p), atol=1e-12)


# -- features ------------------------------------------------------------------

def test_feature_layout():
    assert N_FEATURES == 17 == len(FEATURE_NAMES)
    s = _setting("sphere", (0.1,), density=50)
    fv = extract_features(s, build_frame(START, GOAL), [0.2, 0.1, 0], [1, 0, 0], 1.0)
    arr = fv.as_array()
    assert arr.shape == (17,)
    again = FeatureVector.from_array(arr)
    np.testing.assert_array_equal(again.as_array(), arr)


def test_features_at_obstacle_center():
    s = _setting("cube", (0.1, 0.2, 0.3), density=30)
    fv = extract_features(s, build_frame(START, GOAL), s.center, [0.3, -1, 2], 1.5)
    np.testing.assert_array_equal(fv.center_rel, 0.0)
    assert fv.dist == pytest.approx(-0.1)


def test_angle_zero_when_heading_at_center():
    s = _setting("sphere", (0.1,), density=50)
    fv = extract_features(s, build_frame(START, GOAL), [0.1, 0.2, -0.1], s.center - [0.1, 0.2, -0.1], 1.0)
    assert fv.angle == pytest.approx(0.0, abs=1e-7)
    away = extract_features(s, build_frame(START, GOAL), [0.1, 0, 0], [-1, 0, 0], 1.0)
    assert away.angle == pytest.approx(math.pi)


def test_angle_convention_for_standstill():
    s = _setting("sphere", (0.1,), density=50)
    fv = extract_features(s, build_frame(START, GOAL), [0.1, 0.2, 0], [1e-9, 0, 0], 1.0)
    assert fv.angle == math.pi / 2


def test_tau_scales_velocity_feature():
    s = _setting("sphere", (0.1,), density=50)
    f = build_frame(START, GOAL)
    a = extract_features(s, f, [0.1, 0.2, 0], [0.5, 0.1, 0], 1.0)
    b = extract_features(s, f, [0.1, 0.2, 0], [0.5, 0.1, 0], 2.0)
    np.testing.assert_allclose(b.tau_vel, 2 * a.tau_vel)


def test_invalid_tau_and_empty_cloud():
    s = _setting("sphere", (0.1,), density=50)
    with pytest.raises(DomainError):
        extract_features(s, build_frame(START, GOAL), [0, 0, 0], [1, 0, 0], 0.0)


def test_nearest_points_sorted_with_index_tie_break():
    cloud = np.array([[2.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [3.0, 0, 0], [0, -1.0, 0]])
    idx = nearest_indices(cloud, np.zeros(3))
    np.testing.assert_array_equal(idx, [1, 2, 3])
    big = np.vstack([cloud] + [cloud + 10 * (k + 1) for k in range(5)])
    np.testing.assert_array_equal(nearest_indices(big, np.zeros(3)), [1, 2, 3])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_nearest_points_match_full_sort(seed):
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(rng.integers(3, 200), 3))
    p = rng.normal(size=3)
    d = np.linalg.norm(cloud - p, axis=1)
    np.testing.assert_array_equal(nearest_indices(cloud, p), np.argsort(d, kind="stable")[:3])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_features_invariant_under_rigid_scene_motion(seed):
    rng = np.random.default_rng(seed)
    kind, dims = [("sphere", (0.05,)), ("cube", (0.045,)), ("cylinder", (0.04, 0.06))][seed % 3]
    s = make_setting(kind, [0.5, 0.03, 0.01], dims, START, GOAL, orientation=random_rotation(rng))
    Q, d = random_rotation(rng), rng.normal(size=3)
    moved = s.transformed(Q, d)
    p, v = rng.uniform(-0.2, 1.2, 3), rng.normal(size=3)
    a = extract_features(s, build_frame(s.start, s.goal), p, v, 1.3).as_array()
    b = extract_features(moved, build_frame(moved.start, moved.goal, gravity=Q @ [0, 0, -1]),
                         Q @ p + d, Q @ v, 1.3).as_array()
    np.testing.assert_allclose(b, a, atol=1e-9)


def test_features_repeatable_bit_for_bit():
    s = _setting("cylinder", (0.04, 0.06))
    f = build_frame(START, GOAL)
    a = extract_features(s, f, [0.4, 0.02, 0.01], [1, 0.1, 0], 1.0).as_array()
    b = extract_features(s, f, [0.4, 0.02, 0.01], [1, 0.1, 0], 1.0).as_array()
    assert a.tobytes() == b.tobytes()


def test_features_match_at_equal_phase_under_tau_scaling(baseline):
    s = _setting("sphere", (0.05,), center=(0.5, 0.04, 0.0))
    goal = np.array([1.0, 0, 0])
    fr = build_frame(START, goal)
    a = unroll(baseline, START, goal, tau=1.0, dt=1.0 / 999)
    b = unroll(baseline, START, goal, tau=2.0, dt=2.0 / 999)
    fa = feature_matrix(s, fr, a.x[::50], a.xd[::50], 1.0)
    fb = feature_matrix(s, fr, b.x[::50], b.xd[::50], 2.0)
    np.testing.assert_allclose(fb, fa, atol=1e-6)
