"""Obstacle geometry: settings, surface point clouds and analytic signed distances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DomainError

KINDS = ("sphere", "cube", "cylinder")
CLOUD_SLACK = 1e-6
DEFAULT_DENSITY = 100.0  # points per meter
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def normalize_dims(kind, dims):
    dims = tuple(float(d) for d in np.atleast_1d(dims))
    if kind == "sphere":
        want = 1
    elif kind == "cube":
        if len(dims) == 1:
            dims = dims * 3
        want = 3
    elif kind == "cylinder":
        want = 2
    else:
        raise DomainError(f"unknown obstacle kind {kind!r}; expected one of {KINDS}")
    if len(dims) != want:
        raise DomainError(f"{kind} takes {want} dimension(s), got {len(dims)}")
    if not all(math.isfinite(d) and d > 0 for d in dims):
        raise DomainError(f"{kind} dimensions must be positive, got {dims}")
    return dims


def inradius(kind, dims):
    dims = normalize_dims(kind, dims)
    return min(dims)


def random_rotation(seed):
    """Deterministic proper rotation drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _sphere_points(r, density, seed):
    n = max(8, int(math.ceil(density**2 * 4.0 * math.pi * r**2)))
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(1.0 - z**2)
    theta = _GOLDEN_ANGLE * i
    u = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
    u = u @ random_rotation(seed).T
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return r * u


def _box_points(half, density):
    grids = [np.linspace(-h, h, max(2, int(math.ceil(density * 2 * h)) + 1)) for h in half]
    faces = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        g0, g1 = np.meshgrid(grids[others[0]], grids[others[1]], indexing="ij")
        for sign in (-1.0, 1.0):
            pts = np.empty((g0.size, 3))
            pts[:, axis] = sign * half[axis]
            pts[:, others[0]] = g0.ravel()
            pts[:, others[1]] = g1.ravel()
            faces.append(pts)
    pts = np.vstack(faces)
    _, keep = np.unique(np.round(pts, 12), axis=0, return_index=True)
    return pts[np.sort(keep)]


def _cylinder_points(r, hh, density):
    n_theta = max(8, int(math.ceil(density * 2 * math.pi * r)))
    n_z = max(2, int(math.ceil(density * 2 * hh)) + 1)
    theta = 2 * math.pi * np.arange(n_theta) / n_theta
    zs = np.linspace(-hh, hh, n_z)
    tt, zz = np.meshgrid(theta, zs, indexing="ij")
    side = np.column_stack([r * np.cos(tt.ravel()), r * np.sin(tt.ravel()), zz.ravel()])
    caps = []
    n_r = max(1, int(math.ceil(density * r)))
    for z in (-hh, hh):
        caps.append([[0.0, 0.0, z]])
        for k in range(1, n_r):
            rk = r * k / n_r
            m = max(6, int(math.ceil(density * 2 * math.pi * rk)))
            ang = 2 * math.pi * np.arange(m) / m
            caps.append(np.column_stack([rk * np.cos(ang), rk * np.sin(ang), np.full(m, z)]))
    return np.vstack([side] + [np.asarray(c) for c in caps])


def augment_cloud(kind, center, orientation, dims, density=DEFAULT_DENSITY, seed=0):
    """Quasi-uniform surface sampling of an obstacle, in world coordinates.

    The number of points scales with ``density`` (points per meter along each
    surface direction) and is at least 8. Sphere samples use a Fibonacci
    lattice rotated by a rotation drawn from ``seed``.
    """
    dims = normalize_dims(kind, dims)
    if not (math.isfinite(density) and density > 0):
        raise DomainError(f"density must be positive, got {density}")
    if kind == "sphere":
        local = _sphere_points(dims[0], density, seed)
    elif kind == "cube":
        local = _box_points(dims, density)
    else:
        local = _cylinder_points(dims[0], dims[1], density)
    R = np.eye(3) if orientation is None else np.asarray(orientation, dtype=float)
    return local @ R.T + np.asarray(center, dtype=float)


@dataclass(frozen=True, eq=False)
class ObstacleSetting:
    """A single-obstacle scene.

    ``orientation`` columns are the obstacle axes in world coordinates; the
    cylinder axis is the obstacle z-axis.
    """

    kind: str
    center: np.ndarray
    dims: tuple
    start: np.ndarray
    goal: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    cloud: Optional[np.ndarray] = None
    density: float = DEFAULT_DENSITY
    seed: int = 0
    setting_id: str = "setting"
    explicit_cloud: bool = False

    def __post_init__(self):
        dims = normalize_dims(self.kind, self.dims)
        object.__setattr__(self, "dims", dims)
        for name in ("center", "start", "goal"):
            v = np.array(getattr(self, name), dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        O = np.array(self.orientation, dtype=float).reshape(3, 3)
        if not np.allclose(O.T @ O, np.eye(3), atol=1e-9) or np.linalg.det(O) < 0:
            raise DomainError("orientation must be a proper rotation matrix")
        O.setflags(write=False)
        object.__setattr__(self, "orientation", O)
        if self.cloud is None:
            cloud = augment_cloud(self.kind, self.center, O, dims, self.density, self.seed)
        else:
            cloud = np.array(self.cloud, dtype=float).reshape(-1, 3)
            object.__setattr__(self, "explicit_cloud", True)
        if len(cloud) < 3:
            raise DomainError(f"{self.setting_id}: obstacle cloud needs at least 3 points, got {len(cloud)}")
        cloud.setflags(write=False)
        object.__setattr__(self, "cloud", cloud)

    @property
    def inradius(self):
        return min(self.dims)

    def check_cloud(self):
        """Largest signed distance of any cloud point; must not exceed the slack."""
        worst = float(np.max(signed_distance(self, self.cloud)))
        if worst > CLOUD_SLACK:
            raise DomainError(f"{self.setting_id}: cloud point outside obstacle by {worst:.3g} m")
        return worst

    def moved(self, offset):
        """The same scene with only the obstacle, cloud included, shifted by ``offset``."""
        d = np.asarray(offset, dtype=float)
        return replace(self, center=self.center + d, cloud=None if self.cloud is None else self.cloud + d)

    def transformed(self, rotation, offset):
        """Rigidly move the scene, cloud included: ``p -> rotation @ p + offset``."""
        R = np.asarray(rotation, dtype=float)
        d = np.asarray(offset, dtype=float)
        return replace(
            self,
            center=R @ self.center + d,
            start=R @ self.start + d,
            goal=R @ self.goal + d,
            orientation=R @ self.orientation,
            cloud=self.cloud @ R.T + d,
        )

    def in_frame(self, frame):
        """The same scene expressed in a local frame."""
        return replace(
            self,
            center=frame.to_local(self.center),
            start=frame.to_local(self.start),
            goal=frame.to_local(self.goal),
            orientation=frame.rotation.T @ self.orientation,
            cloud=frame.to_local(self.cloud),
        )

    def with_endpoints(self, start, goal):
        return replace(self, start=np.asarray(start, float), goal=np.asarray(goal, float))


def sdf_local(kind, dims, q):
    """Signed distance of points ``q`` given in the obstacle's own frame."""
    if kind == "sphere":
        return np.linalg.norm(q, axis=-1) - dims[0]
    if kind == "cube":
        d = np.abs(q) - np.asarray(dims)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        return outside + np.minimum(np.max(d, axis=-1), 0.0)
    if kind == "cylinder":
        radial = np.linalg.norm(q[..., :2], axis=-1) - dims[0]
        axial = np.abs(q[..., 2]) - dims[1]
        d = np.stack([radial, axial], axis=-1)
        return np.linalg.norm(np.maximum(d, 0.0), axis=-1) + np.minimum(np.max(d, axis=-1), 0.0)
    raise DomainError(f"unknown obstacle kind {kind!r}")


def signed_distance(setting, p):
    """Analytic signed distance from ``p`` (``(3,)`` or ``(..., 3)``) to the obstacle; negative inside."""
    q = (np.asarray(p, dtype=float) - setting.center) @ setting.orientation
    return sdf_local(setting.kind, setting.dims, q)


def make_setting(kind, center, dims, start, goal, orientation=None, density=DEFAULT_DENSITY,
                 seed=0, setting_id="setting"):
    return ObstacleSetting(
        kind=kind, center=center, dims=dims, start=start, goal=goal,
        orientation=np.eye(3) if orientation is None else orientation,
        density=density, seed=seed, setting_id=setting_id,
    )
