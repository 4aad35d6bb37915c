"""The 17-dimensional obstacle feature vector fed to the coupling network.

Layout (all vectors in the local frame):

====  =========================================================
0:9   three nearest cloud points minus end-effector
9:12  obstacle center minus end-effector
12:15 tau-multiplied end-effector velocity
15    signed distance from end-effector to the obstacle surface
16    angle between velocity and end-effector->center vector
====  =========================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .obstacles import signed_distance

N_FEATURES = 17
N_NEAREST = 3
#: distances closer than this are ties, resolved by cloud index
TIE_TOL = 1e-10
MIN_SPEED = 1e-8

FEATURE_NAMES = (
    [f"obs{i}_{ax}" for i in range(N_NEAREST) for ax in "xyz"]
    + [f"center_{ax}" for ax in "xyz"]
    + [f"tau_vel_{ax}" for ax in "xyz"]
    + ["dist", "angle"]
)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    obs3_rel: np.ndarray
    center_rel: np.ndarray
    tau_vel: np.ndarray
    dist: float
    angle: float

    def as_array(self):
        return np.concatenate([self.obs3_rel.ravel(), self.center_rel, self.tau_vel, [self.dist, self.angle]])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (N_FEATURES,):
            raise DomainError(f"feature vector must have {N_FEATURES} entries")
        return cls(x[:9].reshape(3, 3), x[9:12], x[12:15], float(x[15]), float(x[16]))


def nearest_indices(cloud, p, k=N_NEAREST):
    """Indices of the ``k`` cloud points nearest to ``p``, nearest first.

    Distances are bucketed at :data:`TIE_TOL` and ties go to the lower index,
    which keeps the selection stable under rigid transforms of the scene.
    """
    diff = cloud - p
    d = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])
    bucket = np.floor(d / TIE_TOL)
    k = min(k, len(cloud))
    if len(cloud) > 4 * k:
        cand = np.argpartition(bucket, k - 1)[:k]
        cut = bucket[cand].max()
        cand = np.flatnonzero(bucket <= cut)
    else:
        cand = np.arange(len(cloud))
    order = np.lexsort((cand, bucket[cand]))
    return cand[order[:k]]


def angle_between(v, w):
    """Angle in [0, pi]; pi/2 when either vector is (near) zero."""
    nv = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    nw = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    if nv < 1e-300 or nw < 1e-12:
        return math.pi / 2
    c = (v[0] * w[0] + v[1] * w[1] + v[2] * w[2]) / (nv * nw)
    return math.acos(min(1.0, max(-1.0, c)))


def extract_features(setting, frame, ee_pos, ee_vel, tau):
    """Feature vector of an end-effector state relative to an obstacle setting.

    Parameters
    ----------
    setting : ObstacleSetting
        Scene in world coordinates.
    frame : LocalFrame
        Frame the relative vectors are expressed in.
    ee_pos, ee_vel : array_like, shape (3,)
        World end-effector position (m) and velocity (m/s).
    tau : float
        Movement duration; the velocity feature is ``tau * ee_vel``.
    """
    if not tau > 0:
        raise DomainError("tau must be positive")
    cloud = setting.cloud
    if cloud is None or len(cloud) == 0:
        raise DomainError("empty obstacle cloud")
    ee_pos = np.asarray(ee_pos, dtype=float)
    ee_vel = np.asarray(ee_vel, dtype=float)
    R = frame.rotation
    idx = nearest_indices(cloud, ee_pos)
    obs3 = (cloud[idx] - ee_pos) @ R
    to_center = setting.center - ee_pos
    center_rel = to_center @ R
    tau_vel = (tau * ee_vel) @ R
    dist = float(signed_distance(setting, ee_pos))
    if np.linalg.norm(ee_vel) < MIN_SPEED:
        ang = math.pi / 2
    else:
        ang = angle_between(tau_vel, center_rel)
    return FeatureVector(obs3, center_rel, tau_vel, dist, ang)


def feature_matrix(setting, frame, X, V, tau):
    """Row-wise :func:`extract_features` for trajectories ``X``, ``V`` of shape (T, 3)."""
    return np.vstack([extract_features(setting, frame, x, v, tau).as_array() for x, v in zip(X, V)])
