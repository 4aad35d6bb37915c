"""Start/goal anchored local coordinate frames.

The local x-axis points from start to goal, the z-axis is the direction
orthogonal to x closest to anti-gravity, and y completes a right-handed
triad. Positions transform as points, velocities and coupling terms as free
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FrameError

MIN_LENGTH = 1e-6
GRAVITY = (0.0, 0.0, -1.0)


@dataclass(frozen=True, eq=False)
class LocalFrame:
    """Origin (the start) and rotation whose columns are the local axes in world coordinates."""

    origin: np.ndarray
    rotation: np.ndarray
    degenerate: bool = False

    def to_local(self, p):
        return (np.asarray(p, dtype=float) - self.origin) @ self.rotation

    def to_world(self, q):
        return np.asarray(q, dtype=float) @ self.rotation.T + self.origin

    def vec_to_local(self, v):
        return np.asarray(v, dtype=float) @ self.rotation

    def vec_to_world(self, v):
        return np.asarray(v, dtype=float) @ self.rotation.T

    def to_dict(self):
        return {
            "origin": self.origin.tolist(),
            "rotation": self.rotation.tolist(),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["origin"], float), np.array(d["rotation"], float), bool(d["degenerate"]))


def _unit(v):
    return v / np.linalg.norm(v)


def build_frame(start, goal, gravity=GRAVITY):
    """Local frame for a movement from ``start`` to ``goal``.

    When the movement is parallel to gravity the z-axis rule has no unique
    answer; the z-axis is then taken closest to world +y and the frame is
    flagged ``degenerate``.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    gravity = np.asarray(gravity, dtype=float)
    if not (np.all(np.isfinite(start)) and np.all(np.isfinite(goal)) and np.all(np.isfinite(gravity))):
        raise DomainError("frame inputs must be finite")
    span = goal - start
    length = np.linalg.norm(span)
    if length <= MIN_LENGTH:
        raise FrameError(f"start and goal coincide (|g - x0| = {length:.3g} m)")
    ex = span / length
    up = -_unit(gravity)
    z = up - (up @ ex) * ex
    degenerate = np.linalg.norm(z) < 1e-9
    if degenerate:
        ref = np.array([0.0, 1.0, 0.0])
        z = ref - (ref @ ex) * ex
    ez = _unit(z)
    # second Gram-Schmidt pass: near-vertical movements lose orthogonality to cancellation
    ez = _unit(ez - (ez @ ex) * ex)
    ey = np.cross(ez, ex)
    R = np.column_stack([ex, ey, ez])
    R.setflags(write=False)
    origin = start.copy()
    origin.setflags(write=False)
    return LocalFrame(origin=origin, rotation=R, degenerate=bool(degenerate))


def identity_frame():
    R = np.eye(3)
    R.setflags(write=False)
    return LocalFrame(origin=np.zeros(3), rotation=R)


def rotation_about(axis, angle):
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    k = _unit(np.asarray(axis, dtype=float))
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
