"""Oriented boxes and the analytic queries shared by validation and simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, _as_vec3

# Overlap smaller than this counts as touching, not collision, so resting
# contact (an object sitting on the table) is legal.
CONTACT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Box:
    """Oriented box: center pose + half-extents (meters)."""

    box_id: str
    pose: Pose
    half_extents: np.ndarray

    def __post_init__(self):
        h = _as_vec3(self.half_extents)
        if np.any(h <= 0.0):
            raise ValueError(f"box {self.box_id!r} half-extents must be positive: {h}")
        h.setflags(write=False)
        object.__setattr__(self, "half_extents", h)

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return (self.box_id == other.box_id and self.pose == other.pose
                and np.array_equal(self.half_extents, other.half_extents))


def point_box_distance(point, box: Box) -> float:
    """Signed distance from a point to an oriented box.

    Positive outside (euclidean distance to the surface), negative inside
    (minus the distance to the nearest face).
    """
    local = box.pose.rotation.T @ (_as_vec3(point) - box.pose.position)
    excess = np.abs(local) - box.half_extents
    if np.all(excess <= 0.0):
        return float(excess.max())
    return float(np.linalg.norm(np.maximum(excess, 0.0)))


def boxes_intersect(a: Box, b: Box, tol: float = CONTACT_TOL) -> bool:
    """Separating-axis test for two oriented boxes.

    Face-normal axes allow tol of overlap so exact surface contact (an
    object resting on another) does not count as collision. Edge-edge
    cross axes use a strict comparison with inflated projections instead:
    for (near-)parallel edge pairs both sides of the test degenerate to
    zero and a tolerance there would fabricate a separating axis.
    """
    ra = a.pose.rotation
    rb = b.pose.rotation
    r = ra.T @ rb
    t = ra.T @ (b.pose.position - a.pose.position)
    abs_r = np.abs(r) + 1e-12
    ea, eb = a.half_extents, b.half_extents

    # Face normals of a.
    for i in range(3):
        if abs(t[i]) >= ea[i] + float(abs_r[i] @ eb) - tol:
            return False
    # Face normals of b.
    for j in range(3):
        if abs(float(t @ r[:, j])) >= float(abs_r[:, j] @ ea) + eb[j] - tol:
            return False
    # Edge-edge cross products a_i x b_j.
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            lhs = abs(t[i2] * r[i1, j] - t[i1] * r[i2, j])
            rhs = (ea[i1] * abs_r[i2, j] + ea[i2] * abs_r[i1, j]
                   + eb[j1] * abs_r[i, j2] + eb[j2] * abs_r[i, j1])
            if lhs > rhs:
                return False
    return True


@dataclass(frozen=True, eq=False)
class Scene:
    """Static geometric world: obstacle boxes, goal pose, goal exclusions.

    goal_exclusion_ids lists obstacle ids that belong to the task goal
    (e.g. a graspable handle); boundary validation skips them so safety
    spheres may legally surround the goal.
    """

    obstacles: tuple
    goal_pose: Pose
    goal_exclusion_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "goal_exclusion_ids", tuple(self.goal_exclusion_ids))

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.obstacles == other.obstacles and self.goal_pose == other.goal_pose
                and self.goal_exclusion_ids == other.goal_exclusion_ids)

    def box(self, box_id: str) -> Box:
        for b in self.obstacles:
            if b.box_id == box_id:
                return b
        raise KeyError(box_id)
