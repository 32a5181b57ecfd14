"""Precision boundaries: human-annotated safety spheres around key waypoints.

Each boundary is a sphere centered on a selected demonstration waypoint;
its surface delimits how far augmentation may displace the end-effector
there. Validation conservatively inflates the sphere by the end-effector
bounding radius and checks clearance against every non-goal obstacle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose, rotation_difference
from .trajectory import Trajectory, format_pose, parse_pose
from .world import Scene, point_box_distance

R_MIN = 0.005
R_MAX = 0.5
SCHEMA_HEADER = "#sartbench-annotations v1"
POSE_MATCH_TOL = 1e-9


class AnnotationError(ValueError):
    pass


class StaleAnnotationError(AnnotationError):
    """Stored annotation no longer matches the demonstration it cites."""


class BoundaryNotFoundError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class PrecisionBoundary:
    """Safety sphere: key waypoint index, its pose, and a radius in meters."""

    boundary_id: str
    key_index: int
    center_pose: Pose
    radius: float

    def __post_init__(self):
        if not R_MIN <= self.radius <= R_MAX:
            raise AnnotationError(
                f"boundary {self.boundary_id!r} radius {self.radius!r} "
                f"outside [{R_MIN}, {R_MAX}]")
        if self.key_index < 0:
            raise AnnotationError(f"negative key_index {self.key_index}")

    def __eq__(self, other):
        if not isinstance(other, PrecisionBoundary):
            return NotImplemented
        return (self.boundary_id == other.boundary_id
                and self.key_index == other.key_index
                and self.center_pose == other.center_pose
                and self.radius == other.radius)

    @property
    def center(self) -> np.ndarray:
        return self.center_pose.position


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Boundaries for one demonstration, ordered by key waypoint index."""

    demo_id: str
    boundaries: tuple

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        if not self.boundaries:
            raise AnnotationError("annotation set must contain at least one boundary")
        keys = [b.key_index for b in self.boundaries]
        if any(b >= a for a, b in zip(keys[1:], keys)):
            raise AnnotationError(f"key indices not strictly increasing: {keys}")
        ids = [b.boundary_id for b in self.boundaries]
        if len(set(ids)) != len(ids):
            raise AnnotationError(f"duplicate boundary ids: {ids}")

    def __len__(self):
        return len(self.boundaries)

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return self.demo_id == other.demo_id and self.boundaries == other.boundaries

    def get(self, boundary_id: str) -> PrecisionBoundary:
        for b in self.boundaries:
            if b.boundary_id == boundary_id:
                return b
        raise BoundaryNotFoundError(boundary_id)


@dataclass(frozen=True)
class ValidationReport:
    boundary_id: str
    collision_free: bool
    min_clearance: float
    offending_obstacle: str | None = None


def boundary_at(demo: Trajectory, boundary_id: str, key_index: int,
                radius: float) -> PrecisionBoundary:
    """Boundary centered exactly on the demo's pose at key_index."""
    if not 0 <= key_index < len(demo):
        raise AnnotationError(f"key_index {key_index} outside demo of length {len(demo)}")
    return PrecisionBoundary(boundary_id, key_index,
                             demo.waypoints[key_index].ee_pose, radius)


def validate_boundary(scene: Scene, boundary: PrecisionBoundary,
                      ee_halfwidth: float) -> ValidationReport:
    """Clearance of the EE-inflated sphere against non-goal obstacles.

    min_clearance = min over obstacles of signed distance(center, box)
    minus (radius + ee_halfwidth); strictly positive clearance is
    required for a collision-free verdict. Goal-adjacent geometry listed
    in scene.goal_exclusion_ids is skipped; with nothing left to check
    the clearance is +inf.
    """
    if ee_halfwidth < 0.0:
        raise AnnotationError(f"negative ee_halfwidth {ee_halfwidth!r}")
    inflated = boundary.radius + ee_halfwidth
    best = math.inf
    offender = None
    for box in scene.obstacles:
        if box.box_id in scene.goal_exclusion_ids:
            continue
        clearance = point_box_distance(boundary.center, box) - inflated
        if clearance < best:
            best = clearance
            offender = box.box_id
    free = best > 0.0
    return ValidationReport(boundary.boundary_id, free, best,
                            None if free else offender)


def adjust_radius(ann: AnnotationSet, boundary_id: str, delta: float) -> AnnotationSet:
    """New annotation set with one radius changed, clamped to [R_MIN, R_MAX]."""
    target = ann.get(boundary_id)
    new_radius = min(R_MAX, max(R_MIN, target.radius + delta))
    updated = tuple(replace(b, radius=new_radius) if b.boundary_id == boundary_id else b
                    for b in ann.boundaries)
    return AnnotationSet(ann.demo_id, updated)


def save_annotations(ann: AnnotationSet, path) -> None:
    lines = [SCHEMA_HEADER, f"demo {ann.demo_id}"]
    for b in ann.boundaries:
        lines.append(f"boundary {b.boundary_id} {b.key_index} {b.radius!r} "
                     f"{format_pose(b.center_pose)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_annotations(path, demo: Trajectory,
                     expected_demo_id: str | None = None) -> AnnotationSet:
    """Load and cross-check annotations against the demonstration.

    The stored center pose must match the demo's pose at key_index within
    1e-9 (position and rotation); a mismatch means the demo changed since
    annotation and raises StaleAnnotationError.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SCHEMA_HEADER:
        raise AnnotationError(f"line 1: expected header {SCHEMA_HEADER!r}")
    if len(lines) < 2 or not lines[1].startswith("demo "):
        raise AnnotationError("line 2: expected 'demo <id>'")
    demo_id = lines[1][len("demo "):].strip()
    if expected_demo_id is not None and demo_id != expected_demo_id:
        raise StaleAnnotationError(
            f"annotations are for demo {demo_id!r}, expected {expected_demo_id!r}")
    boundaries = []
    for lineno, line in enumerate(lines[2:], start=3):
        fields = line.split()
        if not fields:
            continue
        if fields[0] != "boundary" or len(fields) != 4 + 7:
            raise AnnotationError(f"line {lineno}: malformed boundary record")
        bid = fields[1]
        try:
            key_index = int(fields[2])
            radius = float(fields[3])
        except ValueError as exc:
            raise AnnotationError(f"line {lineno}: {exc}") from exc
        stored = parse_pose(fields[4:], lineno, f"boundary {bid}")
        if not 0 <= key_index < len(demo):
            raise StaleAnnotationError(
                f"line {lineno}: key_index {key_index} outside demo of length {len(demo)}")
        actual = demo.waypoints[key_index].ee_pose
        pos_err = float(np.linalg.norm(stored.position - actual.position))
        rot_err = rotation_difference(stored.rotation, actual.rotation)
        if pos_err > POSE_MATCH_TOL or rot_err > POSE_MATCH_TOL:
            raise StaleAnnotationError(
                f"line {lineno}: boundary {bid} center drifted from demo waypoint "
                f"{key_index} (pos err {pos_err:.3e} m, rot err {rot_err:.3e} rad)")
        boundaries.append(PrecisionBoundary(bid, key_index, actual, radius))
    return AnnotationSet(demo_id, tuple(boundaries))
