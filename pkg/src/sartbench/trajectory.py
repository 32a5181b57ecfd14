"""Waypoint/trajectory data model and the on-disk dataset format.

A waypoint pairs an observation (goal pose in the end-effector frame +
gripper state) with the expert action taken there. The action at step t
maps ee_pose[t] to ee_pose[t+1]; the final waypoint holds an identity
"stay" action. Datasets serialize to a line-delimited UTF-8 text format
(see FORMAT below) that round-trips losslessly and byte-identically.

FORMAT (schema v1)::

    #sartbench-dataset v1
    meta <key>=<value>            # includes task, seed, config
    trajectory source=<tag> len=<T>
    wp <i> <ee pose: 7> <goal_in_ee pose: 7> <grip> <action pose: 7> <cmd>
    ...
    end

Poses are "px py pz qw qx qy qz" with the quaternion canonicalized to
w >= 0; floats use repr() so parsing reproduces the exact bits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose,
    compose,
    quat_to_rotation,
    relative_pose,
    rotation_angle,
    rotation_difference,
    rotation_to_quat,
)

log = logging.getLogger(__name__)

SCHEMA_HEADER = "#sartbench-dataset v1"
MAX_STEP = 0.05
CONTINUITY_TOL = 1e-9
JUNCTION_TOL = 1e-6
SOURCE_TAGS = ("demo", "sart_aug", "miles_aug", "rollout")
RECORD_HZ = 10.0


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


class DatasetValidationError(ValueError):
    """Structurally parseable file that violates a trajectory invariant."""


@dataclass(frozen=True, eq=False)
class Observation:
    """Goal-object pose expressed in the end-effector frame + gripper state."""

    goal_in_ee: Pose
    gripper_state: int

    def __post_init__(self):
        if self.gripper_state not in (0, 1):
            raise ValueError(f"gripper_state {self.gripper_state!r} not in {{0, 1}}")

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (self.goal_in_ee == other.goal_in_ee
                and self.gripper_state == other.gripper_state)


@dataclass(frozen=True, eq=False)
class Action:
    """Desired next end-effector pose relative to the current one."""

    delta: Pose
    gripper_command: int

    def __post_init__(self):
        if self.gripper_command not in (0, 1):
            raise ValueError(f"gripper_command {self.gripper_command!r} not in {{0, 1}}")

    def __eq__(self, other):
        if not isinstance(other, Action):
            return NotImplemented
        return self.delta == other.delta and self.gripper_command == other.gripper_command


@dataclass(frozen=True, eq=False)
class Waypoint:
    index: int
    ee_pose: Pose
    observation: Observation
    action: Action

    def __eq__(self, other):
        if not isinstance(other, Waypoint):
            return NotImplemented
        return (self.index == other.index and self.ee_pose == other.ee_pose
                and self.observation == other.observation and self.action == other.action)


def action_between(current: Pose, next_pose: Pose, gripper_command: int) -> Action:
    """Action whose application maps current onto next_pose exactly.

    A translation step beyond MAX_STEP is logged as a warning but kept:
    augmented segments may legitimately be coarse.
    """
    delta = relative_pose(current, next_pose)
    step = float(np.linalg.norm(delta.position))
    if step > MAX_STEP:
        log.warning("action step %.4f m exceeds max step %.3f m", step, MAX_STEP)
    return Action(delta, gripper_command)


def apply_action(current: Pose, action: Action) -> Pose:
    return compose(current, action.delta)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered waypoint sequence; continuity is checked on construction."""

    waypoints: tuple
    source_tag: str

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if len(self.waypoints) < 1:
            raise ValueError("trajectory must contain at least one waypoint")
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source_tag {self.source_tag!r}")
        for t, wp in enumerate(self.waypoints):
            if wp.index != t:
                raise ValueError(f"waypoint index {wp.index} at position {t}")
        for t in range(len(self.waypoints) - 1):
            pred = apply_action(self.waypoints[t].ee_pose, self.waypoints[t].action)
            nxt = self.waypoints[t + 1].ee_pose
            pos_err = float(np.linalg.norm(pred.position - nxt.position))
            rot_err = rotation_difference(pred.rotation, nxt.rotation)
            if pos_err > CONTINUITY_TOL or rot_err > CONTINUITY_TOL:
                raise ValueError(
                    f"continuity violated at waypoint {t}: "
                    f"pos err {pos_err:.3e} m, rot err {rot_err:.3e} rad")

    def __len__(self):
        return len(self.waypoints)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.source_tag == other.source_tag and self.waypoints == other.waypoints

    def poses(self) -> list:
        return [wp.ee_pose for wp in self.waypoints]


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: tuple
    metadata: dict

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise ValueError("dataset must contain at least one trajectory")
        for key in ("task", "seed", "config"):
            if key not in self.metadata:
                raise ValueError(f"dataset metadata missing {key!r}")

    def __len__(self):
        return len(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.metadata == other.metadata
                and self.trajectories == other.trajectories)


def trajectory_from_poses(poses, observations, source_tag: str,
                          final_command: int | None = None) -> Trajectory:
    """Build a trajectory from parallel pose/observation lists.

    Actions are recomputed between consecutive poses; each action commands
    the gripper state observed at the next waypoint. The final waypoint
    gets an identity delta.
    """
    if len(poses) != len(observations):
        raise ValueError("poses and observations differ in length")
    wps = []
    for t, (pose, obs) in enumerate(zip(poses, observations)):
        if t < len(poses) - 1:
            act = action_between(pose, poses[t + 1], observations[t + 1].gripper_state)
        else:
            cmd = obs.gripper_state if final_command is None else final_command
            act = Action(Pose.identity(), cmd)
        wps.append(Waypoint(t, pose, obs, act))
    return Trajectory(tuple(wps), source_tag)


def reverse_segment(seg: Trajectory) -> Trajectory:
    """Reverse the pose sequence, recomputing actions between reversed poses.

    The (pose, observation) pairing is preserved; only ordering and the
    connecting actions change.
    """
    rev = list(seg.waypoints)[::-1]
    return trajectory_from_poses([wp.ee_pose for wp in rev],
                                 [wp.observation for wp in rev],
                                 seg.source_tag)


def concat(head: Trajectory, tail: Trajectory) -> Trajectory:
    """Temporal concatenation with junction deduplication.

    head's final pose must equal tail's first pose within JUNCTION_TOL
    (1e-6 m / 1e-6 rad); the junction waypoint keeps tail's copy so its
    action continues into the tail. Result length is len(head) +
    len(tail) - 1.
    """
    a, b = head.waypoints[-1].ee_pose, tail.waypoints[0].ee_pose
    pos_err = float(np.linalg.norm(a.position - b.position))
    rot_err = rotation_angle(a.rotation.T @ b.rotation)
    if pos_err > JUNCTION_TOL or rot_err > JUNCTION_TOL:
        raise ValueError(
            f"junction mismatch: pos err {pos_err:.3e} m, rot err {rot_err:.3e} rad")
    wps = []
    for t, wp in enumerate(head.waypoints[:-1] + tail.waypoints):
        wps.append(Waypoint(t, wp.ee_pose, wp.observation, wp.action))
    return Trajectory(tuple(wps), head.source_tag)


# --- serialization -------------------------------------------------------


def format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def format_pose(p: Pose) -> str:
    return format_floats(list(p.position) + list(rotation_to_quat(p.rotation)))


def parse_pose(tokens, lineno: int, what: str) -> Pose:
    vals = [float(t) for t in tokens]
    quat = np.array(vals[3:7])
    try:
        rot = quat_to_rotation(quat)
    except Exception as exc:
        raise DatasetValidationError(f"line {lineno}: {what}: {exc}") from exc
    return Pose(np.array(vals[:3]), rot)


def _format_waypoint(wp: Waypoint) -> str:
    return " ".join([
        "wp", str(wp.index),
        format_pose(wp.ee_pose),
        format_pose(wp.observation.goal_in_ee), str(wp.observation.gripper_state),
        format_pose(wp.action.delta), str(wp.action.gripper_command),
    ])


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset; identical datasets produce byte-identical files."""
    lines = [SCHEMA_HEADER]
    for key in sorted(dataset.metadata):
        value = str(dataset.metadata[key])
        if any(c.isspace() for c in f"{key}{value}") or "=" in key:
            raise ValueError(f"metadata entry {key!r}={value!r} contains whitespace or '='")
        lines.append(f"meta {key}={value}")
    for traj in dataset.trajectories:
        lines.append(f"trajectory source={traj.source_tag} len={len(traj)}")
        lines.extend(_format_waypoint(wp) for wp in traj.waypoints)
        lines.append("end")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Parse and validate a dataset file; errors carry line numbers."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SCHEMA_HEADER:
        raise DatasetFormatError(f"line 1: expected header {SCHEMA_HEADER!r}")
    metadata: dict = {}
    trajectories = []
    current: list | None = None
    source = ""
    declared_len = 0
    start_line = 0
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            continue
        kind = fields[0]
        if kind == "meta":
            if current is not None:
                raise DatasetFormatError(f"line {lineno}: meta after first trajectory")
            key, _, value = line.split(None, 1)[1].partition("=")
            metadata[key] = value
        elif kind == "trajectory":
            if current is not None:
                raise DatasetFormatError(f"line {lineno}: nested trajectory record")
            attrs = dict(f.partition("=")[::2] for f in fields[1:])
            source = attrs.get("source", "")
            try:
                declared_len = int(attrs.get("len", ""))
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: bad trajectory length") from None
            current = []
            start_line = lineno
        elif kind == "wp":
            if current is None:
                raise DatasetFormatError(f"line {lineno}: waypoint outside trajectory")
            if len(fields) != 2 + 7 + 8 + 8:
                raise DatasetFormatError(
                    f"line {lineno}: expected {2 + 7 + 8 + 8} fields, got {len(fields)}")
            try:
                idx = int(fields[1])
                ee = parse_pose(fields[2:9], lineno, f"waypoint {fields[1]} ee_pose")
                goal = parse_pose(fields[9:16], lineno,
                                  f"waypoint {fields[1]} observation")
                grip = int(fields[16])
                delta = parse_pose(fields[17:24], lineno, f"waypoint {fields[1]} action")
                cmd = int(fields[24])
            except DatasetValidationError:
                raise
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
            try:
                current.append(Waypoint(idx, ee, Observation(goal, grip),
                                        Action(delta, cmd)))
            except ValueError as exc:
                raise DatasetValidationError(f"line {lineno}: {exc}") from exc
        elif kind == "end":
            if current is None:
                raise DatasetFormatError(f"line {lineno}: end outside trajectory")
            if len(current) != declared_len:
                raise DatasetFormatError(
                    f"line {lineno}: trajectory declared {declared_len} waypoints, "
                    f"found {len(current)}")
            try:
                trajectories.append(Trajectory(tuple(current), source))
            except ValueError as exc:
                raise DatasetValidationError(
                    f"trajectory starting line {start_line}: {exc}") from exc
            current = None
        else:
            raise DatasetFormatError(f"line {lineno}: unknown record {kind!r}")
    if current is not None:
        raise DatasetFormatError(f"line {len(lines)}: unterminated trajectory")
    try:
        return Dataset(tuple(trajectories), metadata)
    except ValueError as exc:
        raise DatasetValidationError(str(exc)) from exc
