"""Deterministic kinematic environment for two clearance-limited tasks.

The end-effector is a free-flying frame driven by relative-pose actions at
10 Hz; there are no dynamics, contacts are purely geometric (oriented-box
intersection), and task outcome is decided by analytic predicates:

- peg_in_hole: a 3 cm square peg carried under the EE must sink below the
  rim of a 5 cm square hole whose position is randomized in a +-5 cm
  square. Touching the table lip anywhere ends the episode as a collision.
- handle_lift: a two-finger hand must straddle a narrow handle bar
  (4 mm lateral play), close the gripper to attach the object, and raise
  it above a lift threshold; the goal position is randomized +-10 cm.

A scripted expert replaces human teleoperation: it tracks task-specific
via-poses with small seeded jitter and is verified by replay before its
trajectory is returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .geometry import (
    Pose,
    Rng,
    axis_angle_to_rotation,
    compose,
    interp_pose,
    inverse,
    relative_pose,
    rot_mul,
    rotation_angle,
    sample_unit_axis,
)
from .trajectory import (
    Action,
    Observation,
    Trajectory,
    Waypoint,
    action_between,
    apply_action,
)
from .world import Box, Scene, boxes_intersect

STREAM_RESET = 11
STREAM_EXPERT = 12

STALL_WINDOW = 20
STALL_EPS = 1e-4

# Expert via-pose jitter (position m, rotation rad), per leg.
JITTER_ABOVE = (0.002, 0.01)
JITTER_ALIGN = (0.002, 0.005)
JITTER_INSERT = (0.002, 0.003)

TASK_KINDS = ("peg_in_hole", "handle_lift")


class ExpertFailure(RuntimeError):
    """The scripted expert failed on a scene inside the randomization bounds."""


class EpisodeOver(RuntimeError):
    """step() was called on a terminated environment state."""


@dataclass(frozen=True)
class TaskSpec:
    """Geometry and termination parameters of one task."""

    kind: str
    goal_randomization_halfwidth: float
    max_steps: int = 150
    record_hz: float = 10.0
    home_height: float = 0.20
    goal_nominal_xy: tuple = (0.0, 0.30)
    table_halfwidth: float = 0.5
    table_thickness: float = 0.04
    # peg_in_hole geometry
    peg_halfwidth: float = 0.015
    peg_length: float = 0.08
    hole_halfwidth: float = 0.025
    insert_depth: float = 0.02
    # handle_lift geometry
    finger_half: tuple = (0.004, 0.030, 0.025)
    finger_sep: float = 0.016
    bar_half: tuple = (0.008, 0.035, 0.008)
    bar_height: float = 0.138
    body_half: tuple = (0.06, 0.04, 0.05)
    grasp_drop: float = 0.035
    grasp_tol: float = 0.006
    lift_threshold: float = 0.10

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.goal_randomization_halfwidth < 0:
            raise ValueError("goal randomization halfwidth must be >= 0")
        if self.kind == "peg_in_hole" and self.peg_halfwidth >= self.hole_halfwidth:
            raise ValueError("peg must fit the hole with positive clearance")

    @staticmethod
    def peg_in_hole(**overrides) -> "TaskSpec":
        return replace(TaskSpec("peg_in_hole", 0.05), **overrides)

    @staticmethod
    def handle_lift(**overrides) -> "TaskSpec":
        return replace(TaskSpec("handle_lift", 0.10), **overrides)

    @staticmethod
    def named(kind: str, **overrides) -> "TaskSpec":
        if kind == "peg_in_hole":
            return TaskSpec.peg_in_hole(**overrides)
        if kind == "handle_lift":
            return TaskSpec.handle_lift(**overrides)
        raise ValueError(f"unknown task kind {kind!r}")

    def home_pose(self) -> Pose:
        return Pose(np.array([0.0, 0.0, self.home_height]), np.eye(3))

    def save(self, path) -> None:
        d = asdict(self)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_file(path) -> "TaskSpec":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        kind = d.pop("kind")
        for key in ("goal_nominal_xy", "finger_half", "bar_half", "body_half"):
            if key in d:
                d[key] = tuple(d[key])
        if "goal_randomization_halfwidth" in d:
            return replace(TaskSpec(kind, d.pop("goal_randomization_halfwidth")), **d)
        return TaskSpec.named(kind, **d)


@dataclass(frozen=True)
class StepFlags:
    collision: bool
    success: bool
    timeout: bool


@dataclass(frozen=True)
class EnvState:
    ee_pose: Pose
    gripper: int
    attached: bool
    step_count: int
    terminated: str  # running | success | collision | timeout
    object_delta: Pose  # maps initial goal-object poses to current ones
    attach_rel: Pose | None = None


@dataclass(frozen=True)
class RolloutResult:
    success: bool
    steps: int
    failure_kind: str | None
    trajectory: Trajectory

    def __post_init__(self):
        if self.success and self.failure_kind is not None:
            raise ValueError("successful rollout cannot carry a failure kind")


# --- scene construction ---------------------------------------------------


def _flat_box(box_id, cx, cy, cz, hx, hy, hz) -> Box:
    return Box(box_id, Pose(np.array([cx, cy, cz]), np.eye(3)),
               np.array([hx, hy, hz]))


def build_scene(task: TaskSpec, goal_xy) -> Scene:
    gx, gy = float(goal_xy[0]), float(goal_xy[1])
    t = task.table_halfwidth
    th = task.table_thickness
    if task.kind == "peg_in_hole":
        hw = task.hole_halfwidth
        zc, hz = -th / 2.0, th / 2.0
        obstacles = (
            _flat_box("table_west", (-t + gx - hw) / 2.0, 0.0, zc,
                      (gx - hw + t) / 2.0, t, hz),
            _flat_box("table_east", (t + gx + hw) / 2.0, 0.0, zc,
                      (t - gx - hw) / 2.0, t, hz),
            _flat_box("table_south", gx, (-t + gy - hw) / 2.0, zc,
                      hw, (gy - hw + t) / 2.0, hz),
            _flat_box("table_north", gx, (t + gy + hw) / 2.0, zc,
                      hw, (t - gy - hw) / 2.0, hz),
        )
        goal = Pose(np.array([gx, gy, 0.0]), np.eye(3))
        return Scene(obstacles, goal, ())
    # handle_lift
    bh = task.body_half
    post_half = (0.008, 0.008, 0.015)
    body_top = 2.0 * bh[2]
    post_z = body_top + post_half[2]
    obstacles = (
        _flat_box("table", 0.0, 0.0, -th / 2.0, t, t, th / 2.0),
        _flat_box("body", gx, gy, bh[2], *bh),
        _flat_box("post0", gx, gy - 0.027, post_z, *post_half),
        _flat_box("post1", gx, gy + 0.027, post_z, *post_half),
        _flat_box("bar", gx, gy, task.bar_height, *task.bar_half),
    )
    goal = Pose(np.array([gx, gy, task.bar_height]), np.eye(3))
    return Scene(obstacles, goal, ("body", "post0", "post1", "bar"))


GOAL_OBJECT_IDS = {"peg_in_hole": (), "handle_lift": ("body", "post0", "post1", "bar")}


def _carried_boxes(task: TaskSpec, ee: Pose) -> list:
    if task.kind == "peg_in_hole":
        offset = Pose(np.array([0.0, 0.0, -task.peg_length / 2.0]), np.eye(3))
        half = np.array([task.peg_halfwidth, task.peg_halfwidth,
                         task.peg_length / 2.0])
        return [Box("peg", compose(ee, offset), half)]
    fh = np.asarray(task.finger_half)
    boxes = []
    for sign, name in ((-1.0, "finger_left"), (1.0, "finger_right")):
        offset = Pose(np.array([sign * task.finger_sep, 0.0, -fh[2]]), np.eye(3))
        boxes.append(Box(name, compose(ee, offset), fh))
    return boxes


def _current_obstacles(task: TaskSpec, scene: Scene, state_delta: Pose) -> list:
    moving = GOAL_OBJECT_IDS[task.kind]
    out = []
    for box in scene.obstacles:
        if box.box_id in moving:
            out.append(Box(box.box_id, compose(state_delta, box.pose),
                           box.half_extents))
        else:
            out.append(box)
    return out


def _grasp_point(task: TaskSpec, ee: Pose) -> np.ndarray:
    return compose(ee, Pose(np.array([0.0, 0.0, -task.grasp_drop]),
                            np.eye(3))).position


def _peg_corners(task: TaskSpec, ee: Pose) -> np.ndarray:
    offset = np.array([0.0, 0.0, -task.peg_length / 2.0])
    half = np.array([task.peg_halfwidth, task.peg_halfwidth, task.peg_length / 2.0])
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                      for sz in (-1, 1)], dtype=np.float64)
    center = ee.rotation @ offset + ee.position
    return center + (signs * half) @ ee.rotation.T


def _check_success(task: TaskSpec, scene: Scene, ee: Pose, attached: bool,
                   object_delta: Pose) -> bool:
    if task.kind == "peg_in_hole":
        corners = _peg_corners(task, ee)
        g = scene.goal_pose.position
        inside = (np.all(np.abs(corners[:, 0] - g[0]) <= task.hole_halfwidth)
                  and np.all(np.abs(corners[:, 1] - g[1]) <= task.hole_halfwidth))
        return bool(inside and corners[:, 2].min() <= -task.insert_depth)
    if not attached:
        return False
    body = scene.box("body")
    bottom = compose(object_delta, body.pose).position[2] - body.half_extents[2]
    return bool(bottom >= task.lift_threshold)


def _check_collision(task: TaskSpec, scene: Scene, ee: Pose, attached: bool,
                     object_delta: Pose) -> bool:
    carried = _carried_boxes(task, ee)
    moving = GOAL_OBJECT_IDS[task.kind]
    obstacles = _current_obstacles(task, scene, object_delta)
    for c in carried:
        for o in obstacles:
            if attached and o.box_id in moving:
                continue  # rigidly grasped, relative pose frozen at attach
            if boxes_intersect(c, o):
                return True
    if attached:
        statics = [o for o in obstacles if o.box_id not in moving]
        for m in (o for o in obstacles if o.box_id in moving):
            for s in statics:
                if boxes_intersect(m, s):
                    return True
    return False


def _observe(state: EnvState, scene: Scene) -> Observation:
    goal = compose(state.object_delta, scene.goal_pose)
    return Observation(relative_pose(state.ee_pose, goal), state.gripper)


def initial_state(task: TaskSpec) -> EnvState:
    gripper = 1 if task.kind == "peg_in_hole" else 0
    return EnvState(task.home_pose(), gripper, False, 0, "running",
                    Pose.identity(), None)


def reset(task: TaskSpec, seed: int):
    """Randomized scene + fresh state + first observation, all seed-determined."""
    rng = Rng(seed).derive(STREAM_RESET)
    hw = task.goal_randomization_halfwidth
    offset = rng.uniform(-hw, hw, 2)
    goal_xy = (task.goal_nominal_xy[0] + offset[0],
               task.goal_nominal_xy[1] + offset[1])
    scene = build_scene(task, goal_xy)
    state = initial_state(task)
    return scene, state, _observe(state, scene)


def step(state: EnvState, scene: Scene, task: TaskSpec, action: Action):
    """Advance one step; returns (EnvState, Observation, StepFlags)."""
    if state.terminated != "running":
        raise EpisodeOver(f"step() on terminated state ({state.terminated})")
    ee = apply_action(state.ee_pose, action)
    gripper = action.gripper_command
    attached = state.attached
    attach_rel = state.attach_rel
    object_delta = state.object_delta

    if task.kind == "handle_lift":
        if attached and gripper == 0:
            attached = False
            attach_rel = None
        elif not attached and gripper == 1:
            bar = scene.box("bar")
            bar_now = compose(object_delta, bar.pose).position
            if float(np.linalg.norm(bar_now - _grasp_point(task, ee))) <= task.grasp_tol:
                attached = True
                attach_rel = compose(inverse(ee), object_delta)
        if attached:
            object_delta = compose(ee, attach_rel)

    collided = _check_collision(task, scene, ee, attached, object_delta)
    succeeded = not collided and _check_success(task, scene, ee, attached,
                                                object_delta)
    count = state.step_count + 1
    timeout = not collided and not succeeded and count >= task.max_steps
    if collided:
        terminated = "collision"
    elif succeeded:
        terminated = "success"
    elif timeout:
        terminated = "timeout"
    else:
        terminated = "running"
    new_state = EnvState(ee, gripper, attached, count, terminated,
                         object_delta, attach_rel)
    return new_state, _observe(new_state, scene), StepFlags(collided, succeeded,
                                                            timeout)


# --- scripted expert ------------------------------------------------------


def _leg(poses, start: Pose, end: Pose, speed: float, hz: float):
    dist = float(np.linalg.norm(end.position - start.position))
    ang = rotation_angle(start.rotation.T @ end.rotation)
    n = max(1, int(math.ceil(max(dist / (speed / hz), ang / (0.05 / hz)))))
    for j in range(1, n + 1):
        poses.append(interp_pose(start, end, j / n))


def _jittered(pose: Pose, rng: Rng, pos_jitter: float, rot_jitter: float) -> Pose:
    dp = rng.uniform(-pos_jitter, pos_jitter, 3)
    angle = rng.uniform(-rot_jitter, rot_jitter)
    axis = sample_unit_axis(rng)
    return Pose(pose.position + dp,
                rot_mul(pose.rotation, axis_angle_to_rotation(axis, angle)))


def _expert_plan(task: TaskSpec, scene: Scene, rng: Rng):
    """Via poses + gripper schedule; returns [(pose, gripper_command)]."""
    g = scene.goal_pose.position
    up = np.eye(3)
    hz = task.record_hz
    plan = []
    if task.kind == "peg_in_hole":
        above = _jittered(Pose(np.array([g[0], g[1], task.home_height]), up),
                          rng, *JITTER_ABOVE)
        align_z = task.peg_length + 0.015
        align = _jittered(Pose(np.array([g[0], g[1], align_z]), up), rng,
                          *JITTER_ALIGN)
        # Insert well past the success depth so tracking error in a learned
        # policy still crosses the threshold before the hold point; full
        # jitter keeps the demonstrated in-hole tube as wide as the hole
        # clearance allows.
        insert = _jittered(Pose(np.array([g[0], g[1],
                                          task.peg_length - task.insert_depth - 0.013]),
                                up), rng, *JITTER_INSERT)
        poses = [task.home_pose()]
        _leg(poses, poses[-1], above, 0.06, hz)
        _leg(poses, poses[-1], align, 0.05, hz)
        _leg(poses, poses[-1], insert, 0.02, hz)
        plan = [(p, 1) for p in poses]
        plan += [(poses[-1], 1)] * 3
        return plan
    # handle_lift
    grasp_z = task.bar_height + task.grasp_drop
    above = _jittered(Pose(np.array([g[0], g[1], grasp_z + 0.09]), up), rng,
                      0.002, 0.01)
    grasp = _jittered(Pose(np.array([g[0], g[1], grasp_z]), up), rng,
                      0.001, 0.003)
    lift = Pose(grasp.position + np.array([0.0, 0.0, task.lift_threshold + 0.03]),
                grasp.rotation)
    poses = [task.home_pose()]
    _leg(poses, poses[-1], above, 0.06, hz)
    _leg(poses, poses[-1], grasp, 0.02, hz)
    plan = [(p, 0) for p in poses]
    plan += [(poses[-1], 1)] * 3  # close gripper in place
    lift_poses = [poses[-1]]
    _leg(lift_poses, lift_poses[-1], lift, 0.05, hz)
    plan += [(p, 1) for p in lift_poses[1:]]
    return plan


def execute_plan(task: TaskSpec, scene: Scene, plan, source_tag: str = "demo",
                 record_through_success: bool = False):
    """Drive the environment through (pose, gripper) targets.

    Returns (trajectory of executed waypoints, terminal EnvState). Stops
    at the first terminal transition unless record_through_success is
    set, in which case success is latched and execution continues to the
    end of the plan (demonstrations keep their post-threshold waypoints,
    so learned policies are supervised past the success boundary, not
    just up to it). Collisions and timeouts always stop.
    """
    state = initial_state(task)
    obs = _observe(state, scene)
    records = [(state.ee_pose, obs)]
    actions = []
    succeeded = False
    for target, cmd in plan[1:]:
        act = action_between(state.ee_pose, target, cmd)
        state, obs, _ = step(state, scene, task, act)
        actions.append(act)
        records.append((state.ee_pose, obs))
        if state.terminated == "success" and record_through_success:
            succeeded = True
            state = replace(state, terminated="running")
            continue
        if state.terminated != "running":
            break
    if succeeded and state.terminated == "running":
        state = replace(state, terminated="success")
    wps = []
    for t, (pose, ob) in enumerate(records):
        act = actions[t] if t < len(actions) else Action(Pose.identity(),
                                                         ob.gripper_state)
        wps.append(Waypoint(t, pose, ob, act))
    return Trajectory(tuple(wps), source_tag), state


def scripted_expert(task: TaskSpec, scene: Scene, seed: int) -> Trajectory:
    """Demonstration standing in for human teleoperation.

    Tracks task via-poses with seeded jitter (<= 2 mm, <= 0.01 rad) at
    10 Hz and is verified by open-loop replay on the same scene before
    being returned; a failure raises ExpertFailure.
    """
    rng = Rng(seed).derive(STREAM_EXPERT)
    plan = _expert_plan(task, scene, rng)
    traj, state = execute_plan(task, scene, plan, record_through_success=True)
    if state.terminated != "success":
        raise ExpertFailure(
            f"expert ended in state {state.terminated!r} on task {task.kind}")
    check = replay(traj, task, scene)
    if not check.success:
        raise ExpertFailure(f"expert demo failed replay: {check.failure_kind}")
    return traj


def replay(traj: Trajectory, task: TaskSpec, scene: Scene) -> RolloutResult:
    """Open-loop execution of a stored action sequence."""
    state = initial_state(task)
    obs = _observe(state, scene)
    records = [(state.ee_pose, obs)]
    actions = []
    for wp in traj.waypoints:
        if state.terminated != "running":
            break
        state, obs, _ = step(state, scene, task, wp.action)
        actions.append(wp.action)
        records.append((state.ee_pose, obs))
    return _finish(records, actions, state)


def _finish(records, actions, state: EnvState,
            failure_override: str | None = None) -> RolloutResult:
    wps = []
    for t, (pose, ob) in enumerate(records):
        act = actions[t] if t < len(actions) else Action(Pose.identity(),
                                                         ob.gripper_state)
        wps.append(Waypoint(t, pose, ob, act))
    executed = Trajectory(tuple(wps), "rollout")
    success = state.terminated == "success"
    if success:
        failure = None
    elif failure_override is not None:
        failure = failure_override
    elif state.terminated in ("collision", "timeout"):
        failure = state.terminated
    else:
        failure = "timeout"  # action stream ended before task completion
    return RolloutResult(success, state.step_count, failure, executed)


def rollout(policy, task: TaskSpec, scene: Scene,
            max_steps: int | None = None) -> RolloutResult:
    """Closed-loop policy execution with stall detection.

    The policy sees the rolling observation history; a net EE displacement
    below STALL_EPS over STALL_WINDOW consecutive steps ends the episode
    as a stall.
    """
    limit = task.max_steps if max_steps is None else max_steps
    run_task = replace(task, max_steps=limit)
    state = initial_state(run_task)
    obs = _observe(state, scene)
    history = [obs]
    records = [(state.ee_pose, obs)]
    actions = []
    positions = [state.ee_pose.position]
    while state.terminated == "running":
        act = policy.predict_action(history)
        state, obs, _ = step(state, scene, run_task, act)
        actions.append(act)
        records.append((state.ee_pose, obs))
        history.append(obs)
        if len(history) > policy.history_len:
            history.pop(0)
        positions.append(state.ee_pose.position)
        if (state.terminated == "running" and len(positions) > STALL_WINDOW
                and float(np.linalg.norm(positions[-1]
                                         - positions[-1 - STALL_WINDOW])) < STALL_EPS):
            return _finish(records, actions, state, failure_override="stall")
    return _finish(records, actions, state)
