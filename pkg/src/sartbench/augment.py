"""Trajectory self-augmentation: sphere sampling, reconnection, aggregation.

For each annotated boundary, K poses are sampled on the sphere surface
(with an optional radius-scaled orientation perturbation), a straight-line
segment is synthesized from the convergence waypoint out to the sample and
reversed, and the reversed segment is concatenated with the demonstration
suffix. The union of the demonstration and all I*K augmented trajectories
forms the training dataset.

A fixed-sphere baseline variant places a 2 cm boundary at every waypoint
and reconnects segments to the sphere centers instead of the convergence
waypoints ("return to center"); the same flags expose the ablation modes
(no position sampling, no orientation sampling, no demo merge).
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .annotation import AnnotationSet, PrecisionBoundary, boundary_at
from .geometry import (
    Pose,
    Rng,
    compose,
    interp_pose,
    relative_pose,
    sample_rotation_perturbation,
    sample_sphere_point,
)
from .trajectory import (
    Dataset,
    Observation,
    Trajectory,
    Waypoint,
    concat,
    reverse_segment,
    trajectory_from_poses,
)

log = logging.getLogger(__name__)

MILES_RADIUS = 0.02
SPHERE_MODES = ("angle_uniform", "area_uniform")


class NoConvergenceError(RuntimeError):
    """A boundary sphere encloses the entire remaining demonstration."""


@dataclass(frozen=True)
class AugmentationConfig:
    """Knobs of the augmentation procedure and its ablation switches.

    nu_r converts sphere radius to the maximum angular perturbation
    (radians per meter); delta_s is the synthesized segment duration in
    seconds at record_hz. The flags map to the ablation variants:
    position_aug=False (no position sampling), orientation_aug=False
    (no orientation sampling), merge_demo=False (segments only),
    return_center=True (reconnect to sphere centers).
    """

    master_seed: int
    K: int = 10
    nu_r: float = 1.0
    delta_s: float = 2.0
    record_hz: float = 10.0
    position_aug: bool = True
    orientation_aug: bool = True
    merge_demo: bool = True
    return_center: bool = False
    sphere_sampling: str = "angle_uniform"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.delta_s <= 0.0 or self.record_hz <= 0.0:
            raise ValueError("delta_s and record_hz must be positive")
        if self.nu_r < 0.0:
            raise ValueError(f"nu_r must be nonnegative, got {self.nu_r}")
        if self.sphere_sampling not in SPHERE_MODES:
            raise ValueError(f"sphere_sampling must be one of {SPHERE_MODES}")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    @staticmethod
    def from_dict(d: dict) -> "AugmentationConfig":
        return AugmentationConfig(**d)

    @staticmethod
    def from_file(path) -> "AugmentationConfig":
        with open(path, encoding="utf-8") as fh:
            return AugmentationConfig.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True, eq=False)
class AugmentedSegment:
    """One augmentation outcome: the trajectory plus its provenance."""

    trajectory: Trajectory
    sphere_id: str
    sample_pose: Pose
    convergence_index: int


def find_convergence_waypoint(demo: Trajectory, key_index: int, center,
                              radius: float) -> int:
    """Earliest demo index after key_index strictly outside the sphere.

    Uses the squared-distance comparison ||p_t - c||^2 > r^2 over
    t in (key_index, T-1]. Raises NoConvergenceError when the sphere
    encloses the rest of the demonstration.
    """
    if not 0 <= key_index < len(demo):
        raise ValueError(f"key_index {key_index} outside demo of length {len(demo)}")
    c = np.asarray(center, dtype=np.float64)
    r2 = float(radius) ** 2
    for t in range(key_index + 1, len(demo)):
        d = demo.waypoints[t].ee_pose.position - c
        if float(d @ d) > r2:
            return t
    raise NoConvergenceError(
        f"sphere at waypoint {key_index} (radius {radius}) encloses the "
        f"remaining demonstration")


def generate_segment(from_pose: Pose, to_pose: Pose,
                     cfg: AugmentationConfig) -> list:
    """Straight-line pose sequence from from_pose to to_pose.

    round(delta_s * record_hz) equal intervals, so n+1 poses with exact
    endpoints; positions are equally spaced along the line and rotations
    follow the shortest geodesic.
    """
    n = int(round(cfg.delta_s * cfg.record_hz))
    if n < 1:
        raise ValueError("delta_s * record_hz must round to at least one interval")
    return [interp_pose(from_pose, to_pose, j / n) for j in range(n + 1)]


def _goal_model(demo: Trajectory, merge_index: int):
    """Infer how observations depend on pose near a demo waypoint.

    Returns ("static", goal pose in world) when the goal object is
    stationary there, or ("attached", goal pose in EE frame) when it is
    rigidly carried by the end-effector (its EE-relative pose constant
    while the EE moves). Decided by comparing both hypotheses across the
    nearest neighboring waypoint with EE motion.
    """
    wp = demo.waypoints[merge_index]
    world = compose(wp.ee_pose, wp.observation.goal_in_ee)
    for u in list(range(merge_index + 1, len(demo))) + list(range(merge_index - 1, -1, -1)):
        other = demo.waypoints[u]
        moved = float(np.linalg.norm(other.ee_pose.position - wp.ee_pose.position))
        if moved < 1e-9:
            continue
        world_u = compose(other.ee_pose, other.observation.goal_in_ee)
        static_err = float(np.linalg.norm(world_u.position - world.position))
        rel_err = float(np.linalg.norm(other.observation.goal_in_ee.position
                                       - wp.observation.goal_in_ee.position))
        if static_err <= rel_err:
            return "static", world
        return "attached", wp.observation.goal_in_ee
    return "static", world


def _segment_observation(pose: Pose, model, gripper: int) -> Observation:
    kind, goal = model
    if kind == "attached":
        return Observation(goal, gripper)
    return Observation(relative_pose(pose, goal), gripper)


def subtrajectory(demo: Trajectory, start: int, source_tag: str) -> Trajectory:
    """Suffix of a trajectory from index start, reindexed from 0."""
    wps = [Waypoint(t, wp.ee_pose, wp.observation, wp.action)
           for t, wp in enumerate(demo.waypoints[start:])]
    return Trajectory(tuple(wps), source_tag)


def augment_segment(demo: Trajectory, boundary: PrecisionBoundary,
                    cfg: AugmentationConfig, rng: Rng,
                    source_tag: str = "sart_aug") -> AugmentedSegment:
    """One augmented trajectory for one boundary, with provenance.

    Samples a pose on the boundary sphere, synthesizes the reconnecting
    segment (reversed so it runs sample -> reconnection target), and, with
    merge_demo, concatenates the demonstration suffix. The gripper holds
    the reconnection waypoint's state throughout the segment; observations
    are recomputed at each synthesized pose from the goal model inferred
    from the demonstration.
    """
    center_pose = boundary.center_pose
    if cfg.position_aug:
        pos = sample_sphere_point(boundary.center, boundary.radius, rng,
                                  cfg.sphere_sampling)
    else:
        pos = boundary.center
    if cfg.orientation_aug:
        rot = sample_rotation_perturbation(center_pose.rotation, boundary.radius,
                                           cfg.nu_r, rng)
    else:
        rot = center_pose.rotation
    sample_pose = Pose(pos, rot)

    if cfg.return_center:
        merge_index = boundary.key_index
        target_pose = center_pose
    else:
        try:
            merge_index = find_convergence_waypoint(
                demo, boundary.key_index, boundary.center, boundary.radius)
        except NoConvergenceError as exc:
            raise NoConvergenceError(f"boundary {boundary.boundary_id}: {exc}") from exc
        target_pose = demo.waypoints[merge_index].ee_pose

    outbound = generate_segment(target_pose, sample_pose, cfg)
    gripper = demo.waypoints[merge_index].observation.gripper_state
    model = _goal_model(demo, merge_index)
    observations = [_segment_observation(p, model, gripper) for p in outbound]
    segment = reverse_segment(
        trajectory_from_poses(outbound, observations, source_tag))

    if cfg.merge_demo:
        suffix = subtrajectory(demo, merge_index, source_tag)
        result = concat(segment, suffix)
    else:
        result = segment
    return AugmentedSegment(result, boundary.boundary_id, sample_pose, merge_index)


def augment_once(demo: Trajectory, boundary: PrecisionBoundary,
                 cfg: AugmentationConfig, rng: Rng) -> Trajectory:
    return augment_segment(demo, boundary, cfg, rng).trajectory


def build_dataset(demo: Trajectory, ann: AnnotationSet, cfg: AugmentationConfig,
                  task_name: str = "unknown",
                  source_tag: str = "sart_aug") -> Dataset:
    """Demonstration plus I*K augmented trajectories, in (i, k) order.

    The rng for boundary ordinal i (1-based) and repeat k is derived from
    (master_seed, i, k), so any subset regenerates identically.
    """
    t0 = time.perf_counter()
    base = Rng(cfg.master_seed)
    trajectories = [demo]
    for i, boundary in enumerate(ann.boundaries, start=1):
        for k in range(1, cfg.K + 1):
            seg = augment_segment(demo, boundary, cfg, base.derive(i, k), source_tag)
            trajectories.append(seg.trajectory)
    metadata = {
        "task": task_name,
        "seed": str(cfg.master_seed),
        "config": cfg.digest(),
        "source": source_tag,
        "boundaries": str(len(ann)),
        "samples_per_boundary": str(cfg.K),
    }
    log.info("augmented %d trajectories from %d boundaries in %.2f s",
             len(trajectories) - 1, len(ann), time.perf_counter() - t0)
    return Dataset(tuple(trajectories), metadata)


def miles_annotations(demo: Trajectory, demo_id: str = "demo") -> AnnotationSet:
    """Fixed 2 cm boundary at every demonstration waypoint."""
    boundaries = tuple(boundary_at(demo, f"m{t}", t, MILES_RADIUS)
                       for t in range(len(demo)))
    return AnnotationSet(demo_id, boundaries)


def miles_build_dataset(demo: Trajectory, cfg: AugmentationConfig,
                        task_name: str = "unknown") -> Dataset:
    """Fixed-sphere baseline: every-waypoint 2 cm spheres, return to center."""
    ann = miles_annotations(demo)
    miles_cfg = replace(cfg, return_center=True)
    return build_dataset(demo, ann, miles_cfg, task_name, source_tag="miles_aug")
