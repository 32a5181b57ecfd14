import math

import numpy as np
import pytest

from sartbench.geometry import (
    Pose,
    Rng,
    axis_angle_to_rotation,
    rotation_difference,
    sample_unit_axis,
)
from sartbench.trajectory import (
    Action,
    Dataset,
    DatasetFormatError,
    DatasetValidationError,
    Observation,
    Trajectory,
    Waypoint,
    action_between,
    apply_action,
    concat,
    load_dataset,
    reverse_segment,
    save_dataset,
    trajectory_from_poses,
)


def rand_pose(rng):
    axis = sample_unit_axis(rng)
    return Pose(rng.uniform(-0.5, 0.5, 3),
                axis_angle_to_rotation(axis, rng.uniform(-2, 2)))


def obs_for(pose, goal, gripper=0):
    from sartbench.geometry import relative_pose
    return Observation(relative_pose(pose, goal), gripper)


def line_trajectory(n=6, gripper=0, tag="demo"):
    goal = Pose.from_translation([0, 0.3, 0])
    poses = [Pose.from_translation([0.01 * t, 0, 0.2]) for t in range(n)]
    observations = [obs_for(p, goal, gripper) for p in poses]
    return trajectory_from_poses(poses, observations, tag)


def test_action_between_identity():
    p = Pose.from_translation([0.1, 0.2, 0.3])
    a = action_between(p, p, 0)
    assert np.linalg.norm(a.delta.position) == 0.0


def test_action_between_frame_aligned_step():
    p = Pose.from_translation([0.05, 0.0, 0.1])
    q = Pose.from_translation([0.06, 0.0, 0.1])
    a = action_between(p, q, 1)
    assert np.allclose(a.delta.position, [0.01, 0, 0], atol=1e-15)


def test_action_round_trip_10k():
    rng = Rng(21)
    worst = 0.0
    for _ in range(10_000):
        p, q = rand_pose(rng), rand_pose(rng)
        back = apply_action(p, action_between(p, q, 0))
        worst = max(worst, float(np.linalg.norm(back.position - q.position)),
                    rotation_difference(back.rotation, q.rotation))
    assert worst <= 1e-12


def test_oversized_step_warns_but_passes(caplog):
    import logging
    p = Pose.identity()
    q = Pose.from_translation([0.2, 0, 0])
    with caplog.at_level(logging.WARNING, logger="sartbench.trajectory"):
        action_between(p, q, 0)
    assert any("max step" in r.message for r in caplog.records)


def test_trajectory_requires_consecutive_indices():
    traj = line_trajectory()
    wps = list(traj.waypoints)
    wps[2] = Waypoint(7, wps[2].ee_pose, wps[2].observation, wps[2].action)
    with pytest.raises(ValueError):
        Trajectory(tuple(wps), "demo")


def test_trajectory_continuity_enforced():
    traj = line_trajectory()
    wps = list(traj.waypoints)
    bad = Waypoint(3, Pose.from_translation([0.9, 0.9, 0.9]),
                   wps[3].observation, wps[3].action)
    wps[3] = bad
    with pytest.raises(ValueError):
        Trajectory(tuple(wps), "demo")


def test_replaying_stored_actions_reproduces_poses():
    traj = line_trajectory(12)
    pose = traj.waypoints[0].ee_pose
    for t in range(len(traj) - 1):
        pose = apply_action(pose, traj.waypoints[t].action)
        err = np.linalg.norm(pose.position - traj.waypoints[t + 1].ee_pose.position)
        assert err <= 1e-9


def test_reverse_single_waypoint_unchanged():
    traj = line_trajectory(1)
    rev = reverse_segment(traj)
    assert rev.waypoints[0].ee_pose == traj.waypoints[0].ee_pose


def test_reverse_is_involution_on_poses():
    traj = line_trajectory(9)
    twice = reverse_segment(reverse_segment(traj))
    for a, b in zip(traj.waypoints, twice.waypoints):
        assert a.ee_pose == b.ee_pose


def test_reverse_two_pose_segment_action_flips():
    traj = line_trajectory(2)
    rev = reverse_segment(traj)
    fwd = traj.waypoints[0].action.delta.position
    back = rev.waypoints[0].action.delta.position
    assert np.allclose(back, -fwd, atol=1e-12)
    assert [wp.ee_pose for wp in rev.waypoints] == \
        [wp.ee_pose for wp in traj.waypoints][::-1]


def test_concat_lengths_and_junction():
    a = line_trajectory(5)
    goal = Pose.from_translation([0, 0.3, 0])
    start = a.waypoints[-1].ee_pose
    poses = [Pose.from_translation(start.position + [0, 0.01 * t, 0])
             for t in range(7)]
    b = trajectory_from_poses(poses, [obs_for(p, goal) for p in poses], "demo")
    joined = concat(a, b)
    assert len(joined) == 5 + 7 - 1
    assert [wp.index for wp in joined.waypoints] == list(range(11))


def test_concat_keeps_tail_junction_action():
    a = line_trajectory(3)
    goal = Pose.from_translation([0, 0.3, 0])
    start = a.waypoints[-1].ee_pose
    poses = [Pose.from_translation(start.position + [0, 0.02 * t, 0])
             for t in range(2)]
    b = trajectory_from_poses(poses, [obs_for(p, goal) for p in poses], "demo")
    joined = concat(a, b)
    assert joined.waypoints[2].action == b.waypoints[0].action


def test_concat_rejects_junction_mismatch():
    a = line_trajectory(4)
    goal = Pose.from_translation([0, 0.3, 0])
    poses = [Pose.from_translation([0.5 + 0.01 * t, 0, 0.2]) for t in range(3)]
    b = trajectory_from_poses(poses, [obs_for(p, goal) for p in poses], "demo")
    with pytest.raises(ValueError):
        concat(a, b)


def test_concat_associative_on_pose_sequences():
    goal = Pose.from_translation([0, 0.3, 0])

    def seg(x0, n):
        poses = [Pose.from_translation([x0 + 0.01 * t, 0, 0.2]) for t in range(n)]
        return trajectory_from_poses(poses, [obs_for(p, goal) for p in poses],
                                     "demo")

    a, b, c = seg(0.0, 3), seg(0.02, 4), seg(0.05, 3)
    left = concat(concat(a, b), c)
    right = concat(a, concat(b, c))
    assert [w.ee_pose for w in left.waypoints] == [w.ee_pose for w in right.waypoints]


def make_dataset():
    return Dataset((line_trajectory(6), line_trajectory(4, tag="sart_aug")),
                   {"task": "peg_in_hole", "seed": "7", "config": "abc123"})


def test_dataset_round_trip(tmp_path):
    d = make_dataset()
    path = tmp_path / "d.traj"
    save_dataset(d, path)
    assert load_dataset(path) == d


def test_dataset_double_save_byte_identical(tmp_path):
    d = make_dataset()
    p1, p2 = tmp_path / "a.traj", tmp_path / "b.traj"
    save_dataset(d, p1)
    save_dataset(d, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_save_load_save_idempotent(tmp_path):
    d = make_dataset()
    p1, p2 = tmp_path / "a.traj", tmp_path / "b.traj"
    save_dataset(d, p1)
    save_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_non_unit_quaternion(tmp_path):
    d = make_dataset()
    path = tmp_path / "d.traj"
    save_dataset(d, path)
    lines = path.read_text().splitlines()
    idx = next(i for i, l in enumerate(lines) if l.startswith("wp 1 "))
    fields = lines[idx].split()
    fields[5] = "0.7"  # qw component of the ee pose
    lines[idx] = " ".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetValidationError) as err:
        load_dataset(path)
    assert "waypoint 1" in str(err.value)


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.traj"
    path.write_text("#sartbench-dataset v1\nmeta task=x\nmeta seed=1\n"
                    "meta config=c\ntrajectory source=demo len=1\nwp zero\nend\n")
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(path)
    assert "line 6" in str(err.value)


def test_load_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.traj"
    path.write_text("not a dataset\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_load_rejects_bad_gripper(tmp_path):
    d = make_dataset()
    path = tmp_path / "d.traj"
    save_dataset(d, path)
    lines = path.read_text().splitlines()
    idx = next(i for i, l in enumerate(lines) if l.startswith("wp 0 "))
    fields = lines[idx].split()
    fields[16] = "3"
    lines[idx] = " ".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetValidationError):
        load_dataset(path)


def test_dataset_requires_metadata_keys():
    with pytest.raises(ValueError):
        Dataset((line_trajectory(3),), {"task": "x"})


def test_observation_gripper_validated():
    with pytest.raises(ValueError):
        Observation(Pose.identity(), 2)
    with pytest.raises(ValueError):
        Action(Pose.identity(), -1)
