import math

import numpy as np
import pytest

from sartbench.geometry import (
    GeometryError,
    Pose,
    Rng,
    axis_angle_to_rotation,
    canonical_quat,
    compose,
    interp_pose,
    inverse,
    quat_to_rotation,
    relative_pose,
    rotation_angle,
    rotation_difference,
    rotation_to_axis_angle,
    rotation_to_quat,
    sample_rotation_perturbation,
    sample_sphere_point,
    sample_unit_axis,
    validate_rotation,
)


def random_pose(rng):
    axis = sample_unit_axis(rng)
    angle = rng.uniform(-math.pi, math.pi)
    return Pose(rng.uniform(-1, 1, 3), axis_angle_to_rotation(axis, angle))


def test_compose_identity():
    rng = Rng(1)
    p = random_pose(rng)
    q = compose(Pose.identity(), p)
    assert np.allclose(q.position, p.position, atol=1e-12)
    assert rotation_difference(q.rotation, p.rotation) <= 1e-12


def test_compose_inverse_gives_identity():
    rng = Rng(2)
    for _ in range(50):
        p = random_pose(rng)
        q = compose(p, inverse(p))
        assert np.linalg.norm(q.position) <= 1e-12
        assert rotation_difference(q.rotation, np.eye(3)) <= 1e-12


def test_compose_pure_translations_commute():
    a = Pose.from_translation([1, 0, 0])
    b = Pose.from_translation([0, 2, 0])
    assert np.allclose(compose(a, b).position, [1, 2, 0])
    assert np.allclose(compose(b, a).position, [1, 2, 0])


def test_compose_associative():
    rng = Rng(3)
    for _ in range(100):
        a, b, c = (random_pose(rng) for _ in range(3))
        lhs = compose(compose(a, b), c)
        rhs = compose(a, compose(b, c))
        assert np.linalg.norm(lhs.position - rhs.position) <= 1e-10
        assert rotation_difference(lhs.rotation, rhs.rotation) <= 1e-10


def test_relative_pose_self_is_identity():
    rng = Rng(4)
    p = random_pose(rng)
    rel = relative_pose(p, p)
    assert np.linalg.norm(rel.position) <= 1e-12
    assert rotation_difference(rel.rotation, np.eye(3)) <= 1e-12


def test_relative_pose_from_origin():
    ref = Pose.identity()
    target = Pose.from_translation([0, 0, 0.1])
    rel = relative_pose(ref, target)
    assert np.allclose(rel.position, [0, 0, 0.1])
    assert rotation_difference(rel.rotation, np.eye(3)) == 0.0


def test_relative_pose_round_trip_10k():
    rng = Rng(5)
    worst_pos, worst_rot = 0.0, 0.0
    for _ in range(10_000):
        ref = random_pose(rng)
        target = random_pose(rng)
        back = compose(ref, relative_pose(ref, target))
        worst_pos = max(worst_pos, float(np.linalg.norm(back.position - target.position)))
        worst_rot = max(worst_rot, rotation_difference(back.rotation, target.rotation))
    assert worst_pos <= 1e-12
    assert worst_rot <= 1e-12


def test_interp_pose_endpoints_exact():
    rng = Rng(6)
    a, b = random_pose(rng), random_pose(rng)
    assert interp_pose(a, b, 0.0) is a
    assert interp_pose(a, b, 1.0) is b


def test_interp_pose_midpoint_translation():
    a = Pose.identity()
    b = Pose.from_translation([1, 0, 0])
    mid = interp_pose(a, b, 0.5)
    assert np.allclose(mid.position, [0.5, 0, 0])


def test_interp_pose_rejects_out_of_range():
    a = Pose.identity()
    with pytest.raises(GeometryError):
        interp_pose(a, a, 1.5)
    with pytest.raises(GeometryError):
        interp_pose(a, a, -0.1)


def test_interp_pose_geodesic_angle_scales():
    a = Pose.identity()
    b = Pose(np.zeros(3), axis_angle_to_rotation([0, 0, 1], 1.0))
    for s in (0.25, 0.5, 0.75):
        r = interp_pose(a, b, s).rotation
        assert abs(rotation_angle(r) - s) <= 1e-9


def test_axis_angle_zero_gives_identity():
    r = axis_angle_to_rotation([1, 0, 0], 0.0)
    assert rotation_difference(r, np.eye(3)) == 0.0


def test_axis_angle_quarter_turn_about_z():
    r = axis_angle_to_rotation([0, 0, 1], math.pi / 2)
    assert np.allclose(r @ np.array([1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_axis_angle_rejects_non_unit_axis():
    with pytest.raises(GeometryError):
        axis_angle_to_rotation([1, 1, 0], 0.3)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    half = angle / 2.0
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def test_axis_angle_matches_quaternion_construction():
    rng = Rng(7)
    for _ in range(200):
        axis = sample_unit_axis(rng)
        angle = rng.uniform(-math.pi, math.pi)
        via_matrix = axis_angle_to_rotation(axis, angle)
        via_quat = quat_to_rotation(canonical_quat(quat_from_axis_angle(axis, angle)))
        assert rotation_difference(via_matrix, via_quat) <= 1e-12


def test_rotation_axis_angle_round_trip():
    rng = Rng(8)
    for _ in range(500):
        axis = sample_unit_axis(rng)
        angle = rng.uniform(0.0, math.pi - 1e-3)
        r = axis_angle_to_rotation(axis, angle)
        vec = rotation_to_axis_angle(r)
        r2 = axis_angle_to_rotation(vec / np.linalg.norm(vec), np.linalg.norm(vec)) \
            if np.linalg.norm(vec) > 0 else np.eye(3)
        assert rotation_difference(r, r2) <= 1e-9


def test_quaternion_round_trip_and_canonical_w():
    rng = Rng(9)
    for _ in range(500):
        r = random_pose(rng).rotation
        q = rotation_to_quat(r)
        assert q[0] >= 0.0
        assert abs(np.linalg.norm(q) - 1.0) <= 1e-12
        assert rotation_difference(quat_to_rotation(q), r) <= 1e-12


def test_quat_to_rotation_rejects_non_unit():
    with pytest.raises(GeometryError):
        quat_to_rotation([1.0, 0.2, 0.0, 0.0])


def test_sample_sphere_point_zero_radius():
    rng = Rng(10)
    c = np.array([0.3, -0.2, 0.5])
    assert np.allclose(sample_sphere_point(c, 0.0, rng), c)


def test_sample_sphere_point_negative_radius_rejected():
    with pytest.raises(GeometryError):
        sample_sphere_point([0, 0, 0], -0.1, Rng(1))


class _PolarStub:
    """Returns fixed (psi, phi) draws."""

    def __init__(self, psi, phi):
        self.values = [psi, phi]

    def uniform(self, low, high, size=None):
        return self.values.pop(0)


def test_sample_sphere_point_polar_zero_hits_top():
    p = sample_sphere_point([1, 2, 3], 0.5, _PolarStub(0.7, 0.0))
    assert np.allclose(p, [1, 2, 3.5], atol=1e-12)


def test_sample_sphere_point_radius_exact_10k():
    rng = Rng(11)
    c = np.array([0.1, 0.2, 0.3])
    for _ in range(10_000):
        p = sample_sphere_point(c, 0.05, rng)
        assert abs(np.linalg.norm(p - c) - 0.05) <= 1e-9


def test_sample_sphere_point_area_uniform_mode():
    rng = Rng(12)
    zs = [sample_sphere_point(np.zeros(3), 1.0, rng, mode="area_uniform")[2]
          for _ in range(4000)]
    # cos(phi) uniform on [-1, 1]: mean ~0, |z| mean ~0.5
    assert abs(np.mean(zs)) < 0.05
    assert abs(np.mean(np.abs(zs)) - 0.5) < 0.05


def test_sample_sphere_point_angle_uniform_pole_bias():
    rng = Rng(13)
    zs = [sample_sphere_point(np.zeros(3), 1.0, rng)[2] for _ in range(4000)]
    # phi uniform on [0, pi]: |z| mean = 2/pi, noticeably above area-uniform 0.5
    assert abs(np.mean(np.abs(zs)) - 2 / math.pi) < 0.05


def test_sample_rotation_perturbation_zero_budget():
    rng = Rng(14)
    base = axis_angle_to_rotation([0, 0, 1], 0.4)
    assert rotation_difference(
        sample_rotation_perturbation(base, 0.0, 1.0, rng), base) == 0.0
    assert rotation_difference(
        sample_rotation_perturbation(base, 0.05, 0.0, rng), base) == 0.0


def test_sample_rotation_perturbation_bound_10k():
    rng = Rng(15)
    base = axis_angle_to_rotation([1, 0, 0], 0.3)
    bound = 1.0 * 0.05
    for _ in range(10_000):
        r = sample_rotation_perturbation(base, 0.05, 1.0, rng)
        assert rotation_angle(base.T @ r) <= bound + 1e-12
        validate_rotation(r)


def test_sample_rotation_perturbation_rejects_negative():
    with pytest.raises(GeometryError):
        sample_rotation_perturbation(np.eye(3), -0.1, 1.0, Rng(0))


def test_rng_determinism_identical_streams():
    a = Rng(123).uniform(0, 1, 1000)
    b = Rng(123).uniform(0, 1, 1000)
    assert np.array_equal(a, b)


def test_rng_derive_is_deterministic_and_distinct():
    a = Rng(5).derive(1, 2).uniform(0, 1, 10)
    b = Rng(5).derive(1, 2).uniform(0, 1, 10)
    c = Rng(5).derive(2, 1).uniform(0, 1, 10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_all_sampled_rotations_orthonormal_10k():
    rng = Rng(16)
    base = np.eye(3)
    for _ in range(10_000):
        r = sample_rotation_perturbation(base, 0.1, 1.0, rng)
        err = np.abs(r.T @ r - np.eye(3)).max()
        det = abs(np.linalg.det(r) - 1.0)
        assert err <= 1e-9 and det <= 1e-9


def test_pose_rejects_bad_rotation():
    with pytest.raises(GeometryError):
        Pose(np.zeros(3), np.eye(3) * 1.1)
