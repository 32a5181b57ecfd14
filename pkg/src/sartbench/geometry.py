"""Rigid-body pose algebra and seeded stochastic sampling primitives.

Conventions:
    - Positions are 3-vectors in meters, rotations are 3x3 matrices.
    - ``compose(a, b)`` applies ``b`` then ``a``.
    - Quaternions are (w, x, y, z), canonicalized to w >= 0 on export.
    - Algebraic identities hold to ALGEBRA_TOL; orthonormality of any
      produced rotation holds to ORTHO_TOL (accumulated-error allowance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9
ALGEBRA_TOL = 1e-12
UNIT_TOL = 1e-9


class GeometryError(ValueError):
    """Domain error on geometric inputs (bad rotation, range violation)."""


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3).copy()
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite 3-vector: {a!r}")
    return a


def validate_rotation(matrix: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    """Check R^T R = I and det(R) = 1 within tol; returns the matrix."""
    r = np.asarray(matrix, dtype=np.float64).reshape(3, 3)
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise GeometryError(f"rotation is not orthonormal (max error {err:.3e})")
    det = float(np.linalg.det(r))
    if abs(det - 1.0) > tol:
        raise GeometryError(f"rotation determinant {det!r} != 1")
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid 6-DoF transform: position (meters) + rotation matrix."""

    position: np.ndarray
    rotation: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.position, other.position)
                and np.array_equal(self.rotation, other.rotation))

    def __post_init__(self):
        p = _as_vec3(self.position)
        r = validate_rotation(self.rotation)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    @staticmethod
    def from_translation(p) -> "Pose":
        return Pose(_as_vec3(p), np.eye(3))


def rot_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation product with one Newton-Schulz orthonormalization step.

    Chains of compose/relative_pose round trips double any symmetric
    orthonormality error per iteration (R^T is only the inverse of an
    exact rotation), which grows 1e-16 to 1e-9 within ~25 steps; the
    correction keeps accumulated error at machine level.
    """
    m = a @ b
    return 0.5 * m @ (3.0 * np.eye(3) - m.T @ m)


def compose(a: Pose, b: Pose) -> Pose:
    """Transform applying b then a (a.b); associative."""
    return Pose(a.rotation @ b.position + a.position,
                rot_mul(a.rotation, b.rotation))


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(-(rt @ p.position), rt)


def relative_pose(reference: Pose, target: Pose) -> Pose:
    """Target expressed in reference's frame: compose(reference, result) == target."""
    rt = reference.rotation.T
    return Pose(rt @ (target.position - reference.position),
                rot_mul(rt, target.rotation))


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in [0, pi].

    acos conditioning floors the result around sqrt(eps) ~ 1.5e-8; use
    rotation_difference for comparisons tighter than that.
    """
    c = (float(np.trace(r)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def rotation_difference(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise difference of two rotation matrices.

    Well-conditioned down to machine precision and comparable to the
    geodesic angle for small differences.
    """
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def axis_angle_to_rotation(axis, angle: float) -> np.ndarray:
    """Rotation matrix for a unit axis and an angle (Rodrigues' formula).

    Raises GeometryError if the axis is not unit length within 1e-9.
    """
    ax = _as_vec3(axis)
    n = float(np.linalg.norm(ax))
    if abs(n - 1.0) > UNIT_TOL:
        raise GeometryError(f"axis norm {n!r} is not 1")
    x, y, z = ax
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_to_axis_angle(r: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle, radians) of a rotation matrix.

    Angle is in [0, pi]; the zero rotation maps to the zero vector. Near
    pi the axis is recovered from the symmetric part for stability.
    """
    angle = rotation_angle(r)
    if angle < 1e-12:
        return np.zeros(3)
    if angle < math.pi - 1e-6:
        v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        return (angle / (2.0 * math.sin(angle))) * v
    # Near pi: axis from the dominant column of R + I.
    m = r + np.eye(3)
    col = int(np.argmax(np.diag(m)))
    axis = m[:, col] / np.linalg.norm(m[:, col])
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if float(axis @ v) < 0.0:
        axis = -axis
    return axis * angle


def rotation_vector_to_rotation(v) -> np.ndarray:
    """Inverse of rotation_to_axis_angle; zero vector gives identity."""
    vec = _as_vec3(v)
    angle = float(np.linalg.norm(vec))
    if angle < 1e-12:
        return np.eye(3)
    return axis_angle_to_rotation(vec / angle, angle)


def interp_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Interpolate: linear in position, shortest geodesic in rotation.

    s must lie in [0, 1]; the endpoints are returned exactly.
    """
    if not 0.0 <= s <= 1.0:
        raise GeometryError(f"interpolation parameter {s!r} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    rel = rot_mul(a.rotation.T, b.rotation)
    vec = rotation_to_axis_angle(rel)
    rot = rot_mul(a.rotation, rotation_vector_to_rotation(s * vec))
    pos = (1.0 - s) * a.position + s * b.position
    return Pose(pos, rot)


# --- quaternion conversions (w, x, y, z) --------------------------------


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 canonicalization."""
    m = np.asarray(r, dtype=np.float64)
    t = float(np.trace(m))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                          (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
        elif i == 1:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                          0.25 * s, (m[1, 2] + m[2, 1]) / s])
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                          (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return canonical_quat(q)


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0 (first nonzero component positive when w == 0)."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q
    raise GeometryError("zero quaternion")


def quat_to_rotation(q, tol: float = UNIT_TOL) -> np.ndarray:
    """Rotation matrix of a unit quaternion; non-unit input is an error."""
    qa = np.asarray(q, dtype=np.float64).reshape(4)
    n = float(np.linalg.norm(qa))
    if abs(n - 1.0) > tol:
        raise GeometryError(f"quaternion norm {n!r} is not 1")
    w, x, y, z = qa / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# --- seeded sampling -----------------------------------------------------


MASK64 = (1 << 64) - 1


@dataclass
class Rng:
    """Deterministic pseudo-random stream (PCG64), stable across platforms.

    A child stream for parallel or per-item work is derived with
    ``derive(*keys)``: the child is seeded from the integer sequence
    (seed, *path, *keys), so any (master seed, index...) combination maps
    to one reproducible stream. Streams are single-owner; never share one
    generator across workers.
    """

    seed: int
    path: tuple = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        entropy = [self.seed & MASK64] + [int(k) & MASK64 for k in self.path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, *keys: int) -> "Rng":
        return Rng(self.seed, self.path + tuple(int(k) for k in keys))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.normal(size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_sphere_point(center, radius: float, rng: Rng,
                        mode: str = "angle_uniform") -> np.ndarray:
    """Random point on a sphere surface.

    The default draws azimuth psi ~ U[0, 2pi) and polar angle
    phi ~ U[0, pi) and returns
    center + radius * (sin phi cos psi, sin phi sin psi, cos phi),
    which concentrates samples at the poles. mode="area_uniform" draws
    cos phi ~ U[-1, 1] instead, giving uniform surface density.

    Raises GeometryError for a negative radius or unknown mode.
    """
    c = _as_vec3(center)
    if radius < 0.0:
        raise GeometryError(f"negative radius {radius!r}")
    psi = rng.uniform(0.0, 2.0 * math.pi)
    if mode == "angle_uniform":
        phi = rng.uniform(0.0, math.pi)
    elif mode == "area_uniform":
        phi = math.acos(rng.uniform(-1.0, 1.0))
    else:
        raise GeometryError(f"unknown sphere sampling mode {mode!r}")
    d = np.array([math.sin(phi) * math.cos(psi),
                  math.sin(phi) * math.sin(psi),
                  math.cos(phi)])
    return c + radius * d


def sample_unit_axis(rng: Rng) -> np.ndarray:
    """Unit vector uniform on the sphere (area-uniform).

    Normalized Gaussian triple; near-zero norms (< 1e-6) are redrawn.
    """
    while True:
        v = rng.normal(size=3)
        n = float(np.linalg.norm(v))
        if n >= 1e-6:
            return v / n


def sample_rotation_perturbation(base: np.ndarray, radius: float, nu_r: float,
                                 rng: Rng) -> np.ndarray:
    """Perturb a base rotation within a radius-scaled angular budget.

    The angular budget is alpha_max = nu_r * radius. An angle
    alpha ~ U[-alpha_max, alpha_max] and an area-uniform unit axis are
    drawn and the result is base @ R(axis, alpha), so the geodesic
    deviation from base never exceeds alpha_max. A zero budget returns
    base unchanged.
    """
    if radius < 0.0 or nu_r < 0.0:
        raise GeometryError("radius and nu_r must be nonnegative")
    alpha_max = nu_r * radius
    if alpha_max == 0.0:
        return np.asarray(base, dtype=np.float64)
    alpha = rng.uniform(-alpha_max, alpha_max)
    axis = sample_unit_axis(rng)
    return rot_mul(np.asarray(base, dtype=np.float64),
                   axis_angle_to_rotation(axis, alpha))
