"""Rigid-transform algebra, point-cloud containers, and interpolation.

Quaternions are stored (w, x, y, z) and kept unit-norm after every
construction and composition. All lengths are meters, all angles radians.
Values are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateInputError

_NORM_TOL = 1e-9


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    a.flags.writeable = False
    return a


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_exp(omega: np.ndarray) -> np.ndarray:
    """Unit quaternion for an axis-angle rotation vector."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    angle = float(np.linalg.norm(omega))
    if angle < 1e-14:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = omega / angle
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Axis-angle rotation vector of a unit quaternion (angle in [0, pi])."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    vnorm = float(np.linalg.norm(q[1:]))
    if vnorm < 1e-14:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(vnorm, q[0])
    return angle * (q[1:] / vnorm)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) of a proper rotation matrix."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def random_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via a normalized 4D Gaussian sample."""
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Pose:
    """Rigid SE(3) transform: rotation quaternion (w,x,y,z) + translation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or n < 1e-12:
            raise ArgumentError("quaternion norm is zero or non-finite")
        q = q / n
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", _as_vec3(self.t))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N,3) array or a single 3-vector by R @ x + t."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix().T + self.t

    def to_json(self) -> dict:
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @staticmethod
    def from_json(obj: dict) -> "Pose":
        return Pose(np.asarray(obj["q"], dtype=float), np.asarray(obj["t"], dtype=float))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    return Pose(quat_mul(a.q, b.q), a.apply(b.t))


def invert(p: Pose) -> Pose:
    qc = quat_conj(p.q)
    return Pose(qc, -(quat_to_matrix(qc) @ p.t))


def rotation_angle(p: Pose) -> float:
    """Rotation magnitude in radians."""
    return float(np.linalg.norm(quat_log(p.q)))


def pose_delta(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance, rotation angle) between two poses."""
    d = compose(invert(a), b)
    return float(np.linalg.norm(b.t - a.t)), rotation_angle(d)


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Linear translation, shortest-arc slerp rotation; s in [0, 1]."""
    if not (0.0 <= s <= 1.0):
        raise ArgumentError(f"interpolation parameter {s} outside [0, 1]")
    qa, qb = a.q, b.q
    if float(np.dot(qa, qb)) < 0:
        qb = -qb
    dot = float(np.clip(np.dot(qa, qb), -1.0, 1.0))
    theta = np.arccos(dot)
    if theta < 1e-10:
        q = (1 - s) * qa + s * qb
    else:
        q = (np.sin((1 - s) * theta) * qa + np.sin(s * theta) * qb) / np.sin(theta)
    return Pose(q, (1 - s) * a.t + s * b.t)


@dataclass(frozen=True)
class TangentStep:
    """6-dim tangent increment: axis-angle rotation + translation."""

    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _as_vec3(self.omega))
        object.__setattr__(self, "v", _as_vec3(self.v))

    @staticmethod
    def from_vector(x: np.ndarray) -> "TangentStep":
        x = np.asarray(x, dtype=float).reshape(6)
        return TangentStep(x[:3], x[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])


def exp_step(step: TangentStep) -> Pose:
    """Pose reached from identity by a tangent step."""
    return Pose(quat_exp(step.omega), step.v)


def log_pose(p: Pose) -> TangentStep:
    """Tangent step reaching p from identity; |omega| < pi assumed."""
    return TangentStep(quat_log(p.q), p.t)


def retract(p: Pose, step: TangentStep) -> Pose:
    """Exponential-map retraction: world-frame rotation increment, additive translation."""
    return Pose(quat_mul(quat_exp(step.omega), p.q), p.t + step.v)


@dataclass(frozen=True)
class PointCloud:
    """N x 3 points in meters with a frame label (world or an object id)."""

    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise DegenerateInputError("centroid of an empty cloud")
        return self.points.mean(axis=0)

    def to_json(self) -> dict:
        return {"frame": self.frame, "points": [[float(v) for v in p] for p in self.points]}

    @staticmethod
    def from_json(obj: dict) -> "PointCloud":
        return PointCloud(np.asarray(obj["points"], dtype=float), obj["frame"])


def transform_cloud(t: Pose, p: PointCloud, frame: str | None = None) -> PointCloud:
    """Map every point by R @ x + t. ``frame`` relabels the result (default: keep)."""
    if len(p) == 0:
        raise DegenerateInputError("cannot transform an empty cloud")
    return PointCloud(t.apply(p.points), p.frame if frame is None else frame)
