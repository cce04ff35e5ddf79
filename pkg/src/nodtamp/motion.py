"""Transit/transfer motion planning for a free-flying end-effector.

Collision geometry is spheres: every scene cloud point (radius r), a 5-sphere
gripper body (radius r_g), and, during transfer, the held object's points
carried rigidly in the end-effector frame. Planning is a bidirectional
connect-style tree search over SE(3) with slerp/linear interpolation as the
local steer, followed by shortcut smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, PlanningFailureError, UnreachableGoalError
from .geometry import Pose, interpolate, pose_delta, random_quat

POINT_RADIUS = 0.005
GRIPPER_RADIUS = 0.01

# Palm behind the fingers along -z; two spheres per jaw, 6 cm jaw span in x.
GRIPPER_OFFSETS = np.array(
    [
        [0.0, 0.0, -0.05],
        [0.03, 0.0, -0.03],
        [-0.03, 0.0, -0.03],
        [0.03, 0.0, -0.005],
        [-0.03, 0.0, -0.005],
    ]
)

ROTATION_WEIGHT = 0.1  # meters per radian in the SE(3) nearest-neighbor metric


@dataclass
class CollisionModel:
    """Immutable obstacle set plus the robot's sphere bodies."""

    obstacle_points: np.ndarray
    point_radius: float = POINT_RADIUS
    gripper_radius: float = GRIPPER_RADIUS
    gripper_offsets: np.ndarray = field(default_factory=lambda: GRIPPER_OFFSETS.copy())
    attached_points_local: np.ndarray | None = None  # held cloud in the ee frame

    def __post_init__(self):
        if self.point_radius <= 0 or self.gripper_radius <= 0:
            raise ArgumentError("sphere radii must be positive")
        self.obstacle_points = np.asarray(self.obstacle_points, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.obstacle_points) if len(self.obstacle_points) else None


def check_collision(ee: Pose, model: CollisionModel, holding: bool = False) -> bool:
    """True iff any gripper or attached sphere overlaps an obstacle sphere."""
    if model._tree is None:
        return False
    centers = ee.apply(model.gripper_offsets)
    d, _ = model._tree.query(centers, k=1)
    if float(np.min(d)) < model.point_radius + model.gripper_radius:
        return True
    if holding and model.attached_points_local is not None and len(model.attached_points_local):
        pts = ee.apply(model.attached_points_local)
        d, _ = model._tree.query(pts, k=1)
        if float(np.min(d)) < 2.0 * model.point_radius:
            return True
    return False


@dataclass
class MotionQuery:
    start: Pose
    goal: Pose
    holding: str | None = None
    bounds_lo: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0, -0.2]))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    trans_step: float = 0.02
    rot_step: float = 0.1
    goal_bias: float = 0.1
    max_iters: int = 10000
    shortcut_attempts: int = 100
    seed: int = 0


def _dist(a: Pose, b: Pose) -> float:
    dt, dr = pose_delta(a, b)
    return dt + ROTATION_WEIGHT * dr


def _n_substeps(a: Pose, b: Pose, trans_step: float, rot_step: float) -> int:
    dt, dr = pose_delta(a, b)
    return max(1, int(np.ceil(dt / trans_step)), int(np.ceil(dr / rot_step)))


def densify(path: list[Pose], trans_step: float, rot_step: float) -> list[Pose]:
    """Interpolated waypoints at no more than the given resolution."""
    out = [path[0]]
    for a, b in zip(path, path[1:]):
        n = _n_substeps(a, b, trans_step, rot_step)
        for i in range(1, n + 1):
            out.append(interpolate(a, b, i / n))
    return out


def _edge_free(a: Pose, b: Pose, q: MotionQuery, model: CollisionModel, holding: bool) -> bool:
    # Validate at half the steer resolution: a densified replay of the
    # returned path at trans_step/2, rot_step/2 revisits exactly these poses.
    n = _n_substeps(a, b, q.trans_step / 2.0, q.rot_step / 2.0)
    for i in range(1, n + 1):
        if check_collision(interpolate(a, b, i / n), model, holding):
            return False
    return True


class _Tree:
    def __init__(self, root: Pose):
        self.nodes = [root]
        self.parents = [-1]

    def nearest(self, target: Pose) -> int:
        return int(np.argmin([_dist(n, target) for n in self.nodes]))

    def add(self, pose: Pose, parent: int) -> int:
        self.nodes.append(pose)
        self.parents.append(parent)
        return len(self.nodes) - 1

    def path_to_root(self, idx: int) -> list[Pose]:
        out = []
        while idx != -1:
            out.append(self.nodes[idx])
            idx = self.parents[idx]
        return out


def _extend(
    tree: _Tree, target: Pose, q: MotionQuery, model: CollisionModel, holding: bool
) -> tuple[str, int]:
    """Connect-style extension: repeatedly steer the nearest node toward target."""
    idx = tree.nearest(target)
    while True:
        cur = tree.nodes[idx]
        n = _n_substeps(cur, target, q.trans_step, q.rot_step)
        nxt = interpolate(cur, target, 1.0 / n)
        if not _edge_free(cur, nxt, q, model, holding):
            return "trapped", idx
        idx = tree.add(nxt, idx)
        if n == 1:
            return "reached", idx


def plan_motion(q: MotionQuery, model: CollisionModel) -> list[Pose]:
    """Collision-free path from start to goal; bit-deterministic per seed."""
    holding = q.holding is not None
    if check_collision(q.start, model, holding):
        raise ArgumentError("motion query start is in collision")
    if check_collision(q.goal, model, holding):
        raise UnreachableGoalError("motion query goal is in collision")
    rng = np.random.default_rng(q.seed)

    if _edge_free(q.start, q.goal, q, model, holding):
        return [q.start, q.goal]

    ta, tb = _Tree(q.start), _Tree(q.goal)
    a_is_start = True
    path = None
    for _ in range(q.max_iters):
        if rng.random() < q.goal_bias:
            sample = q.goal if a_is_start else q.start
        else:
            t = q.bounds_lo + rng.random(3) * (q.bounds_hi - q.bounds_lo)
            sample = Pose(random_quat(rng), t)
        status, idx_a = _extend(ta, sample, q, model, holding)
        reached_pose = ta.nodes[idx_a]
        status_b, idx_b = _extend(tb, reached_pose, q, model, holding)
        if status_b == "reached":
            pa = ta.path_to_root(idx_a)[::-1]
            pb = tb.path_to_root(idx_b)
            path = pa + pb[1:] if a_is_start else pb[::-1] + pa[::-1][1:]
            break
        ta, tb = tb, ta
        a_is_start = not a_is_start
    if path is None:
        raise PlanningFailureError("motion planning iteration budget exhausted")
    return _shortcut(path, q, model, holding, rng)


def _path_length(path: list[Pose]) -> float:
    return float(sum(np.linalg.norm(b.t - a.t) for a, b in zip(path, path[1:])))


def _shortcut(
    path: list[Pose], q: MotionQuery, model: CollisionModel, holding: bool, rng
) -> list[Pose]:
    for _ in range(q.shortcut_attempts):
        if len(path) <= 2:
            break
        i, j = sorted(rng.integers(0, len(path), size=2))
        if j - i < 2:
            continue
        if _edge_free(path[i], path[j], q, model, holding):
            path = path[: i + 1] + path[j:]
    return path
