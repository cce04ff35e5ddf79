"""Embedded kinematic world: demo recording, plan execution, and scoring.

No dynamics: commanded end-effector poses are tracked exactly through
interpolated sub-steps, attached objects follow rigidly, and success measures
planning correctness. Noise injection perturbs only the observed planning
copies of the clouds, never the ground truth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .adaptation import ConstraintStore, SceneGraph, adapt_trajectory
from .descriptor import FieldConfig
from .errors import NodTampError
from .geometry import Pose, PointCloud, compose, interpolate, invert, pose_delta
from .motion import (
    GRIPPER_OFFSETS,
    GRIPPER_RADIUS,
    POINT_RADIUS,
    CollisionModel,
    MotionQuery,
    plan_motion,
)
from .planner import GoalSpec, Plan, PlanSkeleton
from .skills import EE, HAND_OBJECT, SkillRecord

SUBSTEP_TRANS = 0.005
SUBSTEP_ROT = 0.05


def chamfer_distance(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance between two clouds."""
    ta, tb = cKDTree(a.points), cKDTree(b.points)
    d_ab, _ = tb.query(a.points, k=1)
    d_ba, _ = ta.query(b.points, k=1)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


@dataclass
class World:
    """Kinematic scene with a free-flying gripper."""

    scene: SceneGraph
    delta: float = 1.5 * POINT_RADIUS  # contact threshold
    point_radius: float = POINT_RADIUS
    gripper_radius: float = GRIPPER_RADIUS
    gripper_offsets: np.ndarray = field(default_factory=lambda: GRIPPER_OFFSETS.copy())
    seed: int = 0
    log: list = field(default_factory=list)
    observed_clouds: dict[str, PointCloud] | None = None  # noisy planning copies

    @property
    def ee_pose(self) -> Pose:
        return self.scene.ee_pose

    def gripper_points(self) -> np.ndarray:
        return self.scene.ee_pose.apply(self.gripper_offsets)

    def observation(self) -> SceneGraph:
        """Planning copy of the scene, with injected noise when present."""
        obs = self.scene.copy()
        if self.observed_clouds is not None:
            for name, cloud in self.observed_clouds.items():
                obs.entries[name].cloud = cloud
        return obs


def step(world: World, ee_target: Pose) -> World:
    """Move the end-effector to the target through bounded sub-steps."""
    start = world.scene.ee_pose
    dt, dr = pose_delta(start, ee_target)
    n = max(1, int(np.ceil(dt / SUBSTEP_TRANS)), int(np.ceil(dr / SUBSTEP_ROT)))
    for i in range(1, n + 1):
        world.scene.set_ee_pose(interpolate(start, ee_target, i / n))
    world.log.append({"ee": ee_target.to_json(), "holding": world.scene.attached_to_ee()})
    return world


def _gripper_surface_distance(world: World, cloud: PointCloud) -> float:
    tree = cKDTree(cloud.points)
    d, _ = tree.query(world.gripper_points(), k=1)
    return float(np.min(d)) - world.gripper_radius - world.point_radius


def grip(world: World, close: bool) -> tuple[World, list[dict]]:
    """Close: attach the nearest reachable object; open: detach everything."""
    events: list[dict] = []
    if close:
        best, best_d = None, np.inf
        for name in sorted(world.scene.entries):
            e = world.scene.entries[name]
            if e.parent == EE:
                continue
            d = _gripper_surface_distance(world, e.cloud)
            if d < best_d:
                best, best_d = name, d
        if best is not None and best_d < world.delta:
            rel = compose(invert(world.scene.ee_pose), world.scene.entries[best].pose)
            world.scene.attach(best, EE, rel)
            events.append({"event": "attach", "object": best, "distance": best_d})
        else:
            events.append({"event": "no-attachment"})
    else:
        for name in world.scene.attached_to_ee():
            world.scene.detach(name)
            events.append({"event": "detach", "object": name})
    return world, events


def detect_contacts(world: World) -> list[tuple[tuple[str, str], float]]:
    """Entity pairs (objects and ee-object) within the contact threshold."""
    names = sorted(world.scene.entries)
    clouds = {n: world.scene.entries[n].cloud for n in names}
    trees = {n: cKDTree(clouds[n].points) for n in names}
    ee_pts = world.gripper_points()
    out = []
    for i, a in enumerate(names):
        d, _ = trees[a].query(ee_pts, k=1)
        dmin = float(np.min(d))
        if dmin < world.delta:
            out.append(((EE, a), dmin))
        for b in names[i + 1 :]:
            d, _ = trees[b].query(clouds[a].points, k=1)
            dmin = float(np.min(d))
            if dmin < world.delta:
                out.append(((a, b), dmin))
    return out


def check_goal(
    world: World, goal: GoalSpec, eps: float = 0.01
) -> tuple[bool, dict[str, float]]:
    """Success iff every goal object's achieved cloud is within eps chamfer."""
    scores = {}
    for name, target in sorted(goal.clouds.items()):
        scores[name] = chamfer_distance(world.scene.entries[name].cloud, target)
    return all(v < eps for v in scores.values()), scores


def inject_noise(world: World, sigma: float, seed: int) -> World:
    """Gaussian perturbation of the observed (planning) clouds only."""
    rng = np.random.default_rng(seed)
    noisy = {}
    for name in sorted(world.scene.entries):
        cloud = world.scene.entries[name].cloud
        pts = cloud.points + (rng.normal(size=cloud.points.shape) * sigma if sigma > 0 else 0.0)
        noisy[name] = PointCloud(pts, cloud.frame)
    world.observed_clouds = noisy
    return world


def _tracking_collision(world: World, exclude: set[str]) -> bool:
    """Gripper-sphere contact with any non-excluded, non-held cloud."""
    pts = []
    for name in sorted(world.scene.entries):
        e = world.scene.entries[name]
        if name in exclude or e.parent == EE:
            continue
        pts.append(e.cloud.points)
    if not pts:
        return False
    tree = cKDTree(np.concatenate(pts))
    d, _ = tree.query(world.gripper_points(), k=1)
    return float(np.min(d)) < world.point_radius + world.gripper_radius


def execute_plan(
    world: World,
    skeleton: PlanSkeleton,
    plan: Plan,
    library: list[SkillRecord],
    cfg: FieldConfig,
    goal: GoalSpec | None = None,
    goal_eps: float = 0.01,
    motion_seed: int = 0,
    bounds_lo=None,
    bounds_hi=None,
) -> dict:
    """Adapt, bridge, and track a plan; report per-stage outcomes and timings.

    Adaptation runs on the observed scene copy while tracking and failure
    checks run against the ground-truth world. A gripper collision with a
    non-participating cloud, a failed grasp, or a motion/adaptation error
    fails the stage and halts execution.
    """
    t_start = time.perf_counter()
    obs = world.observation()
    store = ConstraintStore()
    by_id = {r.demo_id: r for r in library}
    timing = {"adaptation": 0.0, "motion": 0.0, "tracking": 0.0}
    stages = []
    contacts_log = []
    halted = False

    for stage_idx, (skel_step, (demo_id, _cost)) in enumerate(zip(skeleton.steps, plan.chosen)):
        rec = by_id[demo_id]
        stage = {"skill": skel_step.skill, "demo_id": demo_id, "ok": False, "failure": None}

        obstacles_pre = {
            name: obs.entries[name].cloud.points
            for name in sorted(obs.entries)
            if obs.entries[name].parent != EE
        }
        held_obs = obs.attached_to_ee()

        t0 = time.perf_counter()
        try:
            result = adapt_trajectory(
                rec, obs, store, cfg, source=skel_step.source, target=skel_step.target
            )
        except NodTampError as e:
            timing["adaptation"] += time.perf_counter() - t0
            stage["failure"] = e.kind
            stages.append(stage)
            halted = True
            break
        timing["adaptation"] += time.perf_counter() - t0

        # Transit (empty hand) or transfer (holding) to the skill start.
        t0 = time.perf_counter()
        holding = held_obs[0] if held_obs else None
        attached_local = None
        if holding is not None:
            # Held cloud expressed in the ee frame via the stored attachment.
            ee_inv = invert(world.scene.ee_pose)
            attached_local = ee_inv.apply(world.scene.entries[holding].cloud.points)
        obstacle_pts = (
            np.concatenate([p for n, p in obstacles_pre.items() if n != holding])
            if obstacles_pre
            else np.zeros((0, 3))
        )
        model = CollisionModel(
            obstacle_pts,
            point_radius=world.point_radius,
            gripper_radius=world.gripper_radius,
            gripper_offsets=world.gripper_offsets,
            attached_points_local=attached_local,
        )
        all_pts = np.concatenate([e.cloud.points for e in world.scene.entries.values()])
        lo = all_pts.min(axis=0) - 0.3 if bounds_lo is None else np.asarray(bounds_lo)
        hi = all_pts.max(axis=0) + 0.3 if bounds_hi is None else np.asarray(bounds_hi)
        lo = np.minimum(lo, np.minimum(world.ee_pose.t, result.ee_targets[0].t) - 0.05)
        hi = np.maximum(hi, np.maximum(world.ee_pose.t, result.ee_targets[0].t) + 0.05)
        query = MotionQuery(
            start=world.ee_pose,
            goal=result.ee_targets[0],
            holding=holding,
            bounds_lo=lo,
            bounds_hi=hi,
            seed=motion_seed + stage_idx,
        )
        try:
            path = plan_motion(query, model)
        except NodTampError as e:
            timing["motion"] += time.perf_counter() - t0
            stage["failure"] = e.kind
            stages.append(stage)
            halted = True
            break
        timing["motion"] += time.perf_counter() - t0

        # Track the bridge and the adapted skill in the ground-truth world.
        t0 = time.perf_counter()
        for pose in path[1:]:
            step(world, pose)
        exclude = {skel_step.source} if rec.mode == HAND_OBJECT else set()
        collided = False
        for pose in result.ee_targets:
            step(world, pose)
            if _tracking_collision(world, exclude):
                collided = True
                break
        timing["tracking"] += time.perf_counter() - t0
        if collided:
            stage["failure"] = "collision"
            stages.append(stage)
            halted = True
            break

        if result.grip == "close":
            _, events = grip(world, True)
            attached = [e.get("object") for e in events if e["event"] == "attach"]
            if attached != [skel_step.source]:
                stage["failure"] = "grasp"
                stages.append(stage)
                halted = True
                break
        else:
            grip(world, False)

        contacts_log.append(
            {"stage": stage_idx, "contacts": [[list(k), d] for k, d in detect_contacts(world)]}
        )
        stage["ok"] = True
        stages.append(stage)

    report = {
        "stages": stages,
        "completed": not halted,
        "contacts": contacts_log,
    }
    if goal is not None and goal.clouds:
        ok, scores = check_goal(world, goal, goal_eps)
        report["success"] = bool(ok and not halted)
        report["chamfer"] = scores
    else:
        report["success"] = not halted
    timing["total"] = time.perf_counter() - t_start
    report["timing"] = timing
    return report
