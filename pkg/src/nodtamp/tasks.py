"""Synthetic tabletop tasks: canonical demo scenes, scripted experts,
randomized task generation, and trial/evaluation orchestration.

Two tasks are provided. ``peg_insertion`` picks a collared peg and seats it
in a stand's bore, with per-scene uniform shape scaling and randomized
planar poses. ``sort_two`` places one cup in an open bin and one in a
covered slot; the bin only admits a rim grasp (a side grasp's knuckles hit
the bin wall) and the slot only admits a handle grasp (a top grasp rides too
high under the slot ceiling), so success requires grasp-strategy selection.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import shapes, sim
from .adaptation import SceneEntry, SceneGraph
from .descriptor import FieldConfig
from .errors import GenerationError, NodTampError
from .geometry import Pose, PointCloud, compose, interpolate, invert, quat_exp, quat_mul
from .planner import GoalSpec, PlanSkeleton, SkeletonStep, plan_random, plan_skills
from .skills import (
    RawDemo,
    SkillRecord,
    build_skill,
    constraint_feature,
    extract_contact_events,
    segment_demo,
)

# Contact threshold for demo segmentation: tight enough that a placement
# registers only on the final descent, not while skimming surfaces.
DEMO_CONTACT_THRESHOLD = 0.005
GOAL_CLEARANCE = 0.002  # placed objects rest this far above the support

TOP_DOWN = quat_exp(np.array([np.pi, 0.0, 0.0]))  # ee z+ points down
RIM_GRASP = quat_mul(quat_exp(np.array([0.0, 0.0, np.pi / 2])), TOP_DOWN)
HANDLE_GRASP = quat_exp(np.array([0.0, -np.pi / 2, 0.0]))  # ee z+ points -x

PEG_GRASP_Z = shapes.PEG_HEIGHT - shapes.COLLAR_HEIGHT / 2
HANDLE_GRASP_Z = 0.048
EE_START = Pose(TOP_DOWN, np.array([0.0, 0.0, 0.35]))


@dataclass(frozen=True)
class TaskSpec:
    """Deterministic-per-seed generator parameters plus skeleton and goal."""

    name: str
    objects: tuple[tuple[str, str], ...]  # (object id, shape category)
    base_positions: dict
    offset_range: float
    yaw_range: float
    scale_range: tuple[float, float]
    skeleton: tuple[SkeletonStep, ...]
    goal_pairs: tuple[tuple[str, str], ...]
    goal_eps: float
    clearances: dict  # frozenset of categories -> min center separation


TASKS = {
    "peg_insertion": TaskSpec(
        name="peg_insertion",
        objects=(("peg", "peg"), ("stand", "stand")),
        base_positions={"peg": (-0.15, 0.0), "stand": (0.15, 0.0)},
        offset_range=0.06,
        yaw_range=np.pi,
        scale_range=(0.8, 1.2),
        skeleton=(
            SkeletonStep("pick", "peg", "ee"),
            SkeletonStep("place", "peg", "stand"),
        ),
        goal_pairs=(("peg", "stand"),),
        goal_eps=0.005,
        clearances={frozenset(("peg", "stand")): 0.22},
    ),
    "sort_two": TaskSpec(
        name="sort_two",
        objects=(("cup1", "cup"), ("cup2", "cup"), ("bin", "bin"), ("slot", "slot")),
        base_positions={
            "cup1": (-0.30, -0.18),
            "cup2": (-0.30, 0.18),
            "bin": (0.25, -0.25),
            "slot": (0.25, 0.25),
        },
        offset_range=0.05,
        yaw_range=np.pi,
        scale_range=(1.0, 1.0),
        skeleton=(
            SkeletonStep("pick", "cup1", "ee"),
            SkeletonStep("place", "cup1", "bin"),
            SkeletonStep("pick", "cup2", "ee"),
            SkeletonStep("place", "cup2", "slot"),
        ),
        goal_pairs=(("cup1", "bin"), ("cup2", "slot")),
        goal_eps=0.01,
        clearances={
            frozenset(("cup",)): 0.30,
            frozenset(("cup", "bin")): 0.36,
            frozenset(("cup", "slot")): 0.38,
            frozenset(("bin", "slot")): 0.46,
        },
    ),
}

# Local goal pose of a placed object in its receptacle's frame.
_GOAL_LOCAL_Z = {
    "stand": lambda s: (shapes.BORE_FLOOR + GOAL_CLEARANCE) * s,
    "bin": lambda s: GOAL_CLEARANCE,
    "slot": lambda s: GOAL_CLEARANCE,
}


def _make_world(placements: list[tuple[str, str, Pose, float]]) -> sim.World:
    entries, categories = {}, {}
    for obj, cat, pose, scale in placements:
        pts = shapes.build(cat, scale)
        entries[obj] = SceneEntry(cloud=PointCloud(pose.apply(pts), "world"), pose=pose)
        categories[obj] = cat
    return sim.World(scene=SceneGraph(entries=entries, ee_pose=EE_START, categories=categories))


def generate_task(
    spec: TaskSpec, seed: int, cfg: FieldConfig
) -> tuple[sim.World, GoalSpec]:
    """Randomized world plus its goal; deterministic per (spec, seed)."""
    rng = np.random.default_rng(seed)
    placements = None
    scale = 1.0
    for _ in range(500):
        scale = float(rng.uniform(*spec.scale_range))
        trial = {}
        for obj, cat in spec.objects:
            bx, by = spec.base_positions[obj]
            off = rng.uniform(-spec.offset_range, spec.offset_range, size=2)
            yaw = float(rng.uniform(-spec.yaw_range, spec.yaw_range))
            trial[obj] = (cat, Pose(quat_exp(np.array([0.0, 0.0, yaw])), np.array([bx + off[0], by + off[1], 0.0])))
        ok = True
        items = list(trial.items())
        for i, (a, (ca, pa)) in enumerate(items):
            for b, (cb, pb) in items[i + 1 :]:
                need = spec.clearances.get(frozenset((ca, cb)), 0.2)
                if float(np.linalg.norm(pa.t[:2] - pb.t[:2])) < need:
                    ok = False
        if ok:
            placements = trial
            break
    if placements is None:
        raise GenerationError(f"could not place objects for task {spec.name!r} (seed {seed})")

    world = _make_world([(o, c, p, scale) for o, (c, p) in placements.items()])
    constraints, clouds = [], {}
    for src, tgt in spec.goal_pairs:
        tgt_cat = world.scene.categories[tgt]
        local = Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, 0.0, _GOAL_LOCAL_Z[tgt_cat](scale)]))
        goal_pose = compose(world.scene.entries[tgt].pose, local)
        delta = compose(goal_pose, invert(world.scene.entries[src].pose))
        goal_cloud = PointCloud(delta.apply(world.scene.entries[src].cloud.points), "world")
        constraints.append(((src, tgt), constraint_feature(cfg, goal_cloud, world.scene.entries[tgt].cloud)))
        clouds[src] = goal_cloud
    return world, GoalSpec(constraints=constraints, clouds=clouds)


class _Recorder:
    """Drives a world through commanded steps while logging a raw demo."""

    def __init__(self, world: sim.World, task: str):
        self.world = world
        self.closed = False
        self.ee_poses: list[Pose] = []
        self.gripper: list[bool] = []
        self.object_poses: list[dict] = []
        self.initial_clouds = {
            n: e.cloud for n, e in world.scene.entries.items()
        }
        self.task = task
        self._log()

    def _log(self):
        self.ee_poses.append(self.world.ee_pose)
        self.gripper.append(self.closed)
        self.object_poses.append({n: e.pose for n, e in self.world.scene.entries.items()})

    def move(self, pose: Pose):
        sim.step(self.world, pose)
        self._log()

    def line(self, target: Pose, n: int):
        start = self.world.ee_pose
        for i in range(1, n + 1):
            self.move(interpolate(start, target, i / n))

    def grip(self, close: bool):
        _, events = sim.grip(self.world, close)
        if close and not any(e["event"] == "attach" for e in events):
            raise GenerationError("scripted expert failed to grasp")
        self.closed = close
        self._log()

    def demo(self) -> RawDemo:
        return RawDemo(
            ee_poses=self.ee_poses,
            gripper=self.gripper,
            initial_clouds=self.initial_clouds,
            object_poses=self.object_poses,
            task=self.task,
            categories=dict(self.world.scene.categories),
        )


def _offset(pose: Pose, d) -> Pose:
    return Pose(pose.q, pose.t + np.asarray(d, dtype=float))


def _expert_peg(world: sim.World) -> RawDemo:
    rec = _Recorder(world, "peg_insertion")
    peg_t = world.scene.entries["peg"].pose.t
    stand_t = world.scene.entries["stand"].pose.t
    grasp = Pose(TOP_DOWN, peg_t + [0.0, 0.0, PEG_GRASP_Z])
    rec.line(_offset(grasp, [0, 0, 0.08]), 6)
    rec.line(grasp, 20)
    rec.grip(True)
    rec.line(_offset(grasp, [0, 0, 0.12]), 6)
    # Seat the peg 2 mm above the bore floor; the last four 3 mm steps put the
    # contact switch exactly on the final pose.
    final = Pose(TOP_DOWN, stand_t + [0.0, 0.0, shapes.BORE_FLOOR + GOAL_CLEARANCE + PEG_GRASP_Z])
    rec.line(_offset(final, [0, 0, 0.077]), 8)
    rec.line(_offset(final, [0, 0, 0.012]), 16)
    rec.line(final, 4)
    rec.grip(False)
    rec.line(_offset(final, [0, 0, 0.12]), 6)
    return rec.demo()


def _expert_sort_rim(world: sim.World) -> RawDemo:
    rec = _Recorder(world, "sort_two")
    cup_pose = world.scene.entries["cup"].pose
    bin_t = world.scene.entries["bin"].pose.t
    grasp = Pose(RIM_GRASP, cup_pose.t + [-shapes.CUP_RADIUS, 0.0, shapes.CUP_HEIGHT])
    rec.line(_offset(grasp, [0, 0, 0.08]), 6)
    rec.line(grasp, 20)
    rec.grip(True)
    rec.line(_offset(grasp, [0, 0, 0.10]), 5)
    rel = compose(invert(rec.world.ee_pose), rec.world.scene.entries["cup"].pose)
    cup_final = Pose(cup_pose.q, bin_t + [0.0, 0.0, GOAL_CLEARANCE])
    final = compose(cup_final, invert(rel))
    rec.line(_offset(final, [0, 0, 0.081]), 8)
    rec.line(_offset(final, [0, 0, 0.006]), 18)
    rec.line(final, 2)
    rec.grip(False)
    rec.line(_offset(final, [0, 0, 0.12]), 6)
    return rec.demo()


def _expert_sort_handle(world: sim.World) -> RawDemo:
    rec = _Recorder(world, "sort_two")
    cup_pose = world.scene.entries["cup"].pose
    slot_t = world.scene.entries["slot"].pose.t
    grasp = Pose(
        HANDLE_GRASP,
        cup_pose.t + [shapes.CUP_RADIUS + shapes.HANDLE_ARC_RADIUS, 0.0, HANDLE_GRASP_Z],
    )
    rec.line(_offset(grasp, [0.08, 0, 0]), 6)
    rec.line(grasp, 20)
    rec.grip(True)
    rec.line(_offset(grasp, [0, 0, 0.16]), 7)
    rel = compose(invert(rec.world.ee_pose), rec.world.scene.entries["cup"].pose)
    cup_final = Pose(cup_pose.q, slot_t + [0.0, 0.0, GOAL_CLEARANCE])
    final = compose(cup_final, invert(rel))
    # Carry the cup well above the slot ceiling, descend past the open front,
    # then slide in at 6 mm travel height.
    rec.line(_offset(final, [0.20, 0, 0.16]), 10)
    rec.line(_offset(final, [0.20, 0, 0.006]), 8)
    rec.line(_offset(final, [0, 0, 0.006]), 18)
    rec.line(final, 2)
    rec.grip(False)
    rec.line(_offset(final, [0.24, 0, 0.0]), 6)
    rec.line(_offset(final, [0.24, 0, 0.15]), 4)
    return rec.demo()


_DEMOS = {
    "peg-pickplace": (
        lambda: _make_world(
            [
                ("peg", "peg", Pose(np.array([1.0, 0, 0, 0]), np.array([-0.15, 0.0, 0.0])), 1.0),
                ("stand", "stand", Pose(np.array([1.0, 0, 0, 0]), np.array([0.15, 0.0, 0.0])), 1.0),
            ]
        ),
        _expert_peg,
    ),
    "rim-bin": (
        lambda: _make_world(
            [
                ("cup", "cup", Pose(np.array([1.0, 0, 0, 0]), np.array([-0.18, 0.0, 0.0])), 1.0),
                ("bin", "bin", Pose(np.array([1.0, 0, 0, 0]), np.array([0.18, 0.0, 0.0])), 1.0),
            ]
        ),
        _expert_sort_rim,
    ),
    "handle-slot": (
        lambda: _make_world(
            [
                ("cup", "cup", Pose(np.array([1.0, 0, 0, 0]), np.array([-0.18, 0.0, 0.0])), 1.0),
                ("slot", "slot", Pose(np.array([1.0, 0, 0, 0]), np.array([0.18, 0.0, 0.0])), 1.0),
            ]
        ),
        _expert_sort_handle,
    ),
}

TASK_DEMOS = {
    "peg_insertion": ("peg-pickplace",),
    "sort_two": ("rim-bin", "handle-slot"),
}


def demo_world(demo_name: str) -> sim.World:
    return _DEMOS[demo_name][0]()


def scripted_expert(world: sim.World, demo_name: str) -> RawDemo:
    if demo_name not in _DEMOS:
        raise GenerationError(f"unknown demo script {demo_name!r}")
    return _DEMOS[demo_name][1](world)


def build_library(task_name: str, cfg: FieldConfig, trim_k: int = 20) -> list[SkillRecord]:
    """Record the task's scripted demos and segment them into skill records."""
    records = []
    for demo_name in TASK_DEMOS[task_name]:
        demo = scripted_expert(demo_world(demo_name), demo_name)
        events = extract_contact_events(demo, threshold=DEMO_CONTACT_THRESHOLD)
        for j, span in enumerate(segment_demo(demo, events, trim_k=trim_k)):
            records.append(build_skill(demo, span, cfg, demo_id=f"{demo_name}-{j}"))
    return sorted(records, key=lambda r: r.demo_id)


def run_trial(
    task_name: str,
    seed: int,
    cfg: FieldConfig,
    library: list[SkillRecord],
    noise_sigma: float = 0.0,
    ablate_reasoning: bool = False,
) -> tuple[dict, dict]:
    """One generated instance end to end; returns (trial report, timings).

    The trial report contains only values that are deterministic for the
    inputs; wall-clock timings are returned separately so aggregated reports
    are byte-identical across runs.
    """
    spec = TASKS[task_name]
    trial = {
        "task": task_name,
        "seed": seed,
        "noise_sigma": noise_sigma,
        "ablate_reasoning": bool(ablate_reasoning),
    }
    timing = {"reasoning": 0.0, "adaptation": 0.0, "motion": 0.0, "tracking": 0.0, "total": 0.0}
    t_all = time.perf_counter()
    try:
        world, goal = generate_task(spec, seed, cfg)
        if noise_sigma > 0:
            sim.inject_noise(world, noise_sigma, seed + 7919)
        skeleton = PlanSkeleton(spec.skeleton)
        t0 = time.perf_counter()
        if ablate_reasoning:
            plan = plan_random(skeleton, library, world.scene.categories, seed=seed)
        else:
            plan = plan_skills(skeleton, goal, library, cfg, world.scene.categories)
        timing["reasoning"] = time.perf_counter() - t0
        report = sim.execute_plan(
            world,
            skeleton,
            plan,
            library,
            cfg,
            goal=goal,
            goal_eps=spec.goal_eps,
            motion_seed=seed * 1000,
        )
        exec_timing = report.pop("timing")
        for key in ("adaptation", "motion", "tracking"):
            timing[key] = exec_timing[key]
        trial.update(
            {
                "success": bool(report["success"]),
                "completed": bool(report["completed"]),
                "plan": plan.to_json(),
                "stages": report["stages"],
                "chamfer": report.get("chamfer", {}),
            }
        )
    except NodTampError as e:
        trial.update({"success": False, "completed": False, "error": e.kind})
    timing["total"] = time.perf_counter() - t_all
    return trial, timing


def _trial_star(args) -> tuple[dict, dict]:
    return run_trial(*args)


def eval_task(
    task_name: str,
    seeds: list[int],
    cfg: FieldConfig,
    library: list[SkillRecord],
    noise_sigma: float = 0.0,
    ablate_reasoning: bool = False,
    workers: int = 1,
) -> tuple[dict, dict]:
    """Run trials over seeds (optionally in a worker pool, merged by seed order)."""
    args = [(task_name, s, cfg, library, noise_sigma, ablate_reasoning) for s in seeds]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_star, args))
    else:
        results = [_trial_star(a) for a in args]
    trials = [r[0] for r in results]
    timings = [r[1] for r in results]
    n_ok = sum(1 for t in trials if t["success"])
    report = {
        "task": task_name,
        "noise_sigma": noise_sigma,
        "ablate_reasoning": bool(ablate_reasoning),
        "seeds": list(seeds),
        "trials": trials,
        "successes": n_ok,
        "success_rate": n_ok / len(trials) if trials else 0.0,
    }
    agg = {k: float(sum(t[k] for t in timings)) for k in timings[0]} if timings else {}
    return report, {"per_trial": timings, "total": agg}


def noise_sweep(
    task_name: str,
    seeds: list[int],
    sigmas: list[float],
    cfg: FieldConfig,
    library: list[SkillRecord],
    workers: int = 1,
) -> tuple[dict, dict]:
    levels, level_timings = [], []
    for sigma in sigmas:
        rep, tim = eval_task(task_name, seeds, cfg, library, noise_sigma=sigma, workers=workers)
        levels.append(
            {
                "sigma": sigma,
                "successes": rep["successes"],
                "success_rate": rep["success_rate"],
                "trials": rep["trials"],
            }
        )
        level_timings.append(tim["total"])
    return {"task": task_name, "seeds": list(seeds), "levels": levels}, {"levels": level_timings}
