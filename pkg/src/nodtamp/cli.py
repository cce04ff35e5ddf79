"""Command-line surface: demo generation, segmentation, planning, execution,
evaluation, noise sweeps, and grasp-compatibility matrices.

Every command honors --config/--seed/--workers/--out, exits 0 on success,
and on failure prints a machine-readable error JSON (stable ``kind`` field)
and exits nonzero. Set NODTAMP_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import tasks
from .errors import ArgumentError, NodTampError
from .io import RunConfig, read_json, scene_from_json, write_json
from .planner import GoalSpec, PlanSkeleton, Plan, cost_matrix, plan_skills
from .skills import (
    HAND_OBJECT,
    OBJECT_OBJECT,
    RawDemo,
    build_skill,
    extract_contact_events,
    load_library,
    save_library,
    segment_demo,
)
from .sim import World, execute_plan

log = logging.getLogger("nodtamp")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(read_json(args.config)) if args.config else RunConfig()
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _seeds(args, cfg: RunConfig) -> list[int]:
    if args.seed is not None:
        return [args.seed]
    return list(cfg.seeds)


def _cmd_gen_demo(args) -> int:
    cfg = _load_config(args)
    task = args.task or cfg.task
    out = Path(args.out or cfg.library_dir)
    records = tasks.build_library(task, cfg.field, trim_k=cfg.trim_k)
    save_library(records, out)
    for demo_name in tasks.TASK_DEMOS[task]:
        demo = tasks.scripted_expert(tasks.demo_world(demo_name), demo_name)
        write_json(out / f"raw-{demo_name}.json", demo.to_json())
    log.info("wrote %d skill records to %s", len(records), out)
    print(f"library: {out} ({len(records)} records)")
    return 0


def _cmd_segment(args) -> int:
    cfg = _load_config(args)
    demo = RawDemo.from_json(read_json(args.demo))
    events = extract_contact_events(demo, threshold=tasks.DEMO_CONTACT_THRESHOLD)
    spans = segment_demo(demo, events, trim_k=cfg.trim_k)
    stem = Path(args.demo).stem
    records = [
        build_skill(demo, span, cfg.field, demo_id=f"{stem}-{j}") for j, span in enumerate(spans)
    ]
    save_library(records, args.out or "library")
    print(f"segmented {len(records)} skills from {args.demo}")
    return 0


def _cmd_plan(args) -> int:
    cfg = _load_config(args)
    scene = scene_from_json(read_json(args.scene))
    skeleton = PlanSkeleton.from_json(read_json(args.skeleton))
    goal = GoalSpec.from_json(read_json(args.goal))
    library = load_library(args.library)
    plan = plan_skills(skeleton, goal, library, cfg.field, scene.categories)
    out = args.out or "plan.json"
    write_json(out, {"plan": plan.to_json(), "skeleton": skeleton.to_json(), "library": str(args.library)})
    print(f"plan: {out} cost={plan.total_cost:.6g} demos={plan.demo_ids}")
    return 0


def _cmd_execute(args) -> int:
    cfg = _load_config(args)
    if args.task or (args.seed is not None and not args.scene):
        task = args.task or cfg.task
        seed = args.seed if args.seed is not None else (cfg.seeds[0] if cfg.seeds else 0)
        library = (
            load_library(args.library) if args.library else tasks.build_library(task, cfg.field, trim_k=cfg.trim_k)
        )
        trial, timing = tasks.run_trial(
            task, seed, cfg.field, library, noise_sigma=cfg.noise_sigma,
            ablate_reasoning=cfg.ablate_reasoning,
        )
        out = args.out or "report.json"
        write_json(out, trial)
        write_json(Path(out).with_suffix(".timing.json"), timing)
        print(f"success={trial['success']} report={out}")
        return 0
    if not (args.scene and args.skeleton and args.plan and args.library):
        raise ArgumentError("execute needs either --task/--seed or --scene/--skeleton/--plan/--library")
    scene = scene_from_json(read_json(args.scene))
    skeleton = PlanSkeleton.from_json(read_json(args.skeleton))
    plan_obj = read_json(args.plan)["plan"]
    plan = Plan(
        chosen=[(c["demo_id"], float(c["cost"])) for c in plan_obj["chosen"]],
        total_cost=float(plan_obj["total_cost"]),
        goal_cost=float(plan_obj.get("goal_cost", 0.0)),
    )
    library = load_library(args.library)
    goal = GoalSpec.from_json(read_json(args.goal)) if args.goal else None
    world = World(scene=scene)
    report = execute_plan(world, skeleton, plan, library, cfg.field, goal=goal)
    timing = report.pop("timing")
    out = args.out or "report.json"
    write_json(out, report)
    write_json(Path(out).with_suffix(".timing.json"), timing)
    print(f"success={report['success']} report={out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    task = args.task or cfg.task
    library = (
        load_library(args.library) if args.library else tasks.build_library(task, cfg.field, trim_k=cfg.trim_k)
    )
    report, timing = tasks.eval_task(
        task,
        _seeds(args, cfg),
        cfg.field,
        library,
        noise_sigma=cfg.noise_sigma,
        ablate_reasoning=cfg.ablate_reasoning,
        workers=cfg.workers,
    )
    out = args.out or "report.json"
    write_json(out, report)
    write_json(Path(out).with_suffix(".timing.json"), timing)
    print(f"{task}: {report['successes']}/{len(report['seeds'])} success_rate={report['success_rate']:.3f}")
    return 0


def _cmd_noise_sweep(args) -> int:
    cfg = _load_config(args)
    task = args.task or cfg.task
    library = (
        load_library(args.library) if args.library else tasks.build_library(task, cfg.field, trim_k=cfg.trim_k)
    )
    report, timing = tasks.noise_sweep(
        task, _seeds(args, cfg), cfg.sigmas, cfg.field, library, workers=cfg.workers
    )
    out = args.out or "sweep.json"
    write_json(out, report)
    write_json(Path(out).with_suffix(".timing.json"), timing)
    for level in report["levels"]:
        print(f"sigma={level['sigma']}: success_rate={level['success_rate']:.3f}")
    return 0


def _cmd_cost_matrix(args) -> int:
    cfg = _load_config(args)
    library = load_library(args.library)
    picks = [r for r in library if r.mode == HAND_OBJECT]
    places = [r for r in library if r.mode == OBJECT_OBJECT]
    mat = cost_matrix(picks, places, cfg.field)
    out = Path(args.out or "matrix.csv")
    lines = ["," + ",".join(p.demo_id for p in places)]
    for rec, row in zip(picks, mat):
        lines.append(rec.demo_id + "," + ",".join(repr(float(v)) for v in row))
    out.write_text("\n".join(lines) + "\n")
    print(f"matrix: {out} ({len(picks)}x{len(places)})")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodtamp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("gen-demo", help="record scripted demos and build a skill library")
    p.add_argument("--task", default=None)
    common(p)
    p.set_defaults(func=_cmd_gen_demo)

    p = sub.add_parser("segment", help="segment a raw demo file into skill records")
    p.add_argument("--demo", required=True)
    common(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("plan", help="select demos for a skeleton against a goal")
    p.add_argument("--scene", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--goal", required=True)
    p.add_argument("--library", required=True)
    common(p)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("execute", help="execute a plan (or a generated task trial)")
    p.add_argument("--task", default=None)
    p.add_argument("--scene", default=None)
    p.add_argument("--skeleton", default=None)
    p.add_argument("--plan", default=None)
    p.add_argument("--goal", default=None)
    p.add_argument("--library", default=None)
    common(p)
    p.set_defaults(func=_cmd_execute)

    p = sub.add_parser("eval", help="run a task over seeds and aggregate success")
    p.add_argument("--task", default=None)
    p.add_argument("--library", default=None)
    common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("noise-sweep", help="evaluate across observation noise levels")
    p.add_argument("--task", default=None)
    p.add_argument("--library", default=None)
    common(p)
    p.set_defaults(func=_cmd_noise_sweep)

    p = sub.add_parser("cost-matrix", help="grasp-compatibility matrix CSV for a library")
    p.add_argument("--library", required=True)
    common(p)
    p.set_defaults(func=_cmd_cost_matrix)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("NODTAMP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NodTampError as e:
        sys.stdout.write(
            '{"error": "%s", "message": %s}\n' % (e.kind, _json_str(str(e)))
        )
        return 2


def _json_str(s: str) -> str:
    import json

    return json.dumps(s)


if __name__ == "__main__":
    sys.exit(main())
