import itertools

import numpy as np
import pytest

from nodtamp.descriptor import FieldConfig
from nodtamp.errors import ArgumentError, InfeasibleSkeletonError, NoCandidateError
from nodtamp.geometry import Pose, PointCloud
from nodtamp.planner import (
    GoalSpec,
    Plan,
    PlanSkeleton,
    SkeletonStep,
    candidates,
    cost_matrix,
    pairwise_cost,
    plan_random,
    plan_skills,
)
from nodtamp.skills import EE, HAND_OBJECT, OBJECT_OBJECT, Constraint, SkillRecord
from nodtamp.descriptor import FeatureTrajectory

DIM = 6
CLOUD = PointCloud(np.array([[0.01, 0, 0], [0, 0.01, 0], [0, 0, 0.01], [0.0, 0, 0]]))
CFG = FieldConfig()


def make_pick(demo_id, cat, grasp_feat):
    p = Pose.identity()
    return SkillRecord(
        demo_id=demo_id,
        name="pick",
        mode=HAND_OBJECT,
        source_category=cat,
        target_category=EE,
        source_id="obj",
        target_id=EE,
        traj=[p],
        feats=FeatureTrajectory((np.zeros(DIM),), HAND_OBJECT),
        pre=[],
        eff_add=[Constraint(("obj", EE), grasp_feat, p)],
        eff_del=[],
        source_cloud=CLOUD,
    )


def make_place(demo_id, src_cat, tgt_cat, grasp_pre_feat, eff_feat):
    p = Pose.identity()
    return SkillRecord(
        demo_id=demo_id,
        name="place",
        mode=OBJECT_OBJECT,
        source_category=src_cat,
        target_category=tgt_cat,
        source_id="obj",
        target_id="tgt",
        traj=[p],
        feats=FeatureTrajectory((np.zeros(DIM),), OBJECT_OBJECT),
        pre=[Constraint(("obj", EE), grasp_pre_feat, p)],
        eff_add=[Constraint(("obj", "tgt"), eff_feat, p)],
        eff_del=[("obj", EE)],
        source_cloud=CLOUD,
        target_cloud=CLOUD,
        query_feat=np.zeros(DIM),
        query_in_source=p,
    )


def _map_key(key, record, step):
    table = {record.source_id: step.source, record.target_id: step.target, EE: EE}
    return (table.get(key[0], key[0]), table.get(key[1], key[1]))


def brute_force(skeleton, goal, library, categories):
    """Independent exhaustive oracle over the full candidate product."""
    per_step = [candidates(s, library, categories) for s in skeleton.steps]
    best = None
    for combo in itertools.product(*per_step):
        acc, cost, ok = {}, 0.0, True
        for step, rec in zip(skeleton.steps, combo):
            for c in rec.pre:
                key = _map_key(c.key, rec, step)
                if key not in acc:
                    ok = False
                    break
                cost += float(np.linalg.norm(acc[key] - c.feat))
            if not ok:
                break
            for key in rec.eff_del:
                acc.pop(_map_key(key, rec, step), None)
            for c in rec.eff_add:
                acc[_map_key(c.key, rec, step)] = c.feat
        if not ok:
            continue
        for key, zg in goal.constraints:
            if key not in acc:
                ok = False
                break
            cost += float(np.linalg.norm(acc[key] - zg))
        if ok and (best is None or cost < best[0] - 1e-15):
            best = (cost, [r.demo_id for r in combo])
    return best


def random_setup(rng):
    """Random two-object library: picks and places for two category pairs."""
    categories = {"a": "cupA", "b": "binA", "c": "cupB", "d": "binB"}
    lib = []
    for cat, tgt in (("cupA", "binA"), ("cupB", "binB")):
        for i in range(rng.integers(2, 5)):
            lib.append(make_pick(f"{cat}-pick-{i}", cat, rng.uniform(0, 1, DIM)))
        for i in range(rng.integers(2, 5)):
            lib.append(
                make_place(
                    f"{cat}-place-{i}", cat, tgt, rng.uniform(0, 1, DIM), rng.uniform(0, 1, DIM)
                )
            )
    steps = (
        SkeletonStep("pick", "a", EE),
        SkeletonStep("place", "a", "b"),
        SkeletonStep("pick", "c", EE),
        SkeletonStep("place", "c", "d"),
    )
    goal = GoalSpec(
        constraints=[
            (("a", "b"), rng.uniform(0, 1, DIM)),
            (("c", "d"), rng.uniform(0, 1, DIM)),
        ]
    )
    return PlanSkeleton(steps), goal, lib, categories


def test_pruned_search_matches_brute_force():
    for trial in range(50):
        rng = np.random.default_rng(trial)
        skeleton, goal, lib, cats = random_setup(rng)
        want_cost, want_ids = brute_force(skeleton, goal, lib, cats)
        for prune in (True, False):
            plan = plan_skills(skeleton, goal, lib, CFG, cats, prune=prune)
            assert plan.demo_ids == want_ids
            assert plan.total_cost == pytest.approx(want_cost, abs=1e-12)


def test_tie_break_is_order_independent():
    feat = np.full(DIM, 0.5)
    lib = [
        make_pick("pick-b", "cup", feat),
        make_pick("pick-a", "cup", feat),
        make_place("place-b", "cup", "bin", feat, feat),
        make_place("place-a", "cup", "bin", feat, feat),
    ]
    cats = {"a": "cup", "b": "bin"}
    skeleton = PlanSkeleton((SkeletonStep("pick", "a", EE), SkeletonStep("place", "a", "b")))
    goal = GoalSpec(constraints=[(("a", "b"), feat)])
    want = ["pick-a", "place-a"]
    for perm in itertools.permutations(lib):
        plan = plan_skills(skeleton, goal, list(perm), CFG, cats)
        assert plan.demo_ids == want


def test_no_candidate_and_infeasible():
    lib = [make_place("place-0", "cup", "bin", np.zeros(DIM), np.zeros(DIM))]
    cats = {"a": "cup", "b": "bin"}
    with pytest.raises(NoCandidateError):
        plan_skills(
            PlanSkeleton((SkeletonStep("pick", "a", EE),)),
            GoalSpec(constraints=[]),
            lib,
            CFG,
            cats,
        )
    # a place with no preceding pick never satisfies its grasp requirement
    with pytest.raises(InfeasibleSkeletonError):
        plan_skills(
            PlanSkeleton((SkeletonStep("place", "a", "b"),)),
            GoalSpec(constraints=[]),
            lib,
            CFG,
            cats,
        )


def test_goal_key_must_be_reachable():
    lib = [
        make_pick("pick-0", "cup", np.zeros(DIM)),
        make_place("place-0", "cup", "bin", np.zeros(DIM), np.zeros(DIM)),
    ]
    cats = {"a": "cup", "b": "bin"}
    skeleton = PlanSkeleton((SkeletonStep("pick", "a", EE), SkeletonStep("place", "a", "b")))
    goal = GoalSpec(constraints=[(("a", "nowhere"), np.zeros(DIM))])
    with pytest.raises(InfeasibleSkeletonError):
        plan_skills(skeleton, goal, lib, CFG, cats)


def test_plan_random_deterministic_and_valid():
    rng = np.random.default_rng(3)
    skeleton, goal, lib, cats = random_setup(rng)
    p1 = plan_random(skeleton, lib, cats, seed=11)
    p2 = plan_random(skeleton, lib, cats, seed=11)
    assert p1.demo_ids == p2.demo_ids
    for step, demo_id in zip(skeleton.steps, p1.demo_ids):
        assert demo_id in [r.demo_id for r in candidates(step, lib, cats)]


def test_pairwise_cost():
    assert pairwise_cost(np.array([0.0, 3.0]), np.array([4.0, 0.0])) == pytest.approx(5.0)
    with pytest.raises(ArgumentError):
        pairwise_cost(np.zeros(3), np.zeros(4))


def test_cost_matrix_oracle():
    rng = np.random.default_rng(4)
    picks = [make_pick(f"p{i}", "cup", rng.uniform(0, 1, DIM)) for i in range(3)]
    places = [
        make_place(f"q{j}", "cup", "bin", rng.uniform(0, 1, DIM), np.zeros(DIM))
        for j in range(2)
    ]
    m = cost_matrix(picks, places, CFG)
    assert m.shape == (3, 2)
    for i, pick in enumerate(picks):
        for j, place in enumerate(places):
            want = np.linalg.norm(pick.eff_add[0].feat - place.pre[0].feat)
            assert m[i, j] == pytest.approx(want, abs=1e-12)
    with pytest.raises(ArgumentError):
        cost_matrix([], places, CFG)
    with pytest.raises(ArgumentError):
        cost_matrix(places, places, CFG)  # places have no grasp effect


def test_schema_validation_and_json():
    with pytest.raises(ArgumentError):
        PlanSkeleton(())
    with pytest.raises(ArgumentError):
        GoalSpec(constraints=[(("a", "b"), np.zeros(2)), (("a", "b"), np.ones(2))])
    sk = PlanSkeleton((SkeletonStep("pick", "a", EE),))
    assert PlanSkeleton.from_json(sk.to_json()) == sk
    goal = GoalSpec(constraints=[(("a", "b"), np.arange(3.0))], clouds={"a": CLOUD})
    back = GoalSpec.from_json(goal.to_json())
    assert back.constraints[0][0] == ("a", "b")
    assert np.allclose(back.constraints[0][1], np.arange(3.0))
    assert np.allclose(back.clouds["a"].points, CLOUD.points)
    plan = Plan(chosen=[("d", 0.5)], total_cost=1.5, goal_cost=1.0)
    assert plan.demo_ids == ["d"]
    assert plan.to_json()["total_cost"] == 1.5
