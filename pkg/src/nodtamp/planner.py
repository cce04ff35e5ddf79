"""Skill selection: one demonstration per skeleton step, minimum feature cost.

Exhaustive depth-first search over the per-step candidate product with
branch-and-bound pruning. The running constraint set is updated by each
candidate's effects; a candidate whose required constraint key is absent is
infeasible on that branch. Plan cost sums the feature distances between
required constraints and their accumulated counterparts, plus goal-feature
distances against the final accumulated set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .descriptor import FieldConfig
from .errors import ArgumentError, InfeasibleSkeletonError, NoCandidateError
from .geometry import PointCloud
from .skills import EE, SkillRecord


@dataclass(frozen=True)
class SkeletonStep:
    skill: str
    source: str
    target: str

    def to_json(self) -> dict:
        return {"skill": self.skill, "source": self.source, "target": self.target}

    @staticmethod
    def from_json(obj: dict) -> "SkeletonStep":
        return SkeletonStep(obj["skill"], obj["source"], obj["target"])


@dataclass(frozen=True)
class PlanSkeleton:
    steps: tuple[SkeletonStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ArgumentError("plan skeleton is empty")
        object.__setattr__(self, "steps", tuple(self.steps))

    def to_json(self) -> dict:
        return {"steps": [s.to_json() for s in self.steps]}

    @staticmethod
    def from_json(obj: dict) -> "PlanSkeleton":
        return PlanSkeleton(tuple(SkeletonStep.from_json(s) for s in obj["steps"]))


@dataclass
class GoalSpec:
    """Desired pairwise configurations as (entity pair, feature) terms."""

    constraints: list[tuple[tuple[str, str], np.ndarray]]
    clouds: dict[str, PointCloud] = field(default_factory=dict)

    def __post_init__(self):
        keys = [k for k, _ in self.constraints]
        if len(set(keys)) != len(keys):
            raise ArgumentError("goal entity pairs must be distinct")
        self.constraints = [(tuple(k), np.asarray(z, dtype=float)) for k, z in self.constraints]

    def to_json(self) -> dict:
        return {
            "constraints": [
                {"key": list(k), "feat": [float(v) for v in z]} for k, z in self.constraints
            ],
            "clouds": {name: c.to_json() for name, c in self.clouds.items()},
        }

    @staticmethod
    def from_json(obj: dict) -> "GoalSpec":
        return GoalSpec(
            constraints=[
                (tuple(c["key"]), np.asarray(c["feat"], dtype=float))
                for c in obj["constraints"]
            ],
            clouds={k: PointCloud.from_json(c) for k, c in obj.get("clouds", {}).items()},
        )


@dataclass
class Plan:
    """Chosen demo per step with per-step and total costs."""

    chosen: list[tuple[str, float]]
    total_cost: float
    goal_cost: float = 0.0
    adapted: list[list] | None = None

    @property
    def demo_ids(self) -> list[str]:
        return [d for d, _ in self.chosen]

    def to_json(self) -> dict:
        return {
            "chosen": [{"demo_id": d, "cost": c} for d, c in self.chosen],
            "total_cost": self.total_cost,
            "goal_cost": self.goal_cost,
        }


def pairwise_cost(eff: np.ndarray, pre: np.ndarray) -> float:
    """L2 distance between two constraint features."""
    eff = np.asarray(eff, dtype=float).reshape(-1)
    pre = np.asarray(pre, dtype=float).reshape(-1)
    if eff.shape != pre.shape:
        raise ArgumentError(f"descriptor dimensions differ: {eff.shape} vs {pre.shape}")
    return float(np.linalg.norm(eff - pre))


def candidates(
    step: SkeletonStep, library: list[SkillRecord], categories: dict[str, str]
) -> list[SkillRecord]:
    """Library records matching the step's skill name and role categories, by id."""
    src_cat = categories.get(step.source, step.source)
    tgt_cat = EE if step.target == EE else categories.get(step.target, step.target)
    out = [
        r
        for r in library
        if r.name == step.skill
        and r.source_category == src_cat
        and r.target_category == tgt_cat
    ]
    if not out:
        raise NoCandidateError(
            f"no demonstration matches step {step.skill}({step.source}, {step.target})",
            step=step.to_json(),
        )
    return sorted(out, key=lambda r: r.demo_id)


def _map_key(key: tuple[str, str], record: SkillRecord, step: SkeletonStep) -> tuple[str, str]:
    """Translate a record's demo entity ids into the step's scene ids."""
    table = {record.source_id: step.source, record.target_id: step.target, EE: EE}
    return (table.get(key[0], key[0]), table.get(key[1], key[1]))


def plan_skills(
    skeleton: PlanSkeleton,
    goal: GoalSpec,
    library: list[SkillRecord],
    cfg: FieldConfig,
    categories: dict[str, str],
    prune: bool = True,
) -> Plan:
    """Minimum-cost assignment of demonstrations to skeleton steps.

    Pruning (partial cost >= incumbent) never changes the result; ties are
    broken by lexicographic demo-id order because candidates are explored
    sorted and only strict improvements replace the incumbent.
    """
    per_step = [candidates(s, library, categories) for s in skeleton.steps]

    best: dict = {"cost": np.inf, "chosen": None, "goal_cost": 0.0}
    feasible_found = [False]

    def dfs(i: int, acc: dict, cost: float, chosen: list[tuple[str, float]]):
        if prune and cost >= best["cost"]:
            return
        if i == len(skeleton.steps):
            gcost = 0.0
            for key, zg in goal.constraints:
                if key not in acc:
                    return
                gcost += pairwise_cost(acc[key], zg)
            feasible_found[0] = True
            total = cost + gcost
            if total < best["cost"]:
                best["cost"] = total
                best["chosen"] = list(chosen)
                best["goal_cost"] = gcost
            return
        step = skeleton.steps[i]
        for rec in per_step[i]:
            step_cost = 0.0
            ok = True
            for c in rec.pre:
                key = _map_key(c.key, rec, step)
                if key not in acc:
                    ok = False
                    break
                step_cost += pairwise_cost(acc[key], c.feat)
            if not ok:
                continue
            nxt = dict(acc)
            for key in rec.eff_del:
                nxt.pop(_map_key(key, rec, step), None)
            for c in rec.eff_add:
                nxt[_map_key(c.key, rec, step)] = c.feat
            chosen.append((rec.demo_id, step_cost))
            dfs(i + 1, nxt, cost + step_cost, chosen)
            chosen.pop()

    dfs(0, {}, 0.0, [])
    if best["chosen"] is None:
        raise InfeasibleSkeletonError(
            "no candidate combination satisfies the required constraints"
            if not feasible_found[0]
            else "planning failed"
        )
    return Plan(chosen=best["chosen"], total_cost=best["cost"], goal_cost=best["goal_cost"])


def plan_random(
    skeleton: PlanSkeleton,
    library: list[SkillRecord],
    categories: dict[str, str],
    seed: int = 0,
) -> Plan:
    """Reasoning-ablated baseline: uniform candidate choice per step."""
    rng = np.random.default_rng(seed)
    chosen = []
    for step in skeleton.steps:
        cands = candidates(step, library, categories)
        chosen.append((cands[int(rng.integers(len(cands)))].demo_id, 0.0))
    return Plan(chosen=chosen, total_cost=0.0, goal_cost=0.0)


def cost_matrix(
    pick_records: list[SkillRecord], place_records: list[SkillRecord], cfg: FieldConfig
) -> np.ndarray:
    """Grasp-compatibility matrix: pick effects vs place grasp requirements."""
    if not pick_records or not place_records:
        raise ArgumentError("cost matrix needs non-empty record lists")
    out = np.zeros((len(pick_records), len(place_records)))
    for i, pick in enumerate(pick_records):
        eff = pick.grasp_eff()
        if eff is None:
            raise ArgumentError(f"record {pick.demo_id} has no grasp effect")
        for j, place in enumerate(place_records):
            pre = place.grasp_pre()
            if pre is None:
                raise ArgumentError(f"record {place.demo_id} has no grasp requirement")
            out[i, j] = pairwise_cost(eff.feat, pre.feat)
    return out
