"""Skill-record construction from raw demonstrations.

A demonstration is segmented at kinematic switches (gripper transitions and
contact events), trimmed to the steps leading into each switch, and each span
is packaged as a skill record carrying the feature trajectory plus the
precondition/effect constraints that let records chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .descriptor import FeatureTrajectory, FieldConfig, encode, encode_trajectory
from .errors import DataError, EmptySegmentationError, SchemaError
from .geometry import Pose, PointCloud, compose, invert, transform_cloud

EE = "ee"

HAND_OBJECT = "hand-object"
OBJECT_OBJECT = "object-object"

# Consecutive trajectory steps further apart than this flag a corrupt span.
MAX_STEP_JUMP = 0.10


@dataclass
class RawDemo:
    """One recorded manipulation demonstration.

    ``initial_clouds`` are world-frame clouds at step 0; the cloud of object
    o at step i is the initial cloud moved by T_o(i) o T_o(0)^-1.
    """

    ee_poses: list[Pose]
    gripper: list[bool]
    initial_clouds: dict[str, PointCloud]
    object_poses: list[dict[str, Pose]]
    task: str = ""
    categories: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.ee_poses)
        if len(self.gripper) != n or len(self.object_poses) != n:
            raise DataError("per-step demo lists have mismatched lengths")

    def __len__(self) -> int:
        return len(self.ee_poses)

    def cloud_at(self, obj: str, step: int) -> PointCloud:
        if obj not in self.initial_clouds:
            raise DataError(f"no cloud recorded for object {obj!r}")
        delta = compose(self.object_poses[step][obj], invert(self.object_poses[0][obj]))
        return transform_cloud(delta, self.initial_clouds[obj])

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "categories": dict(self.categories),
            "ee_poses": [p.to_json() for p in self.ee_poses],
            "gripper": [bool(g) for g in self.gripper],
            "initial_clouds": {k: c.to_json() for k, c in self.initial_clouds.items()},
            "object_poses": [
                {k: p.to_json() for k, p in step.items()} for step in self.object_poses
            ],
        }

    @staticmethod
    def from_json(obj: dict) -> "RawDemo":
        return RawDemo(
            ee_poses=[Pose.from_json(p) for p in obj["ee_poses"]],
            gripper=[bool(g) for g in obj["gripper"]],
            initial_clouds={k: PointCloud.from_json(c) for k, c in obj["initial_clouds"].items()},
            object_poses=[
                {k: Pose.from_json(p) for k, p in step.items()} for step in obj["object_poses"]
            ],
            task=obj.get("task", ""),
            categories=dict(obj.get("categories", {})),
        )


@dataclass(frozen=True)
class SkillSpan:
    """One segmented skill: inclusive step range plus its roles."""

    start: int
    end: int
    mode: str  # HAND_OBJECT (attach) | OBJECT_OBJECT (detach)
    source: str
    target: str


@dataclass(frozen=True)
class Constraint:
    """Relative configuration of an ordered entity pair.

    ``rel`` is the pose of key[0] expressed in key[1]'s frame; ``feat`` is
    the descriptor encoding of the configuration.
    """

    key: tuple[str, str]
    feat: np.ndarray
    rel: Pose

    def __post_init__(self):
        if self.key[0] == self.key[1]:
            raise DataError(f"constraint pairs an entity with itself: {self.key}")
        object.__setattr__(self, "feat", np.asarray(self.feat, dtype=float).reshape(-1))

    def to_json(self) -> dict:
        return {
            "key": list(self.key),
            "feat": [float(v) for v in self.feat],
            "rel": self.rel.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "Constraint":
        return Constraint(tuple(obj["key"]), np.asarray(obj["feat"], dtype=float), Pose.from_json(obj["rel"]))


@dataclass
class SkillRecord:
    """One demonstrated skill, ready for planning and adaptation."""

    demo_id: str
    name: str
    mode: str
    source_category: str
    target_category: str
    traj: list[Pose]  # query-frame world poses over the span
    feats: FeatureTrajectory
    pre: list[Constraint]
    eff_add: list[Constraint]
    eff_del: list[tuple[str, str]]
    source_cloud: PointCloud
    target_cloud: PointCloud | None = None
    query_feat: np.ndarray | None = None  # object-object only
    query_in_source: Pose | None = None  # query frame in the held object's frame
    source_id: str = ""
    target_id: str = ""

    def __post_init__(self):
        if len(self.traj) != len(self.feats):
            raise DataError("trajectory and feature trajectory lengths differ")
        if self.mode == OBJECT_OBJECT and self.query_feat is None:
            raise DataError("object-object records require a query feature")
        if self.mode == HAND_OBJECT and self.query_feat is not None:
            raise DataError("hand-object records must not carry a query feature")

    def grasp_eff(self) -> Constraint | None:
        for c in self.eff_add:
            if c.key[1] == EE:
                return c
        return None

    def grasp_pre(self) -> Constraint | None:
        for c in self.pre:
            if c.key[1] == EE:
                return c
        return None

    def to_json(self) -> dict:
        return {
            "demo_id": self.demo_id,
            "name": self.name,
            "mode": self.mode,
            "source_category": self.source_category,
            "target_category": self.target_category,
            "source_id": self.source_id,
            "target_id": self.target_id,
            "traj": [p.to_json() for p in self.traj],
            "feats": self.feats.to_json(),
            "pre": [c.to_json() for c in self.pre],
            "eff_add": [c.to_json() for c in self.eff_add],
            "eff_del": [list(k) for k in self.eff_del],
            "source_cloud": self.source_cloud.to_json(),
            "target_cloud": None if self.target_cloud is None else self.target_cloud.to_json(),
            "query_feat": None if self.query_feat is None else [float(v) for v in self.query_feat],
            "query_in_source": None if self.query_in_source is None else self.query_in_source.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "SkillRecord":
        return SkillRecord(
            demo_id=obj["demo_id"],
            name=obj["name"],
            mode=obj["mode"],
            source_category=obj["source_category"],
            target_category=obj["target_category"],
            source_id=obj.get("source_id", ""),
            target_id=obj.get("target_id", ""),
            traj=[Pose.from_json(p) for p in obj["traj"]],
            feats=FeatureTrajectory.from_json(obj["feats"]),
            pre=[Constraint.from_json(c) for c in obj["pre"]],
            eff_add=[Constraint.from_json(c) for c in obj["eff_add"]],
            eff_del=[tuple(k) for k in obj["eff_del"]],
            source_cloud=PointCloud.from_json(obj["source_cloud"]),
            target_cloud=(
                None if obj["target_cloud"] is None else PointCloud.from_json(obj["target_cloud"])
            ),
            query_feat=(
                None if obj["query_feat"] is None else np.asarray(obj["query_feat"], dtype=float)
            ),
            query_in_source=(
                None if obj["query_in_source"] is None else Pose.from_json(obj["query_in_source"])
            ),
        )


def constraint_feature(
    cfg: FieldConfig, source_cloud: PointCloud, target_cloud: PointCloud
) -> np.ndarray:
    """Descriptor of an object-object configuration.

    Encodes an identity-rotation query pose anchored at the source cloud's
    centroid against the target cloud; used identically when building skill
    effects, parsing goals, and recording adapted constraints so the features
    are directly comparable.
    """
    anchor = Pose(np.array([1.0, 0.0, 0.0, 0.0]), source_cloud.centroid())
    return encode(cfg, anchor, target_cloud)


def extract_contact_events(
    demo: RawDemo, threshold: float = 0.002, gripper_offsets: np.ndarray | None = None
) -> list[tuple[int, tuple[str, str]]]:
    """First step each entity pair comes within ``threshold`` of contact.

    Pairs are (object, object) by minimum point-pair distance and (ee, object)
    by distance from the gripper sphere centers to the object cloud. An event
    is emitted when a pair first crosses below the threshold, and again after
    it has separated and re-contacts.
    """
    if gripper_offsets is None:
        from .motion import GRIPPER_OFFSETS

        gripper_offsets = GRIPPER_OFFSETS
    objs = sorted(demo.initial_clouds)
    events: list[tuple[int, tuple[str, str]]] = []
    in_contact: set[tuple[str, str]] = set()
    for step in range(len(demo)):
        clouds = {o: demo.cloud_at(o, step) for o in objs}
        trees = {o: cKDTree(clouds[o].points) for o in objs}
        ee_pts = demo.ee_poses[step].apply(gripper_offsets)
        now: set[tuple[str, str]] = set()
        for i, a in enumerate(objs):
            d, _ = trees[a].query(ee_pts, k=1)
            if float(np.min(d)) < threshold:
                now.add((EE, a))
            for b in objs[i + 1 :]:
                d, _ = trees[b].query(clouds[a].points, k=1)
                if float(np.min(d)) < threshold:
                    now.add((a, b))
        for pair in sorted(now - in_contact):
            events.append((step, pair))
        in_contact = now
    return events


def _nearest_object(demo: RawDemo, step: int, exclude: set[str]) -> str | None:
    ee = demo.ee_poses[step].t
    best, best_d = None, np.inf
    for obj in sorted(demo.initial_clouds):
        if obj in exclude:
            continue
        d = float(np.min(np.linalg.norm(demo.cloud_at(obj, step).points - ee, axis=1)))
        if d < best_d:
            best, best_d = obj, d
    return best


def segment_demo(
    demo: RawDemo,
    contact_events: list[tuple[int, tuple[str, str]]],
    trim_k: int = 20,
) -> list[SkillSpan]:
    """Segment a demo at kinematic switches and trim each span.

    Switches: gripper close transitions (attach, hand-object) and, while
    holding, the first contact between the held object and another entity or
    a bare gripper open (detach, object-object). Each span covers at most
    ``trim_k`` steps ending at its switch; spans are disjoint and ordered.
    """
    if trim_k < 1:
        raise DataError(f"trim_k must be >= 1, got {trim_k}")
    events = sorted(contact_events)
    by_step: dict[int, list[tuple[str, str]]] = {}
    for step, pair in events:
        by_step.setdefault(step, []).append(tuple(pair))

    switches: list[tuple[int, str, str, str]] = []  # (step, mode, source, target)
    holding: str | None = None
    detached = False
    for step in range(len(demo)):
        closed = demo.gripper[step]
        was_closed = demo.gripper[step - 1] if step > 0 else False
        if closed and not was_closed:
            source = None
            for s, pair in events:
                if s <= step and EE in pair:
                    source = pair[1] if pair[0] == EE else pair[0]
            if source is None:
                source = _nearest_object(demo, step, exclude=set())
            if source is None:
                raise DataError("gripper closed but no object present")
            switches.append((step, HAND_OBJECT, source, EE))
            holding, detached = source, False
        elif holding is not None and not detached:
            hit = None
            for pair in by_step.get(step, []):
                if holding in pair and EE not in pair:
                    hit = pair[1] if pair[0] == holding else pair[0]
                    break
            if hit is not None:
                switches.append((step, OBJECT_OBJECT, holding, hit))
                detached = True
            elif not closed and was_closed:
                target = _nearest_object(demo, step, exclude={holding}) or "world"
                switches.append((step, OBJECT_OBJECT, holding, target))
                detached = True
        if not closed and was_closed:
            holding, detached = None, False

    if not switches:
        raise EmptySegmentationError("demo contains no kinematic switch")
    spans = []
    prev_end = -1
    for step, mode, source, target in switches:
        start = max(prev_end + 1, step - trim_k + 1)
        spans.append(SkillSpan(start, step, mode, source, target))
        prev_end = step
    return spans


def _grasp_step(demo: RawDemo, span: SkillSpan) -> int:
    """Last gripper-close transition at or before the span start."""
    for step in range(span.start, -1, -1):
        if demo.gripper[step] and (step == 0 or not demo.gripper[step - 1]):
            return step
    return span.start


def _check_span_quality(traj: list[Pose]):
    for a, b in zip(traj, traj[1:]):
        if float(np.linalg.norm(b.t - a.t)) > MAX_STEP_JUMP:
            raise DataError(
                f"span rejected: consecutive steps more than {MAX_STEP_JUMP} m apart"
            )


def build_skill(
    demo: RawDemo,
    span: SkillSpan,
    cfg: FieldConfig,
    name: str | None = None,
    demo_id: str = "",
) -> SkillRecord:
    """Encode one segmented span into a skill record.

    Hand-object: the query frame is the end-effector; features are encoded
    against the grasped object's cloud. Object-object: the query frame sits
    at the held object's centroid (identity rotation) at the grasp moment and
    is carried rigidly; features are encoded against the receptacle's cloud.
    """
    steps = range(span.start, span.end + 1)
    if name is None:
        name = "pick" if span.mode == HAND_OBJECT else "place"
    cats = demo.categories

    if span.mode == HAND_OBJECT:
        traj = [demo.ee_poses[i] for i in steps]
        _check_span_quality(traj)
        src_cloud = demo.cloud_at(span.source, span.start)
        feats = encode_trajectory(cfg, traj, src_cloud, HAND_OBJECT)
        end = span.end
        rel = compose(invert(demo.ee_poses[end]), demo.object_poses[end][span.source])
        grasp_feat = encode(cfg, demo.ee_poses[end], demo.cloud_at(span.source, end))
        return SkillRecord(
            demo_id=demo_id,
            name=name,
            mode=HAND_OBJECT,
            source_category=cats.get(span.source, span.source),
            target_category=EE,
            source_id=span.source,
            target_id=EE,
            traj=traj,
            feats=feats,
            pre=[],
            eff_add=[Constraint((span.source, EE), grasp_feat, rel)],
            eff_del=[],
            source_cloud=src_cloud,
        )

    # object-object
    g = _grasp_step(demo, span)
    held_pose_g = demo.object_poses[g][span.source]
    anchor = Pose(np.array([1.0, 0.0, 0.0, 0.0]), demo.cloud_at(span.source, g).centroid())
    query_in_source = compose(invert(held_pose_g), anchor)
    traj = [compose(demo.object_poses[i][span.source], query_in_source) for i in steps]
    _check_span_quality(traj)
    tgt_cloud = demo.cloud_at(span.target, span.start)
    src_cloud = demo.cloud_at(span.source, span.start)
    feats = encode_trajectory(cfg, traj, tgt_cloud, OBJECT_OBJECT)
    query_feat = encode(cfg, traj[0], src_cloud)
    s0, end = span.start, span.end
    grasp_rel = compose(invert(demo.ee_poses[s0]), demo.object_poses[s0][span.source])
    grasp_feat = encode(cfg, demo.ee_poses[s0], src_cloud)
    eff_rel = compose(
        invert(demo.object_poses[end][span.target]), demo.object_poses[end][span.source]
    )
    eff_feat = constraint_feature(
        cfg, demo.cloud_at(span.source, end), demo.cloud_at(span.target, end)
    )
    return SkillRecord(
        demo_id=demo_id,
        name=name,
        mode=OBJECT_OBJECT,
        source_category=cats.get(span.source, span.source),
        target_category=cats.get(span.target, span.target),
        source_id=span.source,
        target_id=span.target,
        traj=traj,
        feats=feats,
        pre=[Constraint((span.source, EE), grasp_feat, grasp_rel)],
        eff_add=[Constraint((span.source, span.target), eff_feat, eff_rel)],
        eff_del=[(span.source, EE)],
        source_cloud=src_cloud,
        target_cloud=tgt_cloud,
        query_feat=query_feat,
        query_in_source=query_in_source,
    )


def save_library(records: list[SkillRecord], directory: str | Path) -> None:
    """Write one JSON file per record plus an index file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for rec in records:
        path = directory / f"{rec.demo_id}.json"
        path.write_text(json.dumps(rec.to_json(), sort_keys=True))
        index.append(
            {
                "id": rec.demo_id,
                "name": rec.name,
                "mode": rec.mode,
                "source_category": rec.source_category,
                "target_category": rec.target_category,
            }
        )
    (directory / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))


def load_library(directory: str | Path) -> list[SkillRecord]:
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise SchemaError(f"missing library index: {index_path}", path=str(index_path))
    try:
        index = json.loads(index_path.read_text())
        records = []
        for entry in index:
            rec_path = directory / f"{entry['id']}.json"
            records.append(SkillRecord.from_json(json.loads(rec_path.read_text())))
    except (KeyError, ValueError, TypeError) as e:
        raise SchemaError(f"malformed library under {directory}: {e}", path=str(directory)) from e
    return sorted(records, key=lambda r: r.demo_id)
