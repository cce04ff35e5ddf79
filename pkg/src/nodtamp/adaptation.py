"""Skill adaptation: replay a skill record in an observed scene.

Hand-object skills decode their feature trajectory against the observed
source object and yield end-effector targets directly. Object-object skills
first recover the query pose on the observed held object, decode against the
observed receptacle, and convert query poses to end-effector targets through
the stored grasp constraint. Both update the scene graph and the accumulated
constraint store on completion.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .descriptor import (
    FeatureTrajectory,
    FieldConfig,
    FieldEvaluator,
    QuerySet,
    decode_trajectory,
    encode,
    optimize_pose,
)
from .errors import AdaptationError, DataError, OptimizationError, PreconditionError
from .geometry import (
    Pose,
    PointCloud,
    compose,
    invert,
    matrix_to_quat,
    pose_delta,
    quat_exp,
    transform_cloud,
)
from .skills import EE, HAND_OBJECT, OBJECT_OBJECT, Constraint, SkillRecord, constraint_feature

_ATTACH_TOL = 1e-9


@dataclass
class SceneEntry:
    cloud: PointCloud
    pose: Pose
    parent: str | None = None  # None | "ee" | object id
    rel_to_parent: Pose | None = None


@dataclass
class SceneGraph:
    """Objects with clouds, poses, and kinematic attachments, plus the ee pose.

    The attachment graph is a forest; an attached child's world pose always
    equals parent world pose composed with its relative offset.
    """

    entries: dict[str, SceneEntry] = field(default_factory=dict)
    ee_pose: Pose = field(default_factory=Pose.identity)
    categories: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "SceneGraph":
        return copy.deepcopy(self)

    def parent_world_pose(self, parent: str) -> Pose:
        return self.ee_pose if parent == EE else self.entries[parent].pose

    def attach(self, child: str, parent: str, rel: Pose) -> None:
        if parent != EE and parent not in self.entries:
            raise DataError(f"unknown parent {parent!r}")
        chain = parent
        while chain not in (None, EE):
            if chain == child:
                raise DataError(f"attachment cycle through {child!r}")
            chain = self.entries[chain].parent
        e = self.entries[child]
        e.parent, e.rel_to_parent = parent, rel
        self._sync_child(child)

    def detach(self, child: str) -> None:
        e = self.entries[child]
        e.parent, e.rel_to_parent = None, None

    def attached_to_ee(self) -> list[str]:
        return sorted(k for k, e in self.entries.items() if e.parent == EE)

    def set_pose(self, obj: str, pose: Pose) -> None:
        """Move an object (and its attached subtree) to a new world pose."""
        e = self.entries[obj]
        delta = compose(pose, invert(e.pose))
        e.pose = pose
        e.cloud = transform_cloud(delta, e.cloud)
        for child, ce in self.entries.items():
            if ce.parent == obj:
                self._sync_child(child)

    def set_ee_pose(self, pose: Pose) -> None:
        self.ee_pose = pose
        for child, e in self.entries.items():
            if e.parent == EE:
                self._sync_child(child)

    def _sync_child(self, child: str) -> None:
        e = self.entries[child]
        target = compose(self.parent_world_pose(e.parent), e.rel_to_parent)
        dt, dr = pose_delta(e.pose, target)
        if dt > _ATTACH_TOL or dr > _ATTACH_TOL:
            delta = compose(target, invert(e.pose))
            e.cloud = transform_cloud(delta, e.cloud)
            e.pose = target

    def validate(self) -> None:
        for name, e in self.entries.items():
            seen = {name}
            p = e.parent
            while p not in (None, EE):
                if p in seen:
                    raise DataError(f"attachment cycle through {name!r}")
                seen.add(p)
                p = self.entries[p].parent
            if e.parent is not None:
                target = compose(self.parent_world_pose(e.parent), e.rel_to_parent)
                dt, dr = pose_delta(e.pose, target)
                if dt > _ATTACH_TOL or dr > _ATTACH_TOL:
                    raise DataError(f"attached object {name!r} drifted from its parent")


@dataclass
class ConstraintStore:
    """Accumulated pairwise constraints keyed by ordered entity pair."""

    entries: dict[tuple[str, str], Constraint] = field(default_factory=dict)

    def add(self, c: Constraint) -> None:
        self.entries[c.key] = c

    def remove(self, key: tuple[str, str]) -> None:
        self.entries.pop(key, None)

    def get(self, key: tuple[str, str]) -> Constraint | None:
        return self.entries.get(key)

    def copy(self) -> "ConstraintStore":
        return ConstraintStore(dict(self.entries))


@dataclass
class AdaptationResult:
    """End-effector targets plus bookkeeping from one adapted skill."""

    ee_targets: list[Pose]
    mode: str
    grip: str  # "close" | "open"
    query_poses: list[Pose] | None = None
    residuals: list[float] = field(default_factory=list)
    moved_object: str | None = None


def _scale_ratio(ref: PointCloud, new: PointCloud) -> float:
    """Uniform scale taking the reference cloud to the new one (RMS radii)."""
    a = ref.points - ref.centroid()
    b = new.points - new.centroid()
    ra = float(np.sqrt(np.mean(np.sum(a * a, axis=1))))
    rb = float(np.sqrt(np.mean(np.sum(b * b, axis=1))))
    if ra < 1e-12 or rb < 1e-12:
        raise DataError("cannot estimate scale from a degenerate cloud")
    return rb / ra


def _with_scale(cfg: FieldConfig, s: float) -> FieldConfig:
    """Scale the query offsets so the field keeps its zero at scaled shapes.

    The descriptor is scale-equivariant: scaling the cloud, the query
    positions, and the query offsets by s scales every distance by s. With
    offsets scaled here and target features scaled by the caller, a uniformly
    scaled scene is an exact solution rather than a compromise.
    """
    if abs(s - 1.0) < 1e-12:
        return cfg
    return replace(cfg, query_set=QuerySet(cfg.query_set.offsets * s))


def _scale_feats(feats: FeatureTrajectory, s: float) -> FeatureTrajectory:
    if abs(s - 1.0) < 1e-12:
        return feats
    return FeatureTrajectory(tuple(np.asarray(f) * s for f in feats.steps), feats.mode)


def _transported_inits(
    delta: Pose, traj, ref: PointCloud, s: float
) -> list[Pose]:
    """Demo poses carried into the observed scene as decode initializers.

    Positions are scaled about the reference centroid before the rigid
    transport, so for a uniformly scaled same-shape cloud every init is an
    exact zero of the scaled field rather than merely nearby.
    """
    ref_c = ref.centroid()
    return [compose(delta, Pose(p.q, ref_c + s * (p.t - ref_c))) for p in traj]


def _principal_axes(points: np.ndarray) -> np.ndarray:
    """Proper-rotation basis of a centered cloud's covariance (ascending)."""
    _, vecs = np.linalg.eigh(np.cov(points.T))
    if np.linalg.det(vecs) < 0:
        vecs = vecs.copy()
        vecs[:, 0] = -vecs[:, 0]
    return vecs


def register_clouds(cfg: FieldConfig, ref: PointCloud, new: PointCloud) -> Pose:
    """Rigid delta taking the reference cloud's frame onto the new cloud.

    Candidate rotations come from an upright yaw sweep plus principal-axis
    alignments; the best candidate by descriptor residual at the centroid is
    refined by descent. Exact for same-shape clouds up to uniform scaling,
    best-effort under noise.
    """
    ref_c, new_c = ref.centroid(), new.centroid()
    anchor_ref = Pose(np.array([1.0, 0.0, 0.0, 0.0]), ref_c)
    s = _scale_ratio(ref, new)
    z_ref = encode(cfg, anchor_ref, ref) * s
    quats = [
        quat_exp(np.array([0.0, 0.0, a]))
        for a in np.linspace(0.0, 2 * np.pi, 24, endpoint=False)
    ]
    va = _principal_axes(ref.points - ref_c)
    vb = _principal_axes(new.points - new_c)
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        quats.append(matrix_to_quat(vb @ np.diag([sx, sy, sx * sy]) @ va.T))
    ev = FieldEvaluator(_with_scale(cfg, s), new)
    residuals = ev._residuals_batch([Pose(q, new_c) for q in quats], z_ref)
    best = Pose(quats[int(np.argmin(residuals))], new_c)
    refined, _ = ev.descend(best, z_ref)
    return compose(refined, invert(anchor_ref))


def expected_scene_update(
    skill: SkillRecord,
    final_query_pose: Pose,
    query_in_source: Pose,
    scene: SceneGraph,
    source: str,
    target: str,
) -> SceneGraph:
    """Set the moved object's expected pose/cloud after an object-object skill."""
    new_pose = compose(final_query_pose, invert(query_in_source))
    scene.detach(source)
    scene.set_pose(source, new_pose)
    rel = compose(invert(scene.entries[target].pose), new_pose)
    scene.attach(source, target, rel)
    return scene


def adapt_trajectory(
    skill: SkillRecord,
    scene: SceneGraph,
    store: ConstraintStore,
    cfg: FieldConfig,
    source: str | None = None,
    target: str | None = None,
    warm_start: bool = False,
) -> AdaptationResult:
    """Adapt one skill record to the observed scene.

    ``source``/``target`` bind the record's roles to scene object ids
    (defaulting to the demo ids). ``warm_start`` seeds the optimizations with
    the record's own demo poses, which makes replay in the demonstration
    scene a fixed point. Mutates ``scene`` and ``store`` on completion.
    """
    source = skill.source_id if source is None else source
    target = skill.target_id if target is None else target
    if source not in scene.entries:
        raise DataError(f"scene has no object {source!r}")

    if skill.mode == HAND_OBJECT:
        cloud = scene.entries[source].cloud
        s = _scale_ratio(skill.source_cloud, cloud)
        cfg_s, feats_s = _with_scale(cfg, s), _scale_feats(skill.feats, s)
        if warm_start:
            init = list(skill.traj)
        else:
            delta = register_clouds(cfg, skill.source_cloud, cloud)
            init = _transported_inits(delta, skill.traj, skill.source_cloud, s)
        try:
            poses = decode_trajectory(cfg_s, feats_s, cloud, init=init)
        except OptimizationError as e:
            raise AdaptationError(
                f"pose optimization failed at step {e.step_index}", step_index=e.step_index
            ) from e
        final = poses[-1]
        rel = compose(invert(final), scene.entries[source].pose)
        feat = encode(cfg, final, cloud)
        store.add(Constraint((source, EE), feat, rel))
        scene.set_ee_pose(final)
        scene.attach(source, EE, rel)
        ev = FieldEvaluator(cfg_s, cloud)
        residuals = [ev.residual(p, z) for p, z in zip(poses, feats_s.steps)]
        return AdaptationResult(
            ee_targets=poses,
            mode=HAND_OBJECT,
            grip="close",
            residuals=residuals,
            moved_object=source,
        )

    # object-object
    grasp = store.get((source, EE))
    if grasp is None:
        raise PreconditionError(
            f"object-object skill requires a grasp constraint for {source!r}"
        )
    if target not in scene.entries:
        raise DataError(f"scene has no object {target!r}")
    held_cloud = scene.entries[source].cloud
    tgt_cloud = scene.entries[target].cloud

    # Query recovery on the observed held object; the demo's query offset
    # applied to the observed pose always serves as the first restart.
    s_held = _scale_ratio(skill.source_cloud, held_cloud)
    q_init = compose(
        scene.entries[source].pose,
        Pose(skill.query_in_source.q, skill.query_in_source.t * s_held),
    )
    try:
        q_world = optimize_pose(
            _with_scale(cfg, s_held), held_cloud, skill.query_feat * s_held, init=q_init
        )
    except OptimizationError as e:
        raise AdaptationError("query-pose recovery failed", step_index=None) from e
    query_in_source = compose(invert(scene.entries[source].pose), q_world)

    s = _scale_ratio(skill.target_cloud, tgt_cloud)
    cfg_s, feats_s = _with_scale(cfg, s), _scale_feats(skill.feats, s)
    if warm_start:
        init = list(skill.traj)
    else:
        delta = register_clouds(cfg, skill.target_cloud, tgt_cloud)
        init = _transported_inits(delta, skill.traj, skill.target_cloud, s)
    try:
        qposes = decode_trajectory(cfg_s, feats_s, tgt_cloud, init=init)
    except OptimizationError as e:
        raise AdaptationError(
            f"pose optimization failed at step {e.step_index}", step_index=e.step_index
        ) from e

    # T_e_w = T_q_w . (T_q_src)^-1 . inv(T_src_e): undo the query offset, then
    # the grasp, to land on the end-effector pose.
    held_in_ee = grasp.rel
    ee_targets = [
        compose(compose(qp, invert(query_in_source)), invert(held_in_ee)) for qp in qposes
    ]

    store.remove((source, EE))
    expected_scene_update(skill, qposes[-1], query_in_source, scene, source, target)
    scene.set_ee_pose(ee_targets[-1])
    feat = constraint_feature(cfg, scene.entries[source].cloud, scene.entries[target].cloud)
    rel = compose(invert(scene.entries[target].pose), scene.entries[source].pose)
    store.add(Constraint((source, target), feat, rel))

    ev = FieldEvaluator(cfg_s, tgt_cloud)
    residuals = [ev.residual(p, z) for p, z in zip(qposes, feats_s.steps)]
    return AdaptationResult(
        ee_targets=ee_targets,
        mode=OBJECT_OBJECT,
        grip="open",
        query_poses=qposes,
        residuals=residuals,
        moved_object=source,
    )
