import numpy as np
import pytest

from nodtamp.adaptation import (
    AdaptationResult,
    ConstraintStore,
    SceneEntry,
    SceneGraph,
    _scale_ratio,
    adapt_trajectory,
    register_clouds,
)
from nodtamp.descriptor import FieldConfig, encode
from nodtamp.errors import DataError, PreconditionError
from nodtamp.geometry import Pose, PointCloud, compose, invert, pose_delta, quat_exp
from nodtamp.skills import (
    EE,
    HAND_OBJECT,
    OBJECT_OBJECT,
    Constraint,
    build_skill,
    extract_contact_events,
    segment_demo,
)
from nodtamp import shapes
from nodtamp.tasks import DEMO_CONTACT_THRESHOLD, demo_world, scripted_expert

CFG = FieldConfig()


@pytest.fixture(scope="module")
def peg_setup():
    demo = scripted_expert(demo_world("peg-pickplace"), "peg-pickplace")
    events = extract_contact_events(demo, threshold=DEMO_CONTACT_THRESHOLD)
    spans = segment_demo(demo, events, trim_k=10)
    records = [build_skill(demo, s, CFG, demo_id=f"d-{i}") for i, s in enumerate(spans)]
    return demo, spans, records


def _scene_at(demo, step):
    entries = {
        obj: SceneEntry(cloud=demo.cloud_at(obj, step), pose=demo.object_poses[step][obj])
        for obj in demo.initial_clouds
    }
    return SceneGraph(entries=entries, ee_pose=demo.ee_poses[step])


def _pose(yaw, t):
    return Pose(quat_exp(np.array([0.0, 0.0, yaw])), np.asarray(t, dtype=float))


def test_scene_graph_attach_and_follow():
    cloud = PointCloud(np.array([[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.01], [0.0, 0.0, 0.0]]))
    g = SceneGraph(
        entries={
            "a": SceneEntry(cloud=cloud, pose=Pose.identity()),
            "b": SceneEntry(cloud=cloud, pose=_pose(0.0, [0.1, 0, 0])),
        }
    )
    rel = compose(invert(g.ee_pose), g.entries["a"].pose)
    g.attach("a", EE, rel)
    assert g.attached_to_ee() == ["a"]
    moved = _pose(0.3, [0.0, 0.05, 0.2])
    g.set_ee_pose(moved)
    want = compose(moved, rel)
    assert pose_delta(g.entries["a"].pose, want) == pytest.approx((0, 0), abs=1e-12)
    assert np.allclose(g.entries["a"].cloud.points, want.apply(cloud.points))
    g.validate()
    g.detach("a")
    g.set_ee_pose(Pose.identity())
    assert pose_delta(g.entries["a"].pose, want) == pytest.approx((0, 0), abs=1e-12)


def test_scene_graph_cycle_and_validation():
    cloud = PointCloud(np.zeros((4, 3)))
    g = SceneGraph(
        entries={
            "a": SceneEntry(cloud=cloud, pose=Pose.identity()),
            "b": SceneEntry(cloud=cloud, pose=Pose.identity()),
        }
    )
    g.attach("a", "b", Pose.identity())
    with pytest.raises(DataError):
        g.attach("b", "a", Pose.identity())
    with pytest.raises(DataError):
        g.attach("a", "missing", Pose.identity())
    # manually drift the attached child; validate must notice
    g.entries["a"].pose = _pose(0.0, [0.5, 0, 0])
    with pytest.raises(DataError):
        g.validate()


def test_constraint_store_round_trip():
    store = ConstraintStore()
    c = Constraint(("a", EE), np.zeros(4), Pose.identity())
    store.add(c)
    assert store.get(("a", EE)) is c
    clone = store.copy()
    store.remove(("a", EE))
    assert store.get(("a", EE)) is None
    assert clone.get(("a", EE)) is c


def test_scale_ratio_oracle():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(64, 3))
    ref = PointCloud(pts)
    new = PointCloud(pts * 1.7 + [0.2, 0.0, -0.1])
    assert _scale_ratio(ref, new) == pytest.approx(1.7, abs=1e-12)
    with pytest.raises(DataError):
        _scale_ratio(PointCloud(np.zeros((5, 3))), new)


def test_register_clouds_recovers_rigid_motion():
    ref = PointCloud(shapes.build("stand", 1.0))
    g = _pose(0.7, [0.12, -0.05, 0.0])
    new = PointCloud(g.apply(ref.points))
    delta = register_clouds(CFG, ref, new)
    assert np.max(np.linalg.norm(delta.apply(ref.points) - new.points, axis=1)) < 1e-6


def test_register_clouds_scaled_shape():
    ref = PointCloud(shapes.build("stand", 1.0))
    s = 1.2
    g = _pose(-1.1, [0.0, 0.08, 0.0])
    new = PointCloud(g.apply(ref.points * s))
    delta = register_clouds(CFG, ref, new)
    # the delta maps the reference centroid onto the new one and carries the yaw
    assert np.allclose(delta.apply(ref.centroid()), new.centroid(), atol=1e-6)
    scaled_about_c = ref.centroid() + s * (ref.points - ref.centroid())
    moved = delta.apply(scaled_about_c)
    assert np.max(np.linalg.norm(moved - new.points, axis=1)) < 1e-6


def test_warm_start_replay_hand_object(peg_setup):
    demo, spans, records = peg_setup
    span, rec = spans[0], records[0]
    scene = _scene_at(demo, span.start)
    store = ConstraintStore()
    res = adapt_trajectory(rec, scene, store, CFG, warm_start=True)
    assert res.mode == HAND_OBJECT and res.grip == "close"
    assert max(res.residuals) <= 1e-6
    assert pose_delta(res.ee_targets[-1], demo.ee_poses[span.end]) == pytest.approx(
        (0, 0), abs=1e-6
    )
    # the grasp is recorded and the scene updated
    assert store.get(("peg", EE)) is not None
    assert scene.attached_to_ee() == ["peg"]
    scene.validate()


def test_warm_start_replay_object_object(peg_setup):
    demo, spans, records = peg_setup
    span, rec = spans[1], records[1]
    scene = _scene_at(demo, span.start)
    store = ConstraintStore()
    ee = demo.ee_poses[span.start]
    rel = compose(invert(ee), demo.object_poses[span.start]["peg"])
    feat = encode(CFG, ee, demo.cloud_at("peg", span.start))
    store.add(Constraint(("peg", EE), feat, rel))
    res = adapt_trajectory(rec, scene, store, CFG, warm_start=True)
    assert res.mode == OBJECT_OBJECT and res.grip == "open"
    assert max(res.residuals) <= 1e-6
    assert res.query_poses is not None and len(res.query_poses) == len(res.ee_targets)
    assert pose_delta(res.ee_targets[-1], demo.ee_poses[span.end]) == pytest.approx(
        (0, 0), abs=1e-5
    )
    # the grasp was consumed and replaced by a placement constraint
    assert store.get(("peg", EE)) is None
    assert store.get(("peg", "stand")) is not None
    assert scene.entries["peg"].parent == "stand"
    scene.validate()


def test_object_object_requires_grasp(peg_setup):
    demo, spans, records = peg_setup
    span, rec = spans[1], records[1]
    scene = _scene_at(demo, span.start)
    with pytest.raises(PreconditionError):
        adapt_trajectory(rec, scene, ConstraintStore(), CFG, warm_start=True)


def test_adapt_unknown_object(peg_setup):
    demo, spans, records = peg_setup
    scene = _scene_at(demo, spans[0].start)
    with pytest.raises(DataError):
        adapt_trajectory(records[0], scene, ConstraintStore(), CFG, source="ghost")


def test_adapt_scaled_scene_cold_start(peg_setup):
    """Cold-start adaptation to a uniformly scaled, rigidly moved copy of the
    demo scene. The peg is yaw-symmetric, so sampled points leave a small
    residual floor under the rotation ambiguity; the grasp position itself
    must still land on the scaled demo grasp."""
    demo, spans, records = peg_setup
    span, rec = spans[0], records[0]
    s = 1.15
    g = _pose(0.9, [0.05, -0.03, 0.0])
    base = demo.cloud_at("peg", span.start)
    c = base.centroid()
    scaled = PointCloud(g.apply(c + s * (base.points - c)))
    scene = SceneGraph(
        entries={"peg": SceneEntry(cloud=scaled, pose=compose(g, demo.object_poses[span.start]["peg"]))}
    )
    res = adapt_trajectory(rec, scene, ConstraintStore(), CFG)
    assert max(res.residuals) <= 2e-3
    p = demo.ee_poses[span.end]
    want_t = g.apply(c + s * (p.t - c))
    assert np.linalg.norm(res.ee_targets[-1].t - want_t) < 0.002


def test_adaptation_result_defaults():
    r = AdaptationResult(ee_targets=[], mode=HAND_OBJECT, grip="close")
    assert r.query_poses is None and r.residuals == [] and r.moved_object is None
