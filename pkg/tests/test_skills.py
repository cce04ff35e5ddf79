import numpy as np
import pytest

from nodtamp.descriptor import FieldConfig
from nodtamp.errors import DataError, EmptySegmentationError, SchemaError
from nodtamp.geometry import Pose, PointCloud, compose, invert, pose_delta
from nodtamp.skills import (
    EE,
    HAND_OBJECT,
    MAX_STEP_JUMP,
    OBJECT_OBJECT,
    Constraint,
    RawDemo,
    SkillRecord,
    build_skill,
    extract_contact_events,
    load_library,
    save_library,
    segment_demo,
)
from nodtamp.tasks import DEMO_CONTACT_THRESHOLD, demo_world, scripted_expert


@pytest.fixture(scope="module")
def peg_demo():
    return scripted_expert(demo_world("peg-pickplace"), "peg-pickplace")


@pytest.fixture(scope="module")
def peg_records(peg_demo):
    cfg = FieldConfig()
    events = extract_contact_events(peg_demo, threshold=DEMO_CONTACT_THRESHOLD)
    spans = segment_demo(peg_demo, events, trim_k=20)
    return [build_skill(peg_demo, s, cfg, demo_id=f"d-{i}") for i, s in enumerate(spans)]


def _static_demo(n=3):
    cloud = PointCloud(np.zeros((4, 3)))
    ident = Pose.identity()
    return RawDemo(
        ee_poses=[ident] * n,
        gripper=[False] * n,
        initial_clouds={"a": cloud},
        object_poses=[{"a": ident}] * n,
    )


def test_raw_demo_length_validation():
    with pytest.raises(DataError):
        RawDemo(
            ee_poses=[Pose.identity()],
            gripper=[False, False],
            initial_clouds={},
            object_poses=[{}],
        )


def test_cloud_at_moves_with_object_pose():
    cloud = PointCloud(np.array([[0.0, 0, 0], [0.01, 0, 0]]))
    p0 = Pose.identity()
    p1 = Pose(np.array([1.0, 0, 0, 0]), np.array([0.0, 0.0, 0.05]))
    demo = RawDemo(
        ee_poses=[p0, p0],
        gripper=[False, False],
        initial_clouds={"a": cloud},
        object_poses=[{"a": p0}, {"a": p1}],
    )
    moved = demo.cloud_at("a", 1)
    assert np.allclose(moved.points, cloud.points + [0.0, 0.0, 0.05])
    with pytest.raises(DataError):
        demo.cloud_at("missing", 0)


def test_constraint_rejects_self_pair():
    with pytest.raises(DataError):
        Constraint(("a", "a"), np.zeros(4), Pose.identity())


def test_contact_events_fire_once_per_approach():
    # ee descends onto a flat patch, lifts clear, then touches again
    cloud = PointCloud(np.array([[x / 100, y / 100, 0.0] for x in range(3) for y in range(3)]))
    heights = [0.05, 0.001, 0.001, 0.05, 0.001]
    poses = [Pose(np.array([1.0, 0, 0, 0]), np.array([0.01, 0.01, h])) for h in heights]
    demo = RawDemo(
        ee_poses=poses,
        gripper=[False] * 5,
        initial_clouds={"a": cloud},
        object_poses=[{"a": Pose.identity()}] * 5,
    )
    events = extract_contact_events(demo, threshold=0.002, gripper_offsets=np.zeros((1, 3)))
    assert events == [(1, (EE, "a")), (4, (EE, "a"))]


def test_segment_peg_demo(peg_demo):
    events = extract_contact_events(peg_demo, threshold=DEMO_CONTACT_THRESHOLD)
    spans = segment_demo(peg_demo, events, trim_k=20)
    assert [s.mode for s in spans] == [HAND_OBJECT, OBJECT_OBJECT]
    pick, place = spans
    assert (pick.source, pick.target) == ("peg", EE)
    assert (place.source, place.target) == ("peg", "stand")
    assert pick.end < place.start  # disjoint and ordered
    for s in spans:
        assert 1 <= s.end - s.start + 1 <= 20
    # the pick span ends exactly at the gripper-close step
    assert peg_demo.gripper[pick.end] and not peg_demo.gripper[pick.end - 1]


def test_segment_demo_validation(peg_demo):
    with pytest.raises(DataError):
        segment_demo(peg_demo, [], trim_k=0)
    with pytest.raises(EmptySegmentationError):
        segment_demo(_static_demo(), [])


def test_build_skill_hand_object(peg_demo, peg_records):
    rec = peg_records[0]
    assert rec.mode == HAND_OBJECT
    assert rec.query_feat is None
    assert len(rec.traj) == len(rec.feats)
    grasp = rec.grasp_eff()
    assert grasp is not None and grasp.key == ("peg", EE)
    # rel maps the end-effector frame to the held object's pose
    end = rec.traj[-1]
    span_end_obj = peg_demo.object_poses[len(peg_demo) - 1]["peg"]
    del span_end_obj
    recovered = compose(end, grasp.rel)
    events = extract_contact_events(peg_demo, threshold=DEMO_CONTACT_THRESHOLD)
    span = segment_demo(peg_demo, events, trim_k=20)[0]
    want = peg_demo.object_poses[span.end]["peg"]
    assert pose_delta(recovered, want) == pytest.approx((0, 0), abs=1e-9)


def test_build_skill_object_object(peg_demo, peg_records):
    rec = peg_records[1]
    assert rec.mode == OBJECT_OBJECT
    assert rec.query_feat is not None and rec.query_in_source is not None
    assert rec.eff_del == [("peg", EE)]
    assert rec.pre and rec.pre[0].key == ("peg", EE)
    assert rec.eff_add and rec.eff_add[0].key == ("peg", "stand")
    # the query frame rides rigidly on the held object
    events = extract_contact_events(peg_demo, threshold=DEMO_CONTACT_THRESHOLD)
    span = segment_demo(peg_demo, events, trim_k=20)[1]
    for i, step in enumerate(range(span.start, span.end + 1)):
        want = compose(peg_demo.object_poses[step]["peg"], rec.query_in_source)
        assert pose_delta(rec.traj[i], want) == pytest.approx((0, 0), abs=1e-9)


def test_span_quality_rejects_teleport():
    cloud = PointCloud(np.zeros((4, 3)))
    far = Pose(np.array([1.0, 0, 0, 0]), np.array([MAX_STEP_JUMP * 2, 0.0, 0.0]))
    demo = RawDemo(
        ee_poses=[Pose.identity(), far],
        gripper=[False, True],
        initial_clouds={"a": cloud},
        object_poses=[{"a": Pose.identity()}] * 2,
    )
    spans = segment_demo(demo, [], trim_k=5)
    with pytest.raises(DataError):
        build_skill(demo, spans[0], FieldConfig())


def test_skill_record_json_round_trip(peg_records):
    for rec in peg_records:
        back = SkillRecord.from_json(rec.to_json())
        assert back.demo_id == rec.demo_id
        assert back.mode == rec.mode
        assert len(back.traj) == len(rec.traj)
        assert all(
            pose_delta(a, b) == pytest.approx((0, 0), abs=1e-12)
            for a, b in zip(back.traj, rec.traj)
        )
        assert all(np.allclose(a, b) for a, b in zip(back.feats.steps, rec.feats.steps))
        assert np.allclose(back.source_cloud.points, rec.source_cloud.points)


def test_skill_record_mode_invariants(peg_records):
    rec = peg_records[0]
    with pytest.raises(DataError):
        SkillRecord(
            demo_id="x",
            name="pick",
            mode=HAND_OBJECT,
            source_category="peg",
            target_category=EE,
            traj=rec.traj,
            feats=rec.feats,
            pre=[],
            eff_add=[],
            eff_del=[],
            source_cloud=rec.source_cloud,
            query_feat=np.zeros(4),
        )


def test_save_and_load_library(tmp_path, peg_records):
    save_library(peg_records, tmp_path)
    back = load_library(tmp_path)
    assert [r.demo_id for r in back] == sorted(r.demo_id for r in peg_records)
    assert all(np.allclose(a.feats.steps[0], b.feats.steps[0]) for a, b in zip(back, peg_records))


def test_load_library_missing_index(tmp_path):
    with pytest.raises(SchemaError):
        load_library(tmp_path / "nowhere")
