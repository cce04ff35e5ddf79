import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodtamp.geometry import (
    exp_step,
    Pose,
    PointCloud,
    TangentStep,
    compose,
    interpolate,
    invert,
    log_pose,
    matrix_to_quat,
    pose_delta,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_to_matrix,
    random_quat,
    retract,
    rotation_angle,
    transform_cloud,
)

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def _rand_pose(seed):
    rng = np.random.default_rng(seed)
    return Pose(random_quat(rng), rng.uniform(-1, 1, 3))


def test_quat_mul_identity():
    q = random_quat(np.random.default_rng(1))
    e = np.array([1.0, 0.0, 0.0, 0.0])
    assert np.allclose(quat_mul(e, q), q)
    assert np.allclose(quat_mul(q, quat_conj(q)), e, atol=1e-12)


def test_quat_matrix_round_trip():
    for seed in range(20):
        q = random_quat(np.random.default_rng(seed))
        m = quat_to_matrix(q)
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(m), 1.0)
        q2 = matrix_to_quat(m)
        # same rotation up to global sign
        assert np.allclose(q, q2, atol=1e-9) or np.allclose(q, -q2, atol=1e-9)


@given(vec3)
@settings(max_examples=50, deadline=None)
def test_quat_exp_log_round_trip(omega):
    q = quat_exp(omega)
    assert np.isclose(np.linalg.norm(q), 1.0)
    back = quat_log(q)
    assert np.allclose(back, omega, atol=1e-9)


def test_compose_invert_round_trip():
    a, b = _rand_pose(3), _rand_pose(4)
    ab = compose(a, b)
    assert np.allclose(compose(ab, invert(b)).t, a.t, atol=1e-12)
    dt, dr = pose_delta(compose(invert(a), a), Pose.identity())
    assert dt < 1e-12 and dr < 1e-9


def test_apply_matches_matrix_form():
    p = _rand_pose(5)
    pts = np.random.default_rng(6).normal(size=(10, 3))
    want = pts @ p.rotation_matrix().T + p.t
    assert np.allclose(p.apply(pts), want)


def test_rotation_angle():
    q = quat_exp(np.array([0.0, 0.0, 0.3 / 2 * 2]))  # 0.3 rad about z
    assert np.isclose(rotation_angle(Pose(q, np.zeros(3))), 0.3, atol=1e-12)


def test_interpolate_endpoints_and_midpoint():
    a, b = _rand_pose(7), _rand_pose(8)
    assert pose_delta(interpolate(a, b, 0.0), a) == pytest.approx((0, 0), abs=1e-9)
    assert pose_delta(interpolate(a, b, 1.0), b) == pytest.approx((0, 0), abs=1e-9)
    mid = interpolate(a, b, 0.5)
    assert np.allclose(mid.t, (a.t + b.t) / 2)


def test_retract_applies_world_rotation_and_translation():
    p = _rand_pose(9)
    step = TangentStep.from_vector(np.array([0.1, -0.2, 0.05, 0.01, 0.02, -0.03]))
    q = retract(p, step)
    assert np.allclose(q.t, p.t + step.v)
    # rotation increment is applied in the world frame
    assert np.allclose(q.rotation_matrix(), quat_to_matrix(quat_exp(step.omega)) @ p.rotation_matrix())
    # zero step is a no-op
    same = retract(p, TangentStep.from_vector(np.zeros(6)))
    assert pose_delta(same, p) == pytest.approx((0, 0), abs=1e-12)


def test_log_pose_inverts_exp_step():
    step = TangentStep.from_vector(np.array([0.2, -0.1, 0.3, 0.5, -0.4, 0.1]))
    back = log_pose(exp_step(step))
    assert np.allclose(back.as_vector(), step.as_vector(), atol=1e-12)


def test_pose_json_round_trip():
    p = _rand_pose(10)
    q = Pose.from_json(p.to_json())
    assert pose_delta(p, q) == pytest.approx((0, 0), abs=1e-12)


def test_cloud_transform_and_json():
    rng = np.random.default_rng(11)
    cloud = PointCloud(rng.normal(size=(32, 3)), "world")
    p = _rand_pose(12)
    moved = transform_cloud(p, cloud)
    assert np.allclose(moved.points, p.apply(cloud.points))
    back = PointCloud.from_json(cloud.to_json())
    assert np.allclose(back.points, cloud.points)
    assert back.frame == cloud.frame


def test_cloud_centroid():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    assert np.allclose(cloud.centroid(), [1.0, 0.0, 0.0])
