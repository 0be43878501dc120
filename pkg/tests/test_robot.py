import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from btsot.errors import ConfigurationError, EvaluationError
from btsot.robot import (Pose, RobotModel, RobotState, ee_transform, forward_kinematics,
                         geometric_jacobian, integrate_state, load_default_model, make_transform,
                         planar_transform, wrap_angle)

from oracles import central_difference, dh_matrix

seeds = st.integers(0, 10**6)


def random_q(model, rng):
    return rng.uniform(model.q_min, model.q_max)


def oracle_ee(model, q, base):
    x, y, th = base
    T = np.eye(4)
    T[:3, :3] = Rotation.from_euler("z", th).as_matrix()
    T[:2, 3] = x, y
    T = T @ model.mount
    for (a, alpha, d, off), qi in zip(model.dh, q):
        T = T @ dh_matrix(a, alpha, d, qi + off)
    return T @ model.tool


def test_fk_matches_oracle_composition(model, rng):
    for _ in range(20):
        q = random_q(model, rng)
        base = rng.uniform([-1, -1, -np.pi], [1, 1, np.pi])
        assert np.allclose(ee_transform(model, q, base), oracle_ee(model, q, base), atol=1e-12)


def test_fk_zero_configuration_stacks_offsets(model):
    # alternating twists cancel in pairs: zero pose is a vertical column
    p = forward_kinematics(model, np.zeros(model.n), np.zeros(3)).position
    reach = model.dh[:, 2].sum() + model.tool[2, 3]
    assert np.allclose(p, model.mount[:3, 3] + [0, 0, reach], atol=1e-12)
    assert np.allclose(p, [0.0, 0.2, 1.45], atol=1e-12)  # frozen golden value


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(-2, 2), st.floats(-2, 2))
def test_base_translation_shifts_ee(seed, dx, dy):
    model = load_default_model()
    rng = np.random.default_rng(seed)
    q, base = random_q(model, rng), rng.uniform(-1, 1, 3)
    p0 = forward_kinematics(model, q, base).position
    p1 = forward_kinematics(model, q, base + [dx, dy, 0]).position
    assert np.allclose(p1 - p0, [dx, dy, 0], atol=1e-12)


def test_base_rotation_rotates_ee(model, rng):
    q = random_q(model, rng)
    p0 = forward_kinematics(model, q, np.zeros(3)).position
    p1 = forward_kinematics(model, q, [0, 0, np.pi / 2]).position
    assert np.allclose(p1, [-p0[1], p0[0], p0[2]], atol=1e-12)


def test_quaternion_is_unit_and_consistent(model, rng):
    for _ in range(20):
        pose = forward_kinematics(model, random_q(model, rng), rng.uniform(-1, 1, 3))
        assert abs(np.linalg.norm(pose.quaternion) - 1) <= 1e-12
        assert np.allclose(pose.matrix()[:3, :3] @ pose.matrix()[:3, :3].T, np.eye(3), atol=1e-12)


def test_pose_matrix_round_trip(model, rng):
    T = ee_transform(model, random_q(model, rng), rng.uniform(-1, 1, 3))
    assert np.allclose(Pose.from_matrix(T).matrix(), T, atol=1e-12)


def test_jacobian_against_central_differences(model, rng):
    worst = 0.0
    for _ in range(100):
        q, base = random_q(model, rng), rng.uniform(-1, 1, 3)
        J = geometric_jacobian(model, q, base)
        Jp = central_difference(lambda x: ee_transform(model, x, base)[:3, 3], q)
        R0 = ee_transform(model, q, base)[:3, :3]

        def rotvec(x):
            return Rotation.from_matrix(ee_transform(model, x, base)[:3, :3] @ R0.T).as_rotvec()

        Jw = central_difference(rotvec, q)
        worst = max(worst, np.max(np.abs(J[:3] - Jp)), np.max(np.abs(J[3:] - Jw)))
    assert worst <= 1e-5


def test_jacobian_independent_of_base_translation(model, rng):
    q = random_q(model, rng)
    assert np.allclose(geometric_jacobian(model, q, [0, 0, 0.3]),
                       geometric_jacobian(model, q, [5, -2, 0.3]), atol=1e-12)


def test_wrong_joint_count_rejected(model):
    with pytest.raises(ValueError):
        forward_kinematics(model, np.zeros(model.n + 1), np.zeros(3))


def test_wrap_angle():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)


def test_integrate_state_examples(model):
    s = RobotState(q=np.zeros(model.n), base=[0, 0, 3.1])
    qd = np.full(model.n, 0.5)
    out = integrate_state(model, s, qd, [0.1, -0.2, 1.0], 0.1)
    assert np.allclose(out.q, 0.05)
    assert np.allclose(out.base[:2], [0.01, -0.02])
    assert out.base[2] == pytest.approx(wrap_angle(3.2))
    assert np.array_equal(s.q, np.zeros(model.n))  # input untouched


def test_integrate_state_clamps_to_bounds(model):
    s = RobotState(q=model.q_max - 0.01)
    out = integrate_state(model, s, np.full(model.n, 10.0), np.zeros(3), 0.01)
    assert np.array_equal(out.q, model.q_max)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(1e-4, 0.1))
def test_integration_stays_within_bounds(seed, dt):
    model = load_default_model()
    rng = np.random.default_rng(seed)
    s = RobotState(q=random_q(model, rng))
    for _ in range(5):
        s = integrate_state(model, s, rng.normal(scale=50, size=model.n), rng.normal(size=3), dt)
        assert np.all(s.q >= model.q_min) and np.all(s.q <= model.q_max)
        assert -np.pi < s.base[2] <= np.pi


def test_integrate_rejects_bad_input(model):
    s = RobotState(q=np.zeros(model.n))
    with pytest.raises(ValueError):
        integrate_state(model, s, np.zeros(model.n), np.zeros(3), 0.0)
    with pytest.raises(EvaluationError):
        integrate_state(model, s, np.full(model.n, np.nan), np.zeros(3), 0.01)


def test_gripper_state_label():
    assert RobotState(q=[0.0], gripper_aperture=0.0).gripper == "closed"
    assert RobotState(q=[0.0], gripper_aperture=0.3).gripper == "open"


@pytest.mark.parametrize("patch, msg", [
    ({"q_min": [0.0] * 7, "q_max": [0.0] * 7}, "q_min < q_max"),
    ({"v_max": [0.0] * 7}, "positive"),
    ({"q_min": [0.0]}, "7 entries"),
])
def test_model_validation(model, patch, msg):
    kwargs = dict(dh=model.dh, mount=model.mount, tool=model.tool, q_min=model.q_min,
                  q_max=model.q_max, v_max=model.v_max)
    kwargs.update(patch)
    with pytest.raises(ConfigurationError, match=msg):
        RobotModel(**kwargs)


def test_non_rigid_mount_rejected(model):
    bad = make_transform()
    bad[0, 0] = 1.1
    with pytest.raises(ConfigurationError, match="orthonormal"):
        RobotModel(model.dh, bad, model.tool, model.q_min, model.q_max, model.v_max)


def test_from_dict_reports_missing_keys():
    with pytest.raises(ConfigurationError, match="malformed"):
        RobotModel.from_dict({"dh": [{"a": 0, "alpha": 0, "d": 0.1}]})


def test_planar_transform(rng):
    x, y, th = rng.normal(size=3)
    T = planar_transform((x, y, th))
    assert np.allclose(T @ [1, 0, 0, 1], [x + np.cos(th), y + np.sin(th), 0, 1])
