import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewsynth.errors import AmbiguousLogError, InvalidArgumentError
from viewsynth.geometry import (
    Intrinsics,
    Pose,
    Quaternion,
    backproject,
    compose,
    euler_xyz,
    exp_twist,
    invert,
    log_pose,
    pose_to_tq,
    project,
    rotation_to_quaternion,
)

finite = st.floats(-1.0, 1.0, allow_nan=False)
twists = st.lists(finite, min_size=6, max_size=6).map(np.array)


def random_pose(rng, rot=np.pi * 0.9, trans=5.0) -> Pose:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0, rot)
    return exp_twist(np.concatenate([rng.uniform(-trans, trans, 3), phi]))


def assert_pose_close(A: Pose, B: Pose, tol=1e-9):
    np.testing.assert_allclose(A.matrix, B.matrix, atol=tol)


class TestIntrinsics:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(InvalidArgumentError):
            Intrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(InvalidArgumentError):
            Intrinsics(1.0, 1.0, 5.0, 1.0, 4, 4)

    def test_half_scale_keeps_ray_of_block_centre(self):
        K = Intrinsics(100.0, 100.0, 31.5, 23.5, 64, 48)
        k = K.scaled(0.5, 32, 24)
        # new pixel 0 covers old pixels 0 and 1, centred at 0.5
        assert (0 - k.cx) / k.fx == pytest.approx((0.5 - K.cx) / K.fx)


class TestProjection:
    def test_principal_point_maps_to_axis(self, K):
        np.testing.assert_allclose(backproject((K.cx, K.cy), 5.0, K), [0, 0, 5])

    def test_one_focal_length_right(self, K):
        np.testing.assert_allclose(backproject((K.cx + K.fx, K.cy), 2.0, K), [2, 0, 2])

    def test_project_examples(self, K):
        p = project([0, 0, 5], K)
        assert p.in_front and p.pixel == (K.cx, K.cy) and p.depth == 5
        p = project([2, 0, 2], K)
        np.testing.assert_allclose(p.pixel, (K.cx + K.fx, K.cy))

    def test_behind_camera_flag(self, K):
        assert not project([0, 0, -1], K).in_front

    def test_nonpositive_depth_rejected(self, K):
        with pytest.raises(InvalidArgumentError):
            backproject((1, 1), 0.0, K)

    @given(st.floats(0, 63), st.floats(0, 47), st.floats(0.1, 100))
    def test_round_trip(self, u, v, d):
        K = Intrinsics(100.0, 110.0, 31.5, 23.5, 64, 48)
        p = project(backproject((u, v), d, K), K)
        np.testing.assert_allclose(p.pixel, (u, v), atol=1e-9)
        assert p.depth == pytest.approx(d, abs=1e-9)


class TestCompose:
    def test_identity_right(self, rng):
        T = random_pose(rng)
        assert_pose_close(compose(T, Pose.identity()), T)

    def test_inverse_left(self, rng):
        T = random_pose(rng)
        assert_pose_close(compose(invert(T), T), Pose.identity())

    def test_translations_add(self):
        T = compose(Pose.from_translation([1, 0, 0]), Pose.from_translation([0, 2, 0]))
        np.testing.assert_allclose(T.translation, [1, 2, 0])

    def test_applies_right_operand_first(self, rng):
        A, B = random_pose(rng), random_pose(rng)
        x = rng.standard_normal(3)
        np.testing.assert_allclose(compose(A, B).apply(x), A.apply(B.apply(x)), atol=1e-12)

    def test_associative(self, rng):
        for _ in range(20):
            A, B, C = (random_pose(rng) for _ in range(3))
            assert_pose_close(compose(compose(A, B), C), compose(A, compose(B, C)))

    def test_orthonormal_after_long_chain(self, rng):
        T = Pose.identity()
        for _ in range(1000):
            T = compose(random_pose(rng, trans=0.1), T)
            T = compose(invert(random_pose(rng, trans=0.1)), T)
        assert T.is_valid(1e-9)


class TestInvert:
    def test_identity(self):
        assert_pose_close(invert(Pose.identity()), Pose.identity())

    def test_pure_translation(self):
        np.testing.assert_allclose(invert(Pose.from_translation([1, -2, 3])).translation, [-1, 2, -3])

    def test_matches_matrix_inverse(self, rng):
        for _ in range(10):
            T = random_pose(rng)
            np.testing.assert_allclose(invert(T).matrix, np.linalg.inv(T.matrix), atol=1e-9)


class TestTwist:
    def test_exp_zero(self):
        assert_pose_close(exp_twist(np.zeros(6)), Pose.identity())

    def test_quarter_turn_yaw(self):
        R = exp_twist([0, 0, 0, 0, 0, np.pi / 2]).rotation
        np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_log_exp_round_trip(self, rng):
        for _ in range(100):
            xi = rng.uniform(-0.5, 0.5, 6)
            np.testing.assert_allclose(log_pose(exp_twist(xi)), xi, atol=1e-8)

    @settings(max_examples=50)
    @given(twists)
    def test_log_exp_property(self, xi):
        np.testing.assert_allclose(log_pose(exp_twist(xi)), xi, atol=1e-8)

    def test_log_at_pi_is_ambiguous(self):
        with pytest.raises(AmbiguousLogError):
            log_pose(exp_twist([0, 0, 0, np.pi, 0, 0]))


class TestQuaternion:
    def test_identity(self):
        t, q = pose_to_tq(Pose.identity())
        np.testing.assert_allclose(t, 0)
        assert q == Quaternion(1.0, 0.0, 0.0, 0.0)

    def test_half_turn_about_z(self):
        _, q = pose_to_tq(Pose(np.diag([-1.0, -1.0, 1.0]), np.zeros(3)))
        np.testing.assert_allclose(q.as_array(), [0, 0, 0, 1], atol=1e-12)

    def test_hemisphere(self, rng):
        for _ in range(50):
            q = rotation_to_quaternion(random_pose(rng, rot=np.pi).rotation)
            assert q.w >= 0
            assert np.linalg.norm(q.as_array()) == pytest.approx(1.0, abs=1e-9)

    def test_round_trip(self, rng):
        for _ in range(50):
            R = random_pose(rng, rot=np.pi).rotation
            np.testing.assert_allclose(rotation_to_quaternion(R).to_rotation(), R, atol=1e-9)


def test_euler_order_is_x_then_y_then_z():
    rx, ry, rz = 0.1, -0.2, 0.3
    expected = exp_twist([0, 0, 0, 0, 0, rz]).rotation @ exp_twist([0, 0, 0, 0, ry, 0]).rotation @ exp_twist([0, 0, 0, rx, 0, 0]).rotation
    np.testing.assert_allclose(euler_xyz(rx, ry, rz), expected, atol=1e-12)
