import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headpose_forensics import so3

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)


class TestExpLog:
    def test_hat_matches_cross(self):
        v, a = np.array([0.3, -1.2, 2.0]), np.array([1.0, 4.0, -0.5])
        assert np.allclose(so3.hat(v) @ a, np.cross(v, a))

    def test_exp_of_zero_is_identity(self):
        assert np.array_equal(so3.exp_map(np.zeros(3)), np.eye(3))

    def test_exp_matches_elementary_rotations(self):
        assert np.allclose(so3.exp_map([0.7, 0, 0]), so3.rot_x(0.7), atol=1e-15)
        assert np.allclose(so3.exp_map([0, -0.4, 0]), so3.rot_y(-0.4), atol=1e-15)
        assert np.allclose(so3.exp_map([0, 0, 2.5]), so3.rot_z(2.5), atol=1e-15)

    @given(vec3)
    def test_exp_is_rotation(self, w):
        assert so3.is_rotation(so3.exp_map(w), tol=1e-12)

    @given(vec3.filter(lambda w: 1e-6 < np.linalg.norm(w) < np.pi - 1e-3))
    def test_log_inverts_exp(self, w):
        assert np.allclose(so3.log_map(so3.exp_map(w)), w, atol=1e-9)

    def test_log_near_pi(self):
        axis = np.array([1.0, 2.0, -2.0]) / 3.0
        w = (np.pi - 1e-7) * axis
        assert np.allclose(so3.log_map(so3.exp_map(w)), w, atol=1e-6)


class TestAngles:
    def test_rz_pi_is_exact(self):
        assert np.array_equal(so3.RZ_PI, so3.rot_z(np.pi).round(12) + 0.0)

    @pytest.mark.parametrize("theta", [0.0, 1e-9, 0.3, 2.0, np.pi - 1e-9, np.pi])
    def test_rotation_angle(self, theta):
        R = so3.exp_map(theta * np.array([0.0, 0.6, 0.8]))
        assert so3.rotation_angle(R) == pytest.approx(theta, abs=1e-12)

    def test_geodesic_distance_symmetric(self):
        rng = np.random.default_rng(2)
        A, B = so3.random_rotation(rng), so3.random_rotation(rng)
        assert so3.geodesic_distance(A, B) == pytest.approx(so3.geodesic_distance(B, A))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_random_rotation_valid(self, seed):
        assert so3.is_rotation(so3.random_rotation(np.random.default_rng(seed)))

    def test_is_rotation_rejects(self):
        assert not so3.is_rotation(np.diag([1.0, 1.0, -1.0]))
        assert not so3.is_rotation(2 * np.eye(3))
        assert not so3.is_rotation(np.full((3, 3), np.nan))
