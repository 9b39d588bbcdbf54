import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headpose_forensics import so3
from headpose_forensics.errors import InvalidInputError, ParseError
from headpose_forensics.features import (
    FEATURE_FILE_COLUMNS,
    FEATURE_NAMES,
    FeatureVector,
    PosePair,
    cosine_distance,
    euler_compose,
    euler_decompose,
    feature_record,
    orientation_vector,
    pose_pair_features,
    pose_parameters,
    read_feature_file,
    write_feature_file,
)
from headpose_forensics.pnp import HeadPose, flip_pose

seeds = st.integers(0, 2**32 - 1)


def rand_pose(rng):
    return HeadPose(so3.random_rotation(rng), rng.normal(size=3) * 50 + [0, 0, 500])


class TestPosePairFeatures:
    def test_identical_poses(self):
        p = HeadPose(np.eye(3), [1.0, 2.0, 3.0])
        assert np.array_equal(pose_pair_features(PosePair(p, p)).values, np.zeros(12))

    def test_translation_only(self):
        inner = HeadPose(np.eye(3), [0.0, 0.0, 500.0])
        every = HeadPose(np.eye(3), [1.0, 2.0, 503.0])
        v = pose_pair_features(PosePair(inner, every)).values
        assert np.array_equal(v, [0] * 9 + [1, 2, 3])

    def test_conflicting_pair_is_large(self):
        inner = HeadPose(so3.exp_map([0.02, -0.03, 0.01]), [0.0, 0.0, 500.0])
        every = flip_pose(inner)
        pair = PosePair(inner, every)
        assert pair.conflicting
        v = pose_pair_features(pair).values
        dR = v[:9].reshape(3, 3)
        assert np.allclose(np.diag(dR), [-2, -2, 0], atol=0.01)
        assert abs(v[11]) == pytest.approx(2 * 500.0)

    def test_non_finite(self):
        p = HeadPose(np.eye(3), [0, 0, np.inf])
        with pytest.raises(InvalidInputError):
            pose_pair_features(PosePair(p, HeadPose(np.eye(3), [0, 0, 1.0])))

    @settings(max_examples=50)
    @given(seeds)
    def test_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rand_pose(rng), rand_pose(rng)
        assert np.array_equal(
            pose_pair_features(PosePair(a, b)).values, -pose_pair_features(PosePair(b, a)).values
        )

    def test_names(self):
        assert FEATURE_NAMES[:3] == ("dR00", "dR01", "dR02") and FEATURE_NAMES[-1] == "dtz"

    def test_feature_vector_validation(self):
        with pytest.raises(InvalidInputError):
            FeatureVector(np.zeros(11))
        with pytest.raises(InvalidInputError):
            FeatureVector([np.nan] * 12)


class TestCosineDistance:
    def test_same(self):
        R = so3.random_rotation(np.random.default_rng(0))
        assert cosine_distance(R, R) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_distance(np.eye(3), so3.rot_x(np.pi / 2)) == pytest.approx(1.0, abs=1e-12)

    def test_flip_blind_at_identity(self):
        assert cosine_distance(np.eye(3), so3.RZ_PI) == 0.0

    @settings(max_examples=100)
    @given(seeds)
    def test_flip_identity(self, seed):
        R = so3.random_rotation(np.random.default_rng(seed))
        c = orientation_vector(R)[2]
        assert cosine_distance(R, R @ so3.RZ_PI) == pytest.approx(2 * (1 - c * c), abs=1e-12)

    @settings(max_examples=50)
    @given(seeds)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        A, B = so3.random_rotation(rng), so3.random_rotation(rng)
        d = cosine_distance(A, B)
        assert 0.0 <= d <= 2.0
        assert d == pytest.approx(cosine_distance(B, A), abs=1e-15)

    def test_opposite(self):
        assert cosine_distance(np.eye(3), so3.rot_x(np.pi)) == pytest.approx(2.0)


class TestEuler:
    def test_identity(self):
        assert euler_decompose(np.eye(3)) == (0.0, 0.0, 0.0)

    def test_pure_yaw(self):
        roll, pitch, yaw = euler_decompose(so3.rot_y(0.3))
        assert yaw == pytest.approx(0.3, abs=1e-12)
        assert abs(roll) < 1e-12 and abs(pitch) < 1e-12

    def test_round_trip(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            R = so3.random_rotation(rng)
            worst = max(worst, np.max(np.abs(euler_compose(*euler_decompose(R)) - R)))
        assert worst < 1e-9

    @pytest.mark.parametrize("sign", [1.0, -1.0])
    def test_gimbal(self, sign):
        R = euler_compose(0.4, 0.9, sign * np.pi / 2)
        (roll, pitch, yaw), degenerate = euler_decompose(R, return_degenerate=True)
        assert degenerate and roll == 0.0
        assert np.allclose(euler_compose(roll, pitch, yaw), R, atol=1e-9)

    def test_pose_parameters(self):
        inner = HeadPose(euler_compose(0.1, 0.2, 0.3), [1.0, 2.0, 3.0])
        every = HeadPose(np.eye(3), [4.0, 5.0, 6.0])
        p = pose_parameters(PosePair(inner, every))
        assert np.allclose(p, [0.1, 0.2, 0.3, 1, 2, 3, 0, 0, 0, 4, 5, 6])


class TestFeatureFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        recs = [
            feature_record(PosePair(rand_pose(rng), rand_pose(rng), f"f{i}"), lab, ("s1", "s2"))
            for i, lab in enumerate(["fake", "authentic", None])
        ]
        write_feature_file(recs, tmp_path / "f.csv")
        back = read_feature_file(tmp_path / "f.csv")
        assert [r.frame_id for r in back] == ["f0", "f1", "f2"]
        assert back[2].label is None and back[0].vector.subject_ids == ("s1", "s2")
        for a, b in zip(recs, back):
            assert np.array_equal(a.vector.values, b.vector.values)
            assert np.array_equal(a.parameters, b.parameters)
            assert a.cosine_distance == b.cosine_distance

    def test_header_checked(self, tmp_path):
        (tmp_path / "f.csv").write_text("frame_id,x\n")
        with pytest.raises(ParseError):
            read_feature_file(tmp_path / "f.csv")

    def test_bad_row_names_line(self, tmp_path):
        row = ["f0"] + ["0.0"] * (len(FEATURE_FILE_COLUMNS) - 1)
        row[15] = "maybe"
        (tmp_path / "f.csv").write_text(",".join(FEATURE_FILE_COLUMNS) + "\n" + ",".join(row) + "\n")
        with pytest.raises(ParseError, match=":2:"):
            read_feature_file(tmp_path / "f.csv")
