"""Acceptance suite: one test class per criterion.

Each class carries a ``criterion`` marker; the session summary prints one
PASS/FAIL line per criterion.  Thresholds marked frozen come from
``scripts/calibrate.py`` and are not tuned afterwards.
"""

import time

import numpy as np
import pytest

from headpose_forensics import classifier, pnp, so3
from headpose_forensics.evaluation import (
    auc_counts,
    conditional_fake_prob,
    flip_contingency,
    identity_leakage_experiment,
    roc_auc,
)
from headpose_forensics.face_camera import FaceModel3D, approximate_intrinsics, reprojection_cost
from headpose_forensics.features import cosine_distance, orientation_vector
from headpose_forensics.pnp import HeadPose, SolverConfig, flip_pose, pose_jacobian, pose_residuals
from headpose_forensics.synthetic import SceneSpec, generate_dataset, generate_model

from conftest import KKT_CHECKS, ROTATION_CHECKS, ROTATION_TOL, make_frame, rotation_error
from test_cli import output_files, run_pipeline

ROT_TOL = 1e-6
REL_T_TOL = 1e-6
N_ROUND_TRIP = 1000

# frozen from one calibration run (scripts/calibrate.py, seed 0, 200 frames x 2 sets)
FAR_TZ = (1500.0, 2500.0)
FAR_SIGMA = 2.0
N_FAR = 200
FLIP_COST_FACTOR = 1.35
FLIP_MEDIAN_MAX = 1.05

# frozen leakage configuration
LEAKAGE = dict(seed=0, n_frames=800, n_subjects=8, noise_sigma=0.5)
LEAKAGE_DEFORMATION = 10.0
LEAKAGE_MIN_GAP = 0.1
CHANCE_BAND = (0.4, 0.6)

OFF = SolverConfig(correction_enabled=False)
SETS = ("inner", "all")


def within_round_trip(pose, truth):
    rot = so3.geodesic_distance(pose.rotation, truth.rotation)
    rel = np.linalg.norm(pose.translation - truth.translation) / np.linalg.norm(truth.translation)
    return rot < ROT_TOL and rel < REL_T_TOL


@pytest.fixture(scope="module")
def far_frames(face_model):
    return [
        make_frame(face_model, index=i, sigma=FAR_SIGMA, n_frames=N_FAR, tz_range=FAR_TZ)
        for i in range(N_FAR)
    ]


@pytest.mark.criterion(1, "pose round trip on noiseless frames")
class TestPoseRoundTrip:
    def test_round_trip(self, face_model, cam):
        start = time.perf_counter()
        hits = 0
        for i in range(N_ROUND_TRIP):
            lm, truth = make_frame(face_model, index=i, n_frames=N_ROUND_TRIP, sigma=0.0)
            hits += within_round_trip(pnp.estimate_pose(face_model, "all", lm, cam), truth)
        elapsed = time.perf_counter() - start
        assert hits / N_ROUND_TRIP >= 0.999
        assert elapsed < 60.0


@pytest.mark.criterion(2, "planar flip identity")
class TestPlanarFlip:
    def test_equal_costs(self, cam):
        rng = np.random.default_rng(0)
        pts = np.column_stack((rng.uniform(-70, 70, (68, 2)), np.zeros(68)))
        model = FaceModel3D(pts, range(27, 36), range(68))
        for _ in range(1000):
            pose = HeadPose(
                so3.random_rotation(rng),
                [rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(400, 900)],
            )
            observed = rng.uniform(0, [1280, 720], (68, 2))
            a = reprojection_cost(model, "all", pose, cam, observed)
            b = reprojection_cost(model, "all", flip_pose(pose), cam, observed)
            assert b == pytest.approx(a, rel=1e-9)


@pytest.mark.criterion(3, "flipped basin of the shipped model")
class TestNearPlanarTwoMinima:
    def test_flipped_minimum(self, face_model, far_frames):
        cam = approximate_intrinsics(1280, 720)
        ratios = []
        for lm, truth in far_frames:
            for which in SETS:
                front = pnp.estimate_pose(face_model, which, lm, cam)
                back = pnp.lm_refine(face_model, which, lm, cam, flip_pose(truth), OFF)
                assert back.translation[2] < 0
                ratios.append(back.cost / front.cost)
        ratios = np.array(ratios)
        assert np.all(ratios <= FLIP_COST_FACTOR)
        assert np.all(ratios >= 1 / FLIP_COST_FACTOR)
        assert np.median(ratios) <= FLIP_MEDIAN_MAX


@pytest.mark.criterion(4, "flip correction contract")
class TestCorrection:
    def test_adversarial_noisy(self, face_model, far_frames):
        cam = approximate_intrinsics(1280, 720)
        for lm, truth in far_frames:
            for which in SETS:
                pose = pnp.estimate_pose(face_model, which, lm, cam, init_pose=flip_pose(truth))
                assert pose.translation[2] > 0 and not pose.could_not_correct

    def test_adversarial_noiseless(self, face_model):
        cam = approximate_intrinsics(1280, 720)
        for i in range(N_FAR):
            lm, truth = make_frame(face_model, index=i, n_frames=N_FAR, tz_range=FAR_TZ)
            for which in SETS:
                pose = pnp.estimate_pose(face_model, which, lm, cam, init_pose=flip_pose(truth))
                assert pose.translation[2] > 0
                assert within_round_trip(pose, truth)


@pytest.mark.criterion(5, "analytic Jacobian")
class TestJacobian:
    def test_central_differences(self, face_model, cam):
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(100):
            R = so3.random_rotation(rng)
            t = np.array([rng.uniform(-80, 80), rng.uniform(-60, 60), rng.uniform(400, 1500)])
            obs = rng.uniform(0, [1280, 720], (68, 2))
            J = pose_jacobian(face_model, "all", cam, R, t)
            num = np.empty_like(J)
            for k in range(6):
                d = np.zeros(6)
                d[k] = h
                rp = pose_residuals(face_model, "all", obs, cam, so3.exp_map(d[:3]) @ R, t + d[3:])
                rm = pose_residuals(face_model, "all", obs, cam, so3.exp_map(-d[:3]) @ R, t - d[3:])
                num[:, k] = (rp - rm) / (2 * h)
            assert np.linalg.norm(J - num) / np.linalg.norm(num) < 1e-5


@pytest.mark.criterion(6, "rotation validity of all solver outputs")
class TestRotationValidity:
    def test_sweep(self, face_model, cam):
        before = ROTATION_CHECKS["count"]
        for seed in range(50):
            lm, truth = make_frame(face_model, seed=seed, sigma=3.0)
            rng = np.random.default_rng(seed)
            starts = [None, flip_pose(truth), HeadPose(so3.random_rotation(rng), truth.translation)]
            for which in SETS:
                for init in starts:
                    for config in (None, OFF):
                        pose = pnp.estimate_pose(face_model, which, lm, cam, config, init)
                        assert rotation_error(pose.rotation) <= ROTATION_TOL
        assert ROTATION_CHECKS["count"] - before >= 50 * 2 * 3 * 2

    def test_suite_wide(self):
        # every solver output in the session passed the conftest wrapper
        assert ROTATION_CHECKS["count"] > 0
        assert ROTATION_CHECKS["worst"] <= ROTATION_TOL


@pytest.mark.criterion(7, "cosine distance identities")
class TestCosineIdentities:
    def test_identities(self):
        rng = np.random.default_rng(7)
        assert cosine_distance(np.eye(3), so3.rot_x(np.pi / 2)) == pytest.approx(1.0, abs=1e-12)
        for _ in range(1000):
            R = so3.random_rotation(rng)
            c = orientation_vector(R)[2]
            assert abs(cosine_distance(R, R)) <= 1e-12
            assert abs(cosine_distance(R, R @ so3.RZ_PI) - 2 * (1 - c * c)) <= 1e-12


@pytest.mark.criterion(8, "AUC equals brute-force pair counting")
class TestAucOracle:
    def test_random_instances(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(2, 1001))
            y = rng.integers(0, 2, n)
            y[:2] = (0, 1)
            # coarse grid forces ties
            s = rng.integers(0, 25, n) / 4.0
            pos, neg = s[y == 1], s[y == 0]
            diff = pos[:, None] - neg[None, :]
            num = 2 * int(np.sum(diff > 0)) + int(np.sum(diff == 0))
            assert auc_counts(s, y) == (num, 2 * len(pos) * len(neg))
            assert roc_auc(s, y).auc == num / (2 * len(pos) * len(neg))

    def test_hand_case(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc == 0.75


@pytest.mark.criterion(9, "SVM correctness")
class TestSvm:
    def test_two_point_closed_form(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        y = np.array([-1, 1])
        gamma = 0.5
        C = 10.0
        m = classifier.train(X, y, C=C, gamma=gamma)
        k = np.exp(-gamma * 2.0)
        alpha = 1.0 / (1.0 - k)
        assert alpha < C
        coef = dict(zip(m.support_indices, m.dual_coef))
        assert coef[0] == pytest.approx(-alpha, abs=1e-6)
        assert coef[1] == pytest.approx(alpha, abs=1e-6)
        assert m.bias == pytest.approx(0.0, abs=1e-6)

    def test_xor(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([-1, -1, 1, 1])
        m = classifier.train(X, y, C=100.0, gamma=2.0)
        assert np.array_equal(np.sign(classifier.decision_values(m, X)), y)

    def test_suite_wide_kkt(self):
        assert KKT_CHECKS["count"] > 0
        assert KKT_CHECKS["worst"] <= classifier.KKT_TOL


@pytest.mark.criterion(10, "identity leakage direction")
class TestLeakage:
    def run(self, tmp_path, deformation):
        spec = SceneSpec(subject_deformation=deformation, **LEAKAGE)
        manifest = generate_dataset(spec, tmp_path)
        return identity_leakage_experiment(
            manifest, model=generate_model(LEAKAGE["seed"]), seed=LEAKAGE["seed"]
        )

    def test_strong_deformation_gap(self, tmp_path):
        result = self.run(tmp_path, LEAKAGE_DEFORMATION)
        assert result.gap >= LEAKAGE_MIN_GAP

    def test_null_is_chance(self, tmp_path):
        result = self.run(tmp_path, 0.0)
        lo, hi = CHANCE_BAND
        assert lo <= result.auc_overlapping <= hi
        assert lo <= result.auc_disjoint <= hi


@pytest.mark.criterion(11, "flip tables on hand-counted fixtures")
class TestTables:
    # (inner flipped, all flipped), label
    FRAMES = [
        ((True, True), "fake"),
        ((True, False), "fake"),
        ((False, True), "authentic"),
        ((False, False), "authentic"),
    ]

    def test_contingency(self):
        c = flip_contingency([flags for flags, _ in self.FRAMES])
        assert (c.both, c.inner_only, c.all_only, c.neither) == (1, 1, 1, 1)
        assert c.table() == [["flipped", 0.25, 0.25], ["correct", 0.25, 0.25]]
        assert c.at_least_one == 0.75 and c.conflicting == 0.5

    def test_skewed_contingency(self):
        flags = [(True, True), (True, True), (True, True), (False, True)]
        c = flip_contingency(flags)
        assert c.table() == [["flipped", 0.75, 0.0], ["correct", 0.25, 0.0]]

    def test_conditional(self):
        assert conditional_fake_prob(self.FRAMES) == (0.5, 0.5)
        frames = [((True, False), "fake"), ((False, True), "fake"),
                  ((True, True), "authentic"), ((False, False), "fake")]
        assert conditional_fake_prob(frames) == (1.0, 0.5)
        agree = [((True, True), "fake")] * 3 + [((False, False), "authentic")]
        assert conditional_fake_prob(agree) == (None, 0.75)


@pytest.mark.criterion(12, "byte-identical CLI reruns")
class TestDeterminism:
    def test_pipeline(self, tmp_path):
        a = run_pipeline(tmp_path / "a", seed=11)
        b = run_pipeline(tmp_path / "b", seed=11)
        files = output_files(a)
        assert files == output_files(b) and len(files) > 10
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
