"""Calibration runs behind the frozen thresholds in tests/test_acceptance.py.

Run once with ``python scripts/calibrate.py``; the printed numbers are the
source of the constants recorded in the acceptance tests.
"""

import tempfile

import numpy as np

from headpose_forensics import evaluation, so3
from headpose_forensics.face_camera import approximate_intrinsics, load_default_model
from headpose_forensics.pnp import SolverConfig, estimate_pose, flip_pose, lm_refine
from headpose_forensics.synthetic import (
    SceneSpec,
    frame_rng,
    generate_dataset,
    generate_model,
    render_frame,
    sample_pose,
)

FAR_SCENE = dict(tz_range=(1500.0, 2500.0), noise_sigma=2.0)


def flipped_cost_ratios(seed=0, n=200, **scene):
    model = load_default_model()
    spec = SceneSpec(seed=seed, n_frames=n, **scene)
    cam = approximate_intrinsics(spec.image_width, spec.image_height)
    off = SolverConfig(correction_enabled=False)
    ratios, tz = [], []
    for i in range(n):
        rng = frame_rng(seed, i)
        truth = sample_pose(spec, rng, model)
        lm, _ = render_frame(model, np.zeros((68, 3)), truth, cam, spec, False, rng)
        for which in ("inner", "all"):
            front = estimate_pose(model, which, lm, cam)
            back = lm_refine(model, which, lm, cam, flip_pose(truth), off)
            ratios.append(back.cost / front.cost)
            tz.append(back.translation[2])
    return np.array(ratios), np.array(tz)


def rotation_errors(seed=0, n=1000, sigma=0.5):
    model = load_default_model()
    spec = SceneSpec(seed=seed, n_frames=n, noise_sigma=sigma)
    cam = approximate_intrinsics(spec.image_width, spec.image_height)
    err = []
    for i in range(n):
        rng = frame_rng(seed, i)
        truth = sample_pose(spec, rng, model)
        lm, _ = render_frame(model, np.zeros((68, 3)), truth, cam, spec, False, rng)
        pose = estimate_pose(model, "all", lm, cam)
        err.append(so3.geodesic_distance(pose.rotation, truth.rotation))
    return np.degrees(err)


def leakage(deformation, seed=0, n=800):
    spec = SceneSpec(seed=seed, n_frames=n, subject_deformation=deformation)
    with tempfile.TemporaryDirectory() as d:
        manifest = generate_dataset(spec, d)
        return evaluation.identity_leakage_experiment(manifest, model=generate_model(seed), seed=seed)


if __name__ == "__main__":
    r, tz = flipped_cost_ratios(**FAR_SCENE)
    print(f"flipped/frontal cost ratio: median {np.median(r):.4f} min {r.min():.4f} "
          f"max {r.max():.4f}; flipped t_z<0 in {np.mean(tz < 0):.3f}")
    r0, _ = flipped_cost_ratios(n=40)
    print(f"default scene ratio: median {np.median(r0):.2f} max {r0.max():.2f}")
    e = rotation_errors()
    print(f"sigma 0.5 rotation error (deg): median {np.median(e):.3f} p95 {np.percentile(e, 95):.3f}")
    for s in range(6):
        print(f"seed {s}: strong {leakage(10.0, s)} none {leakage(0.0, s)}")
