"""Ground-truth synthetic datasets for the pose and detection pipeline.

Landmark numbering follows the common 68-point layout: 0-16 jaw, 17-26
brows, 27-35 nose, 36-47 eyes, 48-67 mouth.  Model axes: U to the image
right, V up, W out of the face (the nose points towards +W).  A camera-facing
head therefore has pitch near pi under the ``Rz(roll) Ry(yaw) Rx(pitch)``
composition used here.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import so3
from .errors import ProjectionSingularityError, SpecInvalidError
from .face_camera import (
    FaceModel3D,
    LandmarkSet2D,
    approximate_intrinsics,
    project,
    transform,
    write_landmarks,
    write_model,
)
from .pnp import HeadPose

log = logging.getLogger(__name__)

JAW = tuple(range(0, 17))
BROWS = tuple(range(17, 27))
NOSE = tuple(range(27, 36))
NOSE_TIP = 30
INNER_INDICES = BROWS + NOSE + (39, 42)
ALL_INDICES = JAW + INNER_INDICES
OUTLINE = JAW + BROWS

MAX_RESAMPLES = 1000


def _shell_depth(x, y):
    # shallow ellipsoidal cap: sides and chin recede from the face plane
    return -16.0 * (x / 70.0) ** 2 - 5.0 * (y / 80.0) ** 2


def _template():
    pts = np.zeros((68, 3))
    phi = np.linspace(np.pi - 0.2, 2 * np.pi + 0.2, 17)
    pts[JAW, 0] = 70.0 * np.cos(phi)
    pts[JAW, 1] = 15.0 + 80.0 * np.sin(phi)

    bx = np.linspace(-55.0, -15.0, 5)
    for k, x in enumerate(bx):
        y = 40.0 + 8.0 * np.sin(np.pi * k / 4)
        pts[17 + k, :2] = (x, y)
        pts[26 - k, :2] = (-x, y)

    pts[27:31, 0] = 0.0
    pts[27:31, 1] = (35.0, 25.0, 15.0, 5.0)
    pts[31:36, 0] = (-15.0, -8.0, 0.0, 8.0, 15.0)
    pts[31:36, 1] = -5.0

    for start, cx in ((36, -32.0), (42, 32.0)):
        ang = np.linspace(np.pi, -np.pi, 6, endpoint=False)
        pts[start : start + 6, 0] = cx + 14.0 * np.cos(ang) * (1 if cx > 0 else -1)
        pts[start : start + 6, 1] = 30.0 + 5.0 * np.sin(ang)

    ang = np.linspace(np.pi, -np.pi, 12, endpoint=False)
    pts[48:60, 0] = 25.0 * np.cos(ang)
    pts[48:60, 1] = -30.0 + 11.0 * np.sin(ang)
    ang = np.linspace(np.pi, -np.pi, 8, endpoint=False)
    pts[60:68, 0] = 15.0 * np.cos(ang)
    pts[60:68, 1] = -30.0 + 4.0 * np.sin(ang)

    pts[:, 2] = _shell_depth(pts[:, 0], pts[:, 1])
    pts[BROWS, 2] += 5.0
    pts[27:31, 2] = (10.7, 18.7, 26.7, 40.0)
    pts[31:36, 2] = (16.0, 21.3, 25.3, 21.3, 16.0)
    pts[48:68, 2] += 2.0
    return pts


def generate_model(seed=0, jitter=1.0, name=None):
    """Procedural 68-landmark face, centred at the origin, deterministic per seed."""
    rng = np.random.default_rng([int(seed), 0x6D6F64])
    pts = _template() * rng.uniform(0.95, 1.05)
    pts = pts + np.clip(rng.normal(scale=jitter, size=pts.shape), -2 * jitter, 2 * jitter)
    pts -= pts.mean(axis=0)
    return FaceModel3D(
        points=pts,
        inner_indices=INNER_INDICES,
        all_indices=ALL_INDICES,
        name=name or f"procedural-{seed}",
    )


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_frames: int = 200
    n_subjects: int = 8
    roll_range: tuple = (-0.15, 0.15)
    pitch_range: tuple = (np.pi - 0.25, np.pi + 0.25)
    yaw_range: tuple = (-0.5, 0.5)
    tx_range: tuple = (-60.0, 60.0)
    ty_range: tuple = (-40.0, 40.0)
    tz_range: tuple = (450.0, 700.0)
    noise_sigma: float = 0.5
    swap_perturbation: float = 0.0
    subject_deformation: float = 0.0
    image_width: int = 1280
    image_height: int = 720
    balanced: bool = True

    def __post_init__(self):
        for name in ("roll_range", "pitch_range", "yaw_range", "tx_range", "ty_range", "tz_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise SpecInvalidError(f"{name}: lower bound exceeds upper bound")
            object.__setattr__(self, name, (lo, hi))
        if self.noise_sigma < 0 or self.swap_perturbation < 0 or self.subject_deformation < 0:
            raise SpecInvalidError("noise and perturbation amplitudes must be non-negative")
        if self.n_frames < 1 or self.n_subjects < 1:
            raise SpecInvalidError("need at least one frame and one subject")
        if self.balanced and self.n_frames % 2:
            raise SpecInvalidError("balanced output needs an even frame count")
        if self.image_width <= 0 or self.image_height <= 0:
            raise SpecInvalidError("image dimensions must be positive")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [float(x) for x in v]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def euler_rotation(roll, pitch, yaw):
    return so3.rot_z(roll) @ so3.rot_y(yaw) @ so3.rot_x(pitch)


def sample_pose(spec, rng, model=None):
    """Uniform Euler angles and translation; resampled until every depth is positive.

    Without a model, depth positivity is checked for a 150 mm bounding sphere.
    """
    for _ in range(MAX_RESAMPLES):
        roll = rng.uniform(*spec.roll_range)
        pitch = rng.uniform(*spec.pitch_range)
        yaw = rng.uniform(*spec.yaw_range)
        t = np.array(
            [rng.uniform(*spec.tx_range), rng.uniform(*spec.ty_range), rng.uniform(*spec.tz_range)]
        )
        R = euler_rotation(roll, pitch, yaw)
        if model is None:
            ok = t[2] > 150.0
        else:
            ok = bool(np.all(transform(model, range(68), (R, t))[:, 2] > 0))
        if ok:
            return HeadPose(R, t)
    raise SpecInvalidError("pose ranges never keep all landmark depths positive")


def _smooth_field(points, coeffs):
    """Low-order polynomial displacement field evaluated at ``points``."""
    scale = np.maximum(np.ptp(points[:, :2], axis=0) / 2.0, 1e-9)
    u, v = (points[:, 0] / scale[0]), (points[:, 1] / scale[1])
    basis = np.column_stack((u, v, u * u, u * v, v * v))
    return basis @ coeffs


def _scaled_field(points, rng, amplitude, rows=None):
    coeffs = rng.normal(size=(5, 3))
    if amplitude == 0:
        return np.zeros((len(points), 3))
    field = _smooth_field(points, coeffs)
    ref = field if rows is None else field[list(rows)]
    peak = np.max(np.linalg.norm(ref, axis=1))
    return field * (amplitude / peak) if peak > 0 else field


def subject_deformation(model, seed, subject, amplitude):
    """Per-subject smooth 3D displacement of all landmarks, max norm ``amplitude``."""
    rng = np.random.default_rng([int(seed), 0x737562, int(subject)])
    return _scaled_field(model.points, rng, amplitude)


def donor_deformation(model, seed, subject, amplitude):
    """Shape of the source face swapped into a fake subject's frames."""
    rng = np.random.default_rng([int(seed), 0x646F6E, int(subject)])
    return _scaled_field(model.points, rng, amplitude)


def render_frame(model, deformation, pose, cam, spec, fake, rng, donor=None):
    """Project a (possibly face-swapped) subject under ``pose``.

    Noise is drawn before the swap field so that authentic and fake renderings
    sharing a generator state differ only on the inner landmarks.
    """
    pts = model.points + deformation
    noise = rng.normal(scale=1.0, size=(68, 2)) * spec.noise_sigma
    inner = list(model.inner_indices)
    if fake:
        if donor is not None:
            pts[inner] = model.points[inner] + donor[inner]
        swap = _scaled_field(model.points, rng, spec.swap_perturbation, rows=inner)
        pts[inner] += swap[inner]
    shaped = FaceModel3D(pts, model.inner_indices, model.all_indices, model.name)
    xy = project(shaped, range(68), pose, cam) + noise
    truth = {
        "rotation": [float(v) for v in pose.rotation.ravel()],
        "translation": [float(v) for v in pose.translation],
        "fake": bool(fake),
    }
    return LandmarkSet2D(xy, cam_width(cam), cam_height(cam)), truth


def cam_width(cam):
    return int(round(2 * cam.cx))


def cam_height(cam):
    return int(round(2 * cam.cy))


def frame_rng(seed, frame_index):
    return np.random.default_rng([int(seed), 0x66726D, int(frame_index)])


def subject_token(subject):
    return f"subject-{subject:03d}"


def donor_token(subject):
    return f"donor-{subject:03d}"


def generate_dataset(spec, out_dir, model=None):
    """Write model, landmark files, ground truth and manifest under ``out_dir``.

    Frame ``i`` shows subject ``i % n_subjects``; in balanced mode odd frames are
    fake, so with an even subject count every subject appears in one class only.
    Fake frames carry both the target subject and its donor identity.
    """
    from .evaluation import DatasetManifest, ManifestRecord, write_manifest

    out = Path(out_dir)
    try:
        (out / "landmarks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    model = model or generate_model(spec.seed)
    write_model(model, out / "model.csv")
    cam = approximate_intrinsics(spec.image_width, spec.image_height)
    deform = [
        subject_deformation(model, spec.seed, s, spec.subject_deformation)
        for s in range(spec.n_subjects)
    ]
    donors = [
        donor_deformation(model, spec.seed, s, spec.subject_deformation)
        for s in range(spec.n_subjects)
    ]

    records = []
    truths = []
    for i in range(spec.n_frames):
        rng = frame_rng(spec.seed, i)
        subject = i % spec.n_subjects
        fake = bool(i % 2) if spec.balanced else bool(rng.integers(2))
        for attempt in range(MAX_RESAMPLES):
            pose = sample_pose(spec, rng, model)
            try:
                landmarks, truth = render_frame(
                    model, deform[subject], pose, cam, spec, fake, rng, donors[subject]
                )
                break
            except ProjectionSingularityError:
                log.debug("frame %d: singular projection, resampling", i)
        else:
            raise SpecInvalidError(f"frame {i}: could not render a valid projection")
        frame_id = f"frame-{i:05d}"
        rel = f"landmarks/{frame_id}.csv"
        write_landmarks(landmarks, out / rel)
        subjects = (subject_token(subject),)
        if fake:
            subjects += (donor_token(subject),)
        records.append(
            ManifestRecord(
                frame_id=frame_id,
                label="fake" if fake else "authentic",
                subject_ids=subjects,
                landmarks=rel,
                image_width=spec.image_width,
                image_height=spec.image_height,
            )
        )
        truths.append({"frame_id": frame_id, "subject": subject, **truth})

    manifest = DatasetManifest(tuple(records), base_dir=out)
    write_manifest(manifest, out / "manifest.jsonl")
    with open(out / "ground_truth.jsonl", "w") as fh:
        for t in truths:
            fh.write(json.dumps(t, sort_keys=True) + "\n")
    (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
