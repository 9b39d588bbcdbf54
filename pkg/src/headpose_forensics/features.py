"""Pose-pair features for the classifier and orientation diagnostics."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import so3
from .errors import InvalidInputError, ParseError

FEATURE_NAMES = tuple(f"dR{i}{j}" for i in range(3) for j in range(3)) + ("dtx", "dty", "dtz")
N_FEATURES = len(FEATURE_NAMES)
GIMBAL_TOL = 1e-6
_W = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class PosePair:
    inner: object
    all: object
    frame_id: str = ""

    @property
    def conflicting(self):
        return self.inner.flipped != self.all.flipped


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: str = None
    subject_ids: tuple = ()
    frame_id: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (N_FEATURES,):
            raise InvalidInputError(f"expected {N_FEATURES} feature values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("feature values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def pose_pair_features(pair, label=None, subject_ids=()):
    """Row-major ``R_all - R_inner`` followed by ``t_all - t_inner``."""
    Ra, ta = pair.all.rotation, pair.all.translation
    Rc, tc = pair.inner.rotation, pair.inner.translation
    values = np.concatenate(((Ra - Rc).ravel(), ta - tc))
    if not np.all(np.isfinite(values)):
        raise InvalidInputError(f"non-finite pose entries in frame {pair.frame_id!r}")
    return FeatureVector(values, label, tuple(subject_ids), pair.frame_id)


def orientation_vector(R):
    """Head orientation ``R.T @ w`` with ``w = (0, 0, 1)``."""
    return np.asarray(R).T @ _W


def cosine_distance(R_a, R_c):
    a = orientation_vector(R_a)
    c = orientation_vector(R_c)
    d = 1.0 - float(a @ c) / (np.linalg.norm(a) * np.linalg.norm(c))
    return min(max(d, 0.0), 2.0)


def euler_decompose(R, return_degenerate=False):
    """Angles ``(roll, pitch, yaw)`` with ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)``.

    Within 1e-6 of yaw = +-pi/2 the decomposition is degenerate; roll is then
    fixed to zero and the remaining rotation is absorbed into pitch.
    """
    R = np.asarray(R, dtype=float)
    s = -R[2, 0]
    yaw = float(np.arctan2(s, np.hypot(R[0, 0], R[1, 0])))
    degenerate = abs(abs(yaw) - np.pi / 2) < GIMBAL_TOL
    if degenerate:
        roll = 0.0
        # Ry(+-pi/2) Rx(p): R[0,1] = sin(yaw) sin(p), R[1,1] = cos(p)
        pitch = float(np.arctan2(np.sign(s) * R[0, 1], R[1, 1]))
    else:
        roll = float(np.arctan2(R[1, 0], R[0, 0]))
        pitch = float(np.arctan2(R[2, 1], R[2, 2]))
    angles = (roll, pitch, yaw)
    return (angles, degenerate) if return_degenerate else angles


def euler_compose(roll, pitch, yaw):
    return so3.rot_z(roll) @ so3.rot_y(yaw) @ so3.rot_x(pitch)


POSE_PARAMETER_NAMES = tuple(
    f"{which}_{p}" for which in ("inner", "all") for p in ("roll", "pitch", "yaw", "tx", "ty", "tz")
)


def pose_parameters(pair):
    """The twelve underlying parameters: Euler angles and translation of both poses."""
    out = []
    for pose in (pair.inner, pair.all):
        out.extend(euler_decompose(pose.rotation))
        out.extend(float(v) for v in pose.translation)
    return np.array(out)


FEATURE_FILE_COLUMNS = (
    ("frame_id",)
    + FEATURE_NAMES
    + ("cosine_distance", "inner_flipped", "all_flipped", "label", "subject_ids")
    + POSE_PARAMETER_NAMES
)


@dataclass(frozen=True)
class FeatureRecord:
    """One row of the feature file: classifier input plus diagnostics."""

    vector: FeatureVector
    cosine_distance: float
    inner_flipped: bool
    all_flipped: bool
    parameters: np.ndarray

    @property
    def frame_id(self):
        return self.vector.frame_id

    @property
    def label(self):
        return self.vector.label

    @property
    def conflicting(self):
        return self.inner_flipped != self.all_flipped


def feature_record(pair, label=None, subject_ids=()):
    return FeatureRecord(
        vector=pose_pair_features(pair, label, subject_ids),
        cosine_distance=cosine_distance(pair.all.rotation, pair.inner.rotation),
        inner_flipped=bool(pair.inner.flipped),
        all_flipped=bool(pair.all.flipped),
        parameters=pose_parameters(pair),
    )


def write_feature_file(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(FEATURE_FILE_COLUMNS) + "\n")
        for r in records:
            row = [r.frame_id]
            row += [repr(float(v)) for v in r.vector.values]
            row += [repr(float(r.cosine_distance)), str(int(r.inner_flipped))]
            row += [str(int(r.all_flipped)), r.label or "", ";".join(r.vector.subject_ids)]
            row += [repr(float(v)) for v in r.parameters]
            fh.write(",".join(row) + "\n")


def read_feature_file(path):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FEATURE_FILE_COLUMNS:
            raise ParseError("unexpected feature file header", path, 1)
        out = []
        nf = 1 + N_FEATURES
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FEATURE_FILE_COLUMNS):
                raise ParseError(
                    f"expected {len(FEATURE_FILE_COLUMNS)} fields, found {len(row)}", path, lineno
                )
            try:
                label = row[nf + 3] or None
                if label not in (None, "authentic", "fake"):
                    raise ValueError(f"unknown label {label!r}")
                subjects = tuple(s for s in row[nf + 4].split(";") if s)
                vec = FeatureVector([float(v) for v in row[1:nf]], label, subjects, row[0])
                out.append(
                    FeatureRecord(
                        vector=vec,
                        cosine_distance=float(row[nf]),
                        inner_flipped=_flag(row[nf + 1]),
                        all_flipped=_flag(row[nf + 2]),
                        parameters=np.array([float(v) for v in row[nf + 5 :]]),
                    )
                )
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from exc
    return out


def _flag(text):
    if text not in ("0", "1"):
        raise ValueError(f"flag must be 0 or 1, got {text!r}")
    return text == "1"
