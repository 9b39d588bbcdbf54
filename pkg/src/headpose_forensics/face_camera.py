"""Reference face model, pinhole camera, projection and reprojection cost.

Conventions: model coordinates are millimetres with the face centred at the
origin; translations share those units. The camera looks along +z, so a
physically plausible pose puts every transformed landmark at positive depth.
"""

import csv
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError, ProjectionSingularityError

N_LANDMARKS = 68
MODEL_ENV_VAR = "HEADPOSE_FORENSICS_MODEL"


def _fmt(v):
    return repr(float(v))


@dataclass(frozen=True)
class FaceModel3D:
    points: np.ndarray
    inner_indices: tuple
    all_indices: tuple
    name: str = "face"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.shape != (N_LANDMARKS, 3):
            raise InvalidInputError(f"expected {N_LANDMARKS}x3 model points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("model points must be finite")
        inner = tuple(int(i) for i in self.inner_indices)
        every = tuple(int(i) for i in self.all_indices)
        for label, idx in (("inner", inner), ("all", every)):
            if len(idx) < 6:
                raise InvalidInputError(f"{label}_indices needs at least 6 entries")
            if len(set(idx)) != len(idx):
                raise InvalidInputError(f"{label}_indices has duplicates")
            bad = [i for i in idx if not 0 <= i < N_LANDMARKS]
            if bad:
                raise InvalidInputError(f"{label}_indices: index out of range: {bad[0]}")
        if not set(inner) < set(every):
            raise InvalidInputError("inner_indices must be a proper subset of all_indices")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "inner_indices", inner)
        object.__setattr__(self, "all_indices", every)

    def indices(self, which):
        """Index tuple for ``"inner"`` or ``"all"``; sequences pass through."""
        if isinstance(which, str):
            if which == "inner":
                return self.inner_indices
            if which == "all":
                return self.all_indices
            raise InvalidInputError(f"unknown index set {which!r}")
        return tuple(int(i) for i in which)

    @property
    def centroid(self):
        return self.points.mean(axis=0)

    @property
    def xy_extent(self):
        p = self.points[list(self.all_indices)]
        return float(max(np.ptp(p[:, 0]), np.ptp(p[:, 1])))

    @property
    def planarity(self):
        """Mean |W| over the whole-face set divided by the x-y extent."""
        p = self.points[list(self.all_indices)]
        return float(np.mean(np.abs(p[:, 2])) / self.xy_extent)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class LandmarkSet2D:
    points: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.shape != (N_LANDMARKS, 2):
            raise InvalidInputError(f"expected {N_LANDMARKS}x2 landmarks, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


def approximate_intrinsics(image_width, image_height):
    """Principal point at the image centre, both focal lengths equal to the width."""
    if not image_width > 0 or not image_height > 0:
        raise InvalidInputError(
            f"image dimensions must be positive, got {image_width}x{image_height}"
        )
    w = float(image_width)
    return CameraIntrinsics(fx=w, fy=w, cx=w / 2.0, cy=float(image_height) / 2.0)


def _pose_parts(pose):
    if hasattr(pose, "rotation"):
        return np.asarray(pose.rotation, dtype=float), np.asarray(pose.translation, dtype=float)
    R, t = pose
    return np.asarray(R, dtype=float), np.asarray(t, dtype=float)


def transform(model, indices, pose):
    """Camera-frame coordinates ``R @ P + t`` of the selected model points."""
    R, t = _pose_parts(pose)
    P = model.points[list(model.indices(indices))]
    return P @ R.T + t


def project_camera_points(X, cam):
    X = np.asarray(X, dtype=float)
    Z = X[:, 2]
    if np.any(Z == 0.0):
        bad = int(np.flatnonzero(Z == 0.0)[0])
        raise ProjectionSingularityError(f"point {bad} has zero depth")
    return np.column_stack((X[:, 0] / Z * cam.fx + cam.cx, X[:, 1] / Z * cam.fy + cam.cy))


def project(model, indices, pose, cam):
    """Pixel coordinates of the selected model points under ``pose``.

    ``pose`` is a :class:`~headpose_forensics.pnp.HeadPose` or an ``(R, t)`` pair.
    """
    return project_camera_points(transform(model, indices, pose), cam)


def reprojection_cost(model, indices, pose, cam, observed):
    idx = list(model.indices(indices))
    if not idx:
        raise InvalidInputError("index set is empty")
    obs = observed.points if hasattr(observed, "points") else np.asarray(observed, dtype=float)
    diff = project(model, idx, pose, cam) - obs[idx]
    return float(np.sum(diff * diff))


def read_index_config(path):
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot parse index configuration: {exc}", path) from exc
    for key in ("inner_indices", "all_indices"):
        if key not in cfg:
            raise ParseError(f"missing key {key!r}", path)
        for i in cfg[key]:
            if not isinstance(i, int) or not 0 <= i < N_LANDMARKS:
                raise ParseError(f"{key}: index out of range: {i}", path)
    return cfg


def sidecar_path(model_path):
    return Path(model_path).with_suffix(".json")


def load_model(path, config_path=None):
    """Read a model CSV (``index,U,V,W`` rows) plus its JSON index sidecar."""
    path = Path(path)
    rows = _read_indexed_rows(path, ("index", "U", "V", "W"))
    cfg = read_index_config(config_path or sidecar_path(path))
    try:
        return FaceModel3D(
            points=rows,
            inner_indices=cfg["inner_indices"],
            all_indices=cfg["all_indices"],
            name=cfg.get("name", path.stem),
        )
    except InvalidInputError as exc:
        raise ParseError(str(exc), config_path or sidecar_path(path)) from exc


def default_model_path():
    """Model file named by ``$HEADPOSE_FORENSICS_MODEL``, else the bundled model."""
    override = os.environ.get(MODEL_ENV_VAR)
    if override:
        return Path(override)
    return Path(str(resources.files("headpose_forensics") / "data" / "face_model.csv"))


def load_default_model():
    return load_model(default_model_path())


def load_landmarks(path, image_width, image_height):
    """Read a landmark CSV with header ``index,x,y`` and 68 data rows."""
    pts = _read_indexed_rows(Path(path), ("index", "x", "y"), header_required=True)
    return LandmarkSet2D(pts, int(image_width), int(image_height))


def _read_indexed_rows(path, columns, header_required=False):
    ncol = len(columns)
    with open(path, newline="") as fh:
        rows = [(n, r) for n, r in enumerate(csv.reader(fh), start=1) if r]
    if rows and [c.strip() for c in rows[0][1]] == list(columns):
        rows = rows[1:]
    elif header_required:
        raise ParseError(f"expected header {','.join(columns)}", path, 1)
    if len(rows) != N_LANDMARKS:
        raise ParseError(f"expected {N_LANDMARKS} rows, found {len(rows)}", path)
    out = np.empty((N_LANDMARKS, ncol - 1))
    seen = set()
    for lineno, row in rows:
        if len(row) != ncol:
            raise ParseError(f"expected {ncol} fields, found {len(row)}", path, lineno)
        try:
            idx = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", path, lineno) from exc
        if not 0 <= idx < N_LANDMARKS:
            raise ParseError(f"index out of range: {idx}", path, lineno)
        if idx in seen:
            raise ParseError(f"duplicate index {idx}", path, lineno)
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite coordinate", path, lineno)
        seen.add(idx)
        out[idx] = vals
    return out


def write_model(model, path):
    """Write ``model`` as CSV plus JSON sidecar next to it; returns both paths."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("index,U,V,W\n")
        for i, (u, v, w) in enumerate(model.points):
            fh.write(f"{i},{_fmt(u)},{_fmt(v)},{_fmt(w)}\n")
    side = sidecar_path(path)
    side.write_text(
        json.dumps(
            {
                "name": model.name,
                "inner_indices": list(model.inner_indices),
                "all_indices": list(model.all_indices),
            },
            indent=2,
        )
        + "\n"
    )
    return path, side


def write_landmarks(landmarks, path):
    pts = landmarks.points if hasattr(landmarks, "points") else landmarks
    with open(path, "w", newline="") as fh:
        fh.write("index,x,y\n")
        for i, (x, y) in enumerate(pts):
            fh.write(f"{i},{_fmt(x)},{_fmt(y)}\n")
